"""End-to-end toy pipeline: KG -> embeddings -> questions -> QA model -> report.

Every stage is seeded from one integer so reruns are byte-identical.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

from .embeddings import EmbeddingSet, TrainConfig, train_embeddings
from .evaluation import EvalReport, stratified_eval
from .kg import TemporalKG
from .qa.model import QAConfig, QAModel, QATrainLog, train_qa
from .qa.tokenize import TokenVocab
from .qgen import SplitSpec, builtin_templates, generate_dataset
from .toy import generate_toy_kg

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    seed: int = 1
    kg_seed: int = 7
    n_entities: int = 200
    n_relations: int = 5
    year_range: tuple[int, int] = (1950, 2020)
    n_facts: int = 3000
    n_questions: int = 20000
    time_answer: str = "years"
    embed: dict = field(default_factory=dict)
    qa: dict = field(default_factory=dict)

    def embed_config(self) -> TrainConfig:
        # QA needs every fact embedded, so no facts are held out here
        return TrainConfig(**{"valid_fraction": 0.0, **self.embed, "seed": self.seed})

    def qa_config(self) -> QAConfig:
        return QAConfig(**{**self.qa, "seed": self.seed})


def build_kg(cfg: PipelineConfig) -> TemporalKG:
    return generate_toy_kg(cfg.kg_seed, cfg.n_entities, cfg.n_relations, cfg.year_range, cfg.n_facts)


def build_dataset(kg: TemporalKG, cfg: PipelineConfig, report: dict | None = None):
    return generate_dataset(kg, builtin_templates(), SplitSpec(seed=cfg.seed), cfg.n_questions, cfg.time_answer,
                            report=report)


def build_embeddings(kg: TemporalKG, model: str, cfg: PipelineConfig) -> EmbeddingSet:
    emb, history = train_embeddings(kg, model, cfg.embed_config())
    log.info("%s embeddings: best epoch %d, fit MRR %.3f", model, history.best_epoch, history.best_mrr)
    return emb


def split_dataset(instances) -> dict[str, list]:
    folds = {"train": [], "dev": [], "test": []}
    for inst in instances:
        folds[inst.split].append(inst)
    return folds


@dataclass
class QARun:
    model: QAModel
    history: QATrainLog
    report: EvalReport


def run_qa(emb: EmbeddingSet, folds: dict, mode: str, qa_config: QAConfig, train_subset=None,
           eval_split: str = "test", extra_config: dict | None = None) -> QARun:
    """Train one QA model and evaluate it on ``eval_split``."""
    train = folds["train"] if train_subset is None else train_subset
    vocab = TokenVocab.build(train, qa_config.min_token_count)
    model = QAModel(emb, vocab, qa_config, mode=mode)
    history = train_qa(model, train, folds["dev"])
    config = {"mode": mode, "qa": asdict(qa_config), "embeddings": emb.config, "embedding_model": emb.model,
              "n_train": len(train), "best_epoch": history.best_epoch, **(extra_config or {})}
    report = stratified_eval(model, folds[eval_split], config=config)
    return QARun(model, history, report)


def with_epochs(qa_config: QAConfig, epochs: int) -> QAConfig:
    return replace(qa_config, epochs=epochs)
