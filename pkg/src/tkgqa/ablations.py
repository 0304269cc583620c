"""Training-set size sweep and the ComplEx-vs-TComplEx comparison."""
from __future__ import annotations

import csv
import io
import math

import numpy as np

from .embeddings import EmbeddingSet
from .evaluation import EvalReport, paired_table
from .pipeline import run_qa
from .qa.model import QAConfig

MIN_TRAIN_QUESTIONS = 100


def nested_subsets(train, fractions, seed: int) -> list[list]:
    """Prefixes of one seeded permutation, so smaller subsets sit inside larger ones."""
    order = np.random.default_rng([seed, 21]).permutation(len(train))
    out = []
    for f in fractions:
        n = math.ceil(f * len(train))
        out.append([train[i] for i in np.sort(order[:n])])
    return out


def check_nested(subsets) -> None:
    for small, big in zip(subsets, subsets[1:]):
        ids_big = {id(x) for x in big}
        if len(small) > len(big) or any(id(x) not in ids_big for x in small):
            raise ValueError("training subsets are not nested (each must contain the previous one)")


def size_ablation(fractions, emb: EmbeddingSet, folds: dict, qa_config: QAConfig, mode: str = "cronkgqa",
                  subsets=None, runner=None) -> list[dict]:
    """One train+eval per training fraction; returns curve rows.

    ``subsets`` overrides the seeded nested subsets (it is still checked for
    nestedness). ``runner(fraction, subset)`` may supply a cached run.
    """
    fractions = [float(f) for f in fractions]
    if not fractions:
        raise ValueError("no fractions given")
    if any(not 0 < f <= 1 for f in fractions):
        raise ValueError(f"fractions must lie in (0, 1], got {fractions}")
    if fractions != sorted(fractions) or len(set(fractions)) != len(fractions):
        raise ValueError("fractions must be strictly increasing")
    if subsets is None:
        subsets = nested_subsets(folds["train"], fractions, qa_config.seed)
    elif len(subsets) != len(fractions):
        raise ValueError("need one subset per fraction")
    check_nested(subsets)
    for f, sub in zip(fractions, subsets):
        if len(sub) < MIN_TRAIN_QUESTIONS:
            raise ValueError(f"fraction {f} gives {len(sub)} training questions; at least "
                             f"{MIN_TRAIN_QUESTIONS} are needed")
    rows = []
    for f, sub in zip(fractions, subsets):
        if runner is not None:
            report = runner(f, sub)
        else:
            report = run_qa(emb, folds, mode, qa_config, train_subset=sub, extra_config={"fraction": f}).report
        rows.append({"fraction": f, "n_train": len(sub), "hits@10_simple": report.get("simple", 10),
                     "hits@10_complex": report.get("complex", 10), "report": report})
    return rows


def curve_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["fraction", "hits@10_simple", "hits@10_complex"])
    for r in rows:
        writer.writerow([f"{r['fraction']:g}"] + ["" if r[k] is None else f"{r[k]:.6f}"
                                                  for k in ("hits@10_simple", "hits@10_complex")])
    return buf.getvalue()


def side_mode(emb: EmbeddingSet) -> str:
    return "embedkgqa" if emb.model == "complex" else "cronkgqa"


def cx_vs_tcx(cx: EmbeddingSet, tcx: EmbeddingSet, folds: dict, qa_config: QAConfig, runs=None) -> dict:
    """Train the QA model on each embedding set and pair the test reports.

    A ComplEx table runs in ``embedkgqa`` mode, a temporal one in
    ``cronkgqa`` mode. ``runs`` may hold precomputed ``{"cx": report, "tcx": report}``.
    """
    if not cx.same_vocabulary(tcx):
        raise ValueError("the two embedding sets have different entity/relation/timestamp vocabularies")
    if cx.config.get("seed") != tcx.config.get("seed"):
        raise ValueError(f"embedding seeds differ ({cx.config.get('seed')} vs {tcx.config.get('seed')})")
    runs = dict(runs or {})
    for side, emb in (("cx", cx), ("tcx", tcx)):
        if side not in runs:
            runs[side] = run_qa(emb, folds, side_mode(emb), qa_config).report
    cx_rep: EvalReport = runs["cx"]
    tcx_rep: EvalReport = runs["tcx"]
    return {
        "cx": {"embedding_model": cx.model, "mode": side_mode(cx), "report": cx_rep.to_json()},
        "tcx": {"embedding_model": tcx.model, "mode": side_mode(tcx), "report": tcx_rep.to_json()},
        "time_answer_gap_hits@1": _gap(tcx_rep, cx_rep, "time"),
        "table_hits@1": paired_table(cx_rep, tcx_rep, 1),
    }


def _gap(a: EvalReport, b: EvalReport, stratum: str):
    x, y = a.get(stratum, 1), b.get(stratum, 1)
    return None if x is None or y is None else x - y
