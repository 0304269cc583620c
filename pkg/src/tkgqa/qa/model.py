"""CronKGQA-style answer scoring over frozen KG embeddings.

The question encoder yields a pooled state ``h``; two affine maps give the
expanded query vectors ``qe_ent`` and ``qe_time`` (length ``2D``). With
anchors ``s``, ``o``, ``t`` taken from the question annotations::

    score(e) = Re <u_s, interp(qe_ent), conj(u_e), w_t>      for every entity e
    score(t) = Re <u_s, interp(qe_time), conj(u_o), w_t>     for every timestamp t

The two score vectors are concatenated, DUMMY slots masked, and a softmax
gives the answer distribution. Training minimises cross entropy against the
uniform distribution over gold answers.

In ``embedkgqa`` mode the entity table is a ComplEx table and the timestamp
table is a freshly initialised learnable matrix.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .. import embeddings as emb_io
from ..embeddings import EmbeddingSet
from .encoder import EncoderConfig, encode, encode_backward, init_encoder
from .tokenize import ENT, UNK, TokenVocab, pad_batch, question_tokens

log = logging.getLogger(__name__)

MODES = ("cronkgqa", "embedkgqa")
PARAM_MAGIC = b"TQAE"
PARAM_VERSION = 1


class AnchorSet(NamedTuple):
    subject: int
    object: int
    time: int


@dataclass
class QAConfig:
    d_model: int = 128
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    max_len: int = 40
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 100
    patience: int = 10
    seed: int = 0
    targets: str = "soft"  # "soft" | "sample_one"
    eval_k: int = 10
    time_init_scale: float = 0.1
    min_token_count: int = 1
    entity_token_dropout: float = 1.0

    def __post_init__(self):
        if self.targets not in ("soft", "sample_one"):
            raise ValueError("targets must be 'soft' or 'sample_one'")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if not 0 <= self.entity_token_dropout <= 1:
            raise ValueError("entity_token_dropout must be in [0, 1]")
        for name in ("batch_size", "epochs", "patience", "eval_k"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


def extract_anchors(instance, emb: EmbeddingSet) -> AnchorSet:
    """First entity mention is the subject, second the object, first time mention the time."""
    index = {label: i for i, label in enumerate(emb.entity_labels)}
    ents = sorted(instance.entities, key=lambda e: tuple(e["span"]))
    times = sorted(instance.times, key=lambda t: tuple(t["span"]))
    subject = index[ents[0]["id"]] if ents else 0
    obj = index[ents[1]["id"]] if len(ents) > 1 else 0
    tid = times[0]["year"] - emb.years[0] + 1 if times else 0
    return AnchorSet(subject, obj, tid)


class Batch(NamedTuple):
    ids: np.ndarray
    mask: np.ndarray
    subject: np.ndarray
    object: np.ndarray
    time: np.ndarray
    target: np.ndarray  # (B, n_candidates) rows summing to 1, or empty when unlabelled


class QAModel:
    """Encoder + projection parameters over an embedding set.

    Candidate slots are ``[entities (incl. DUMMY at 0) ; timestamps (incl. DUMMY)]``.
    """

    def __init__(self, emb: EmbeddingSet, vocab: TokenVocab, config: QAConfig | None = None,
                 mode: str = "cronkgqa"):
        config = config or QAConfig()
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if mode == "cronkgqa" and emb.model not in ("tcomplex", "tntcomplex"):
            raise ValueError(f"cronkgqa mode scores with a TComplEx-style table, got {emb.model!r} embeddings")
        if mode == "embedkgqa" and emb.model != "complex":
            raise ValueError(f"embedkgqa mode needs a ComplEx checkpoint, got {emb.model!r}")
        self.mode = mode
        self.config = config
        self.vocab = vocab
        self.emb = emb.copy()
        self.enc_cfg = EncoderConfig(len(vocab), config.d_model, config.n_layers, config.n_heads, config.d_ff,
                                     config.max_len)
        rng = np.random.default_rng([config.seed, 11])
        self.params = init_encoder(self.enc_cfg, rng)
        two_d = 2 * emb.dim
        scale = np.sqrt(1.0 / config.d_model)
        self.params["p_ent"] = rng.standard_normal((config.d_model, two_d)) * scale
        self.params["b_ent"] = np.zeros(two_d)
        self.params["p_time"] = rng.standard_normal((config.d_model, two_d)) * scale
        self.params["b_time"] = np.zeros(two_d)
        if mode == "embedkgqa":
            shape = self.emb.time.shape
            self.emb.time = config.time_init_scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
            self.emb.time[0] = 1.0
        self._label_index = {label: i for i, label in enumerate(self.emb.entity_labels)}

    # -- sizes and decoding ----------------------------------------------

    @property
    def n_entity_slots(self) -> int:
        return self.emb.entity.shape[0]

    @property
    def n_candidates(self) -> int:
        return self.emb.entity.shape[0] + self.emb.time.shape[0]

    @property
    def n_answers(self) -> int:
        """Candidates excluding the two DUMMY slots."""
        return self.n_candidates - 2

    def slot_label(self, slot: int):
        if slot < self.n_entity_slots:
            return self.emb.entity_labels[slot]
        return self.emb.years[0] + slot - self.n_entity_slots - 1

    def gold_slots(self, instance) -> list[int]:
        if instance.answer_kind == "entity":
            return sorted(self._label_index[a] for a in instance.answers)
        return sorted(self.n_entity_slots + int(y) - self.emb.years[0] + 1 for y in instance.answers)

    def candidate_mask(self) -> np.ndarray:
        mask = np.ones(self.n_candidates, dtype=bool)
        mask[0] = mask[self.n_entity_slots] = False
        return mask

    # -- batching ----------------------------------------------------------

    def encode_tokens(self, instance, rng: np.random.Generator | None = None) -> list[int]:
        """Token ids; with ``rng`` each entity label token is replaced by UNK w.p. ``entity_token_dropout``.

        Dev/test entities never occur in training questions, so at evaluation
        time their labels are UNK anyway; the dropout teaches the encoder
        not to rely on them.
        """
        ids = self.vocab.encode(question_tokens(instance))
        p = self.config.entity_token_dropout
        if rng is not None and p > 0:
            ent, unk = self.vocab.index[ENT], self.vocab.index[UNK]
            for i in range(1, len(ids)):
                if ids[i - 1] == ent and rng.random() < p:
                    ids[i] = unk
        return ids

    def make_batch(self, instances, rng: np.random.Generator | None = None, with_targets: bool = True) -> Batch:
        """Arrays for a batch; passing ``rng`` turns on the training-time randomness."""
        ids, mask = pad_batch([self.encode_tokens(i, rng) for i in instances], self.enc_cfg.max_len)
        anchors = [extract_anchors(i, self.emb) for i in instances]
        s = np.array([a.subject for a in anchors], dtype=np.int64)
        o = np.array([a.object for a in anchors], dtype=np.int64)
        t = np.array([a.time for a in anchors], dtype=np.int64)
        target = np.zeros((len(instances), 0))
        if with_targets:
            target = np.zeros((len(instances), self.n_candidates))
            for row, inst in enumerate(instances):
                gold = self.gold_slots(inst)
                if self.config.targets == "sample_one" and rng is not None:
                    gold = [gold[int(rng.integers(len(gold)))]]
                target[row, gold] = 1.0 / len(gold)
        return Batch(ids, mask, s, o, t, target)

    # -- forward / backward --------------------------------------------------

    def encode_question(self, batch: Batch, params: dict | None = None, keep_cache: bool = False):
        params = self.params if params is None else params
        out = encode(params, self.enc_cfg, batch.ids, batch.mask, keep_cache)
        pooled, cache = out if keep_cache else (out, None)
        qe_ent = pooled @ params["p_ent"] + params["b_ent"]
        qe_time = pooled @ params["p_time"] + params["b_time"]
        return (qe_ent, qe_time, pooled, cache) if keep_cache else (qe_ent, qe_time)

    def _scores(self, qe_ent, qe_time, batch: Batch, entity=None, time=None):
        ent = self.emb.entity if entity is None else entity
        tim = self.emb.time if time is None else time
        d = self.emb.dim
        q_ent = qe_ent[:, :d] + 1j * qe_ent[:, d:]
        q_time = qe_time[:, :d] + 1j * qe_time[:, d:]
        u_s, u_o, w_t = ent[batch.subject], ent[batch.object], tim[batch.time]
        p = u_s * q_ent * w_t
        c = u_s * q_time * np.conj(u_o)
        ent_scores = p.real @ ent.real.T + p.imag @ ent.imag.T
        time_scores = c.real @ tim.real.T - c.imag @ tim.imag.T
        logits = np.concatenate([ent_scores, time_scores], axis=1)
        logits[:, ~self.candidate_mask()] = -np.inf
        return logits, (q_ent, q_time, u_s, u_o, w_t, p, c)

    def log_probs(self, batch: Batch) -> np.ndarray:
        qe_ent, qe_time = self.encode_question(batch)
        logits, _ = self._scores(qe_ent, qe_time, batch)
        top = logits.max(axis=1, keepdims=True)
        return logits - top - np.log(np.exp(logits - top).sum(axis=1, keepdims=True))

    def forward(self, instances) -> np.ndarray:
        """Answer distributions ``(B, n_candidates)``; DUMMY slots carry zero mass."""
        return np.exp(self.log_probs(self.make_batch(instances, with_targets=False)))

    def loss_and_grads(self, batch: Batch, params: dict | None = None, entity=None, time=None):
        """Mean cross entropy and gradients.

        Returns ``(loss, grads)`` where ``grads`` holds every encoder/projection
        parameter plus packed complex gradients ``entity`` and ``time`` for
        the embedding tables (the caller decides which rows may move).
        """
        params = self.params if params is None else params
        ent = self.emb.entity if entity is None else entity
        tim = self.emb.time if time is None else time
        bsz = len(batch.ids)
        qe_ent, qe_time, pooled, cache = self.encode_question(batch, params, keep_cache=True)
        logits, (q_ent, q_time, u_s, u_o, w_t, p, c) = self._scores(qe_ent, qe_time, batch, ent, tim)
        valid = self.candidate_mask()
        top = logits.max(axis=1, keepdims=True)
        z = logits - top
        logz = np.log(np.exp(z).sum(axis=1, keepdims=True))
        logp = np.where(valid, z - logz, 0.0)
        loss = -float(np.sum(batch.target * logp)) / bsz
        dlogits = (np.exp(z - logz) - batch.target) / bsz
        dlogits[:, ~valid] = 0.0
        n_e = ent.shape[0]
        d_es, d_ts = dlogits[:, :n_e], dlogits[:, n_e:]

        # entity head: score(e) = Re(p . conj(u_e)), p = u_s q_ent w_t
        d_p = d_es @ ent
        d_ent = d_es.T @ p
        d_qent = d_p * np.conj(u_s * w_t)
        d_us = d_p * np.conj(q_ent * w_t)
        d_wt = d_p * np.conj(u_s * q_ent)
        # time head: score(t) = Re(c . w_t), c = u_s q_time conj(u_o)
        d_c = d_ts @ np.conj(tim)
        d_time = d_ts.T @ np.conj(c)
        d_qtime = d_c * np.conj(u_s) * u_o
        d_us += d_c * np.conj(q_time) * u_o
        d_uo = np.conj(d_c) * u_s * q_time
        np.add.at(d_ent, batch.subject, d_us)
        np.add.at(d_ent, batch.object, d_uo)
        np.add.at(d_time, batch.time, d_wt)

        g_qe_ent = np.concatenate([d_qent.real, d_qent.imag], axis=1)
        g_qe_time = np.concatenate([d_qtime.real, d_qtime.imag], axis=1)
        grads = {
            "p_ent": pooled.T @ g_qe_ent, "b_ent": g_qe_ent.sum(0),
            "p_time": pooled.T @ g_qe_time, "b_time": g_qe_time.sum(0),
        }
        d_pooled = g_qe_ent @ params["p_ent"].T + g_qe_time @ params["p_time"].T
        grads.update(encode_backward(params, self.enc_cfg, cache, d_pooled))
        grads["entity"] = d_ent
        grads["time"] = d_time
        return loss, grads

    def trainable_rows(self) -> dict[str, slice]:
        """Embedding rows the QA stage may update."""
        rows = {"entity": slice(0, 1), "time": slice(0, 1)}
        if self.mode == "embedkgqa":
            rows["time"] = slice(0, None)
        return rows

    # -- inference -----------------------------------------------------------

    def predict_slots(self, instances, k: int, chunk: int = 256) -> np.ndarray:
        """Top-``k`` candidate slots per instance; ties broken by ascending slot id."""
        if not 1 <= k <= self.n_answers:
            raise ValueError(f"k must be in 1..{self.n_answers} (number of answer candidates)")
        out = []
        for start in range(0, len(instances), chunk):
            batch = self.make_batch(instances[start:start + chunk], with_targets=False)
            lp = self.log_probs(batch)
            # stable sort on -logp keeps ascending slot order among ties
            order = np.argsort(-lp, axis=1, kind="stable")
            out.append(order[:, :k])
        return np.concatenate(out) if out else np.zeros((0, k), dtype=np.int64)

    def predict_topk(self, instance, k: int) -> list:
        return [self.slot_label(int(s)) for s in self.predict_slots([instance], k)[0]]

    # -- persistence ---------------------------------------------------------

    def metadata(self) -> dict:
        return {
            "mode": self.mode,
            "config": asdict(self.config),
            "vocab_hash": self.vocab.digest(),
            "tokens": self.vocab.tokens,
            "embeddings": emb_io._metadata(self.emb),
        }


def embedkgqa_mode(emb: EmbeddingSet, vocab: TokenVocab, config: QAConfig | None = None) -> QAModel:
    """A QA model configured as the EmbedKGQA ablation (ComplEx entities, learnable times)."""
    return QAModel(emb, vocab, config, mode="embedkgqa")


# -- training ----------------------------------------------------------------


class _Adam:
    """Adam over real arrays, updated in place."""

    def __init__(self, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class QATrainLog:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_dev: float = float("-inf")
    stopped_early: bool = False


class DivergenceError(RuntimeError):
    pass


def _trainable_views(model: QAModel) -> dict[str, np.ndarray]:
    """Real float64 views onto the encoder parameters and the movable embedding rows.

    Complex rows are viewed as interleaved (real, imag) pairs, which is also
    how a packed complex gradient lays out ``(dL/dRe, dL/dIm)``.
    """
    views = dict(model.params)
    for name, rows in model.trainable_rows().items():
        views["emb." + name] = getattr(model.emb, name)[rows].view(np.float64)
    return views


def _real_grads(model: QAModel, grads: dict) -> dict[str, np.ndarray]:
    out = {k: v for k, v in grads.items() if k not in ("entity", "time")}
    for name, rows in model.trainable_rows().items():
        out["emb." + name] = np.ascontiguousarray(grads[name][rows]).view(np.float64)
    return out


def evaluate_hits(model: QAModel, instances, k: int) -> float:
    """Any-gold hits@k over ``instances``."""
    if not instances:
        return float("nan")
    top = model.predict_slots(instances, k)
    hits = [bool(set(row.tolist()) & set(model.gold_slots(inst))) for row, inst in zip(top, instances)]
    return float(np.mean(hits))


def train_qa(model: QAModel, train, dev, progress=None) -> QATrainLog:
    """Fit ``model`` on ``train``; early stopping on dev hits@k (``config.eval_k``).

    The parameters of the best dev epoch are restored at the end.
    """
    cfg = model.config
    if not train:
        raise ValueError("no training instances")
    rng = np.random.default_rng([cfg.seed, 12])
    views = _trainable_views(model)
    opt = _Adam(cfg.lr)
    history = QATrainLog()
    best = {k: v.copy() for k, v in views.items()}
    stale = 0
    dev = list(dev) if dev else list(train)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            chunk = [train[i] for i in order[start:start + cfg.batch_size]]
            batch = model.make_batch(chunk, rng)
            loss, grads = model.loss_and_grads(batch)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite QA loss at epoch {epoch}; lower lr (now {cfg.lr})")
            opt.step(views, _real_grads(model, grads))
            losses.append(loss)
        score = evaluate_hits(model, dev, cfg.eval_k)
        row = {"epoch": epoch, "loss": float(np.mean(losses)), f"dev_hits@{cfg.eval_k}": score}
        history.epochs.append(row)
        log.info("qa %s epoch %d loss %.4f dev hits@%d %.4f", model.mode, epoch, row["loss"], cfg.eval_k, score)
        if progress is not None:
            progress(row)
        if score > history.best_dev:
            history.best_dev, history.best_epoch = score, epoch
            best = {k: v.copy() for k, v in views.items()}
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                history.stopped_early = True
                break
    for k, v in views.items():
        v[...] = best[k]
    return history


# -- model file --------------------------------------------------------------


def save_model(model: QAModel, path) -> None:
    """Embedding checkpoint bytes, then the parameter section, then JSON metadata.

    Parameter section: ``TQAE``, version u32, count u32, then per array
    name length u32, UTF-8 name, ndim u32, dims u32 each and little-endian
    f64 data. The file ends with the metadata length u32 and the JSON bytes.
    """
    parts = [emb_io._tables_bytes(model.emb), PARAM_MAGIC, struct.pack("<II", PARAM_VERSION, len(model.params))]
    for name in sorted(model.params):
        arr = np.ascontiguousarray(model.params[name], dtype="<f8")
        raw = name.encode()
        parts.append(struct.pack("<I", len(raw)) + raw + struct.pack("<I", arr.ndim)
                     + struct.pack(f"<{arr.ndim}I", *arr.shape) + arr.tobytes())
    meta = json.dumps(model.metadata(), sort_keys=True).encode()
    parts.append(struct.pack("<I", len(meta)) + meta)
    Path(path).write_bytes(b"".join(parts))


def load_model(path) -> QAModel:
    buf = Path(path).read_bytes()
    model_tag, _, (ent, rel, tim), pos = emb_io._read_tables(buf)
    if buf[pos:pos + 4] != PARAM_MAGIC:
        raise emb_io.CheckpointError("missing QA parameter section")
    version, count = struct.unpack_from("<II", buf, pos + 4)
    if version != PARAM_VERSION:
        raise emb_io.CheckpointError(f"unsupported QA parameter version {version}")
    pos += 12
    params = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", buf, pos)
            name = buf[pos + 4:pos + 4 + n].decode()
            pos += 4 + n
            (ndim,) = struct.unpack_from("<I", buf, pos)
            shape = struct.unpack_from(f"<{ndim}I", buf, pos + 4)
            pos += 4 + 4 * ndim
            size = int(np.prod(shape))
            if len(buf) < pos + 8 * size:
                raise emb_io.CheckpointError("truncated QA parameter section")
            params[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape).copy()
            pos += 8 * size
        (n,) = struct.unpack_from("<I", buf, pos)
    except struct.error:
        raise emb_io.CheckpointError("truncated QA model file") from None
    meta_raw = buf[pos + 4:pos + 4 + n]
    if len(meta_raw) != n or pos + 4 + n != len(buf):
        raise emb_io.CheckpointError("QA metadata block length mismatch")
    meta = json.loads(meta_raw)
    emb = emb_io._assemble(model_tag, ent, rel, tim, meta["embeddings"])
    vocab = TokenVocab(meta["tokens"])
    if vocab.digest() != meta["vocab_hash"]:
        raise emb_io.CheckpointError("token vocabulary hash mismatch")
    model = QAModel.__new__(QAModel)
    model.mode = meta["mode"]
    model.config = QAConfig(**meta["config"])
    model.vocab = vocab
    model.emb = emb
    c = model.config
    model.enc_cfg = EncoderConfig(len(vocab), c.d_model, c.n_layers, c.n_heads, c.d_ff, c.max_len)
    model.params = params
    model._label_index = {label: i for i, label in enumerate(emb.entity_labels)}
    return model
