"""Training, validation and storage of (temporal) KG embeddings.

Training is multiclass object prediction with a full softmax over entities.
Every tuple ``(s, r, o, t)`` also yields ``(o, r + R, s, t)`` so subject
prediction is object prediction on the reciprocal relation ``r + R``.

Loss per batch of ``B`` tuples::

    CE(s, r, t -> o) / B
      + mu    * CE(s, r, o -> t) / B                               (temporal models)
      + lam   / B * sum over touched rows of sum_d |z_d|^3        (N3)
      + lam_t * sum_t |w_{t+1} - w_t|^2                            (temporal models)

The second term is a full softmax over real timestamps. Without it a
single-year fact gives the model no reason to prefer its own year over any
other, and time questions suffer.

Optimiser is Adagrad per real coordinate::

    G <- G + g**2
    x <- x - lr * g / (sqrt(G) + 1e-10)

DUMMY rows (entity 0, timestamp 0) receive no updates here.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .kg import DUMMY, TemporalKG
from .scoring import MODELS, TimeplexWeights

log = logging.getLogger(__name__)

MAGIC = b"TKGE"
VERSION = 1
HEADER = struct.Struct("<4sIBIIII")
RELATION_KINDS = {"complex": 1, "tcomplex": 1, "tntcomplex": 2, "timeplex": 3}
TEMPORAL = {"tcomplex", "tntcomplex", "timeplex"}


class CheckpointError(ValueError):
    pass


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    dim: int = 32
    lr: float = 0.1
    batch_size: int = 256
    epochs: int = 100
    patience: int = 10
    n3: float = 1e-3
    smoothness: float = 1e-4
    time_weight: float = 1.0
    seed: int = 0
    valid_fraction: float = 0.05
    init_scale: float = 1e-1
    eval_every: int = 1
    max_years_per_fact: int | None = None
    timeplex: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        positive = ("dim", "lr", "batch_size", "epochs", "patience", "init_scale", "eval_every")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.n3 < 0 or self.smoothness < 0 or self.time_weight < 0:
            raise ValueError("regularisation weights must be non-negative")
        if not 0 <= self.valid_fraction < 1:
            raise ValueError("valid_fraction must be in [0, 1)")
        self.timeplex = tuple(float(x) for x in self.timeplex)


@dataclass
class EmbeddingSet:
    """Entity, relation and timestamp tables with DUMMY rows at index 0.

    ``relation`` has shape ``(kinds, 2 * n_relations, D)``: the reciprocal of
    relation ``r`` is row ``r + n_relations``. Kinds are ``(v,)``,
    ``(v_time, v_static)`` or ``(v_so, v_st, v_ot)`` depending on ``model``.
    """

    model: str
    entity: np.ndarray
    relation: np.ndarray
    time: np.ndarray
    entity_labels: list[str]
    relation_labels: list[str]
    years: tuple[int, int]
    timeplex: TimeplexWeights = field(default_factory=TimeplexWeights)
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model tag {self.model!r}")
        self.entity = np.asarray(self.entity, dtype=np.complex128)
        self.relation = np.asarray(self.relation, dtype=np.complex128)
        self.time = np.asarray(self.time, dtype=np.complex128)
        d = self.entity.shape[1]
        n_rel = len(self.relation_labels)
        if self.relation.shape != (RELATION_KINDS[self.model], 2 * n_rel, d):
            raise ValueError(f"relation table shape {self.relation.shape} does not fit {self.model}")
        if self.entity.shape[0] != len(self.entity_labels) or self.entity_labels[0] != DUMMY:
            raise ValueError("entity table rows must match labels, DUMMY first")
        if self.time.shape != (self.years[1] - self.years[0] + 2, d):
            raise ValueError("timestamp table rows must be n_years + 1 (DUMMY first)")

    @property
    def dim(self) -> int:
        return self.entity.shape[1]

    @property
    def n_relations(self) -> int:
        return len(self.relation_labels)

    def norms(self) -> dict[str, float]:
        return {
            "entity": float(np.linalg.norm(self.entity[1:])),
            "relation": float(np.linalg.norm(self.relation)),
            "time": float(np.linalg.norm(self.time[1:])),
        }

    def copy(self) -> "EmbeddingSet":
        return replace(self, entity=self.entity.copy(), relation=self.relation.copy(),
                       time=self.time.copy(), config=dict(self.config))

    def same_vocabulary(self, other: "EmbeddingSet") -> bool:
        return (self.entity_labels == other.entity_labels and self.relation_labels == other.relation_labels
                and tuple(self.years) == tuple(other.years))

    # -- batched scoring ---------------------------------------------------

    def query(self, s, r, t) -> np.ndarray:
        """Complex ``(B, D)`` vectors ``P`` with ``score(o) = Re(P . conj(u_o))`` (+ const)."""
        u_s = self.entity[s]
        if self.model == "complex":
            return u_s * self.relation[0, r]
        if self.model == "tcomplex":
            return u_s * self.relation[0, r] * self.time[t]
        if self.model == "tntcomplex":
            return u_s * (self.relation[0, r] * self.time[t] + self.relation[1, r])
        w = self.timeplex
        u_t = self.time[t]
        return (u_s * self.relation[0, r] + w.beta * np.conj(self.relation[2, r]) * u_t
                + w.gamma * np.conj(u_s) * u_t)

    def object_scores(self, s, r, t) -> np.ndarray:
        """Real ``(B, n_entities + 1)`` scores of every candidate object; row 0 is DUMMY."""
        p = self.query(np.asarray(s), np.asarray(r), np.asarray(t))
        return p.real @ self.entity.real.T + p.imag @ self.entity.imag.T


def init_embeddings(kg: TemporalKG, model: str, config: TrainConfig) -> EmbeddingSet:
    if model not in MODELS:
        raise ValueError(f"unknown model tag {model!r}")
    rng = np.random.default_rng(config.seed)
    d, scale = config.dim, config.init_scale

    def table(*shape):
        return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))

    entity = table(len(kg.entities), d)
    relation = table(RELATION_KINDS[model], 2 * kg.n_relations, d)
    time = table(kg.n_timestamps + 1, d)
    # DUMMY rows start at the multiplicative identity; the QA stage trains them
    entity[0] = 1.0
    time[0] = 1.0
    return EmbeddingSet(model, entity, relation, time, list(kg.entities.labels), list(kg.relations.labels),
                        (kg.y_min, kg.y_max), TimeplexWeights(*config.timeplex), asdict(config))


def expand_facts(kg: TemporalKG, max_years_per_fact: int | None = None, rng=None) -> np.ndarray:
    """Per-year point tuples ``(s, r, o, t)`` with ``t`` a timestamp id; ``(n, 4)`` int64.

    Facts are visited in KG order and years in ascending order. With
    ``max_years_per_fact`` set, longer intervals contribute that many years
    drawn uniformly without replacement (sorted).
    """
    rows = []
    for f in kg.facts:
        years = np.arange(f.start, f.end + 1)
        if max_years_per_fact is not None and len(years) > max_years_per_fact:
            if rng is None:
                raise ValueError("sampling years needs an rng")
            years = np.sort(rng.choice(years, size=max_years_per_fact, replace=False))
        for y in years:
            rows.append((f.subject, f.relation, f.object, int(y) - kg.y_min + 1))
    return np.array(rows, dtype=np.int64).reshape(-1, 4)


def with_reciprocals(tuples: np.ndarray, n_relations: int) -> np.ndarray:
    rev = tuples[:, [2, 1, 0, 3]].copy()
    rev[:, 1] += n_relations
    return np.concatenate([tuples, rev])


def _n3_grad(z: np.ndarray) -> tuple[float, np.ndarray]:
    mag = np.abs(z)
    return float(np.sum(mag ** 3)), 3.0 * mag * z


def _softmax_ce(scores: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross entropy and its gradient w.r.t. ``scores`` (already divided by the batch size)."""
    b = len(target)
    top = scores.max(axis=1, keepdims=True)
    ex = np.exp(scores - top)
    z = ex.sum(axis=1, keepdims=True)
    logp_true = scores[np.arange(b), target] - top[:, 0] - np.log(z[:, 0])
    g = ex / z
    g[np.arange(b), target] -= 1.0
    return -float(np.mean(logp_true)), g / b


def _time_term(emb: EmbeddingSet, s, r, o, t, weight: float, d_ent, d_rel, d_time) -> float:
    """Add the timestamp-prediction cross entropy gradients in place; returns its loss."""
    ent, rel, tim = emb.entity, emb.relation, emb.time
    u_s, u_o = ent[s], ent[o]
    w_real = tim[1:]
    if emb.model == "timeplex":
        wts = emb.timeplex
        v_st, v_ot = rel[1, r], rel[2, r]
        q = wts.alpha * u_s * v_st + wts.beta * u_o * v_ot + wts.gamma * u_s * u_o
        scores = q.real @ w_real.real.T + q.imag @ w_real.imag.T
        loss, g = _softmax_ce(scores, t - 1)
        g *= weight
        d_time[1:] += g.T @ q
        d_q = g @ w_real
        np.add.at(d_ent, s, d_q * np.conj(wts.alpha * v_st + wts.gamma * u_o))
        np.add.at(d_ent, o, d_q * np.conj(wts.beta * v_ot + wts.gamma * u_s))
        np.add.at(d_rel[1], r, wts.alpha * d_q * np.conj(u_s))
        np.add.at(d_rel[2], r, wts.beta * d_q * np.conj(u_o))
    else:
        v = rel[0, r]
        q = u_s * v * np.conj(u_o)
        scores = q.real @ w_real.real.T - q.imag @ w_real.imag.T
        loss, g = _softmax_ce(scores, t - 1)
        g *= weight
        d_time[1:] += g.T @ np.conj(q)
        d_q = g @ np.conj(w_real)
        np.add.at(d_ent, s, d_q * np.conj(v) * u_o)
        np.add.at(d_ent, o, np.conj(d_q) * u_s * v)
        np.add.at(d_rel[0], r, d_q * np.conj(u_s) * u_o)
    return weight * loss


def batch_loss_and_grads(emb: EmbeddingSet, batch: np.ndarray, n3: float = 0.0, smoothness: float = 0.0,
                         time_weight: float = 0.0):
    """Loss and packed complex gradients for one batch of ``(s, r, o, t)`` tuples.

    Returns ``(loss, {"entity": dE, "relation": dR, "time": dT})``; gradient
    arrays have the table shapes. DUMMY rows' gradients are left in place,
    callers decide whether to apply them.
    """
    s, r, o, t = batch.T
    b = len(batch)
    model = emb.model
    ent, rel, tim = emb.entity, emb.relation, emb.time
    p = emb.query(s, r, t)
    scores = p.real @ ent.real.T + p.imag @ ent.imag.T
    scores[:, 0] = -np.inf
    loss, g = _softmax_ce(scores, o)

    d_ent = g.T @ p
    d_p = g @ ent
    d_rel = np.zeros_like(rel)
    d_time = np.zeros_like(tim)
    u_s = ent[s]
    if model == "complex":
        v = rel[0, r]
        d_us = d_p * np.conj(v)
        np.add.at(d_rel[0], r, d_p * np.conj(u_s))
    elif model == "tcomplex":
        v, w = rel[0, r], tim[t]
        d_us = d_p * np.conj(v * w)
        np.add.at(d_rel[0], r, d_p * np.conj(u_s * w))
        np.add.at(d_time, t, d_p * np.conj(u_s * v))
    elif model == "tntcomplex":
        vt, vs, w = rel[0, r], rel[1, r], tim[t]
        d_us = d_p * np.conj(vt * w + vs)
        np.add.at(d_rel[0], r, d_p * np.conj(u_s * w))
        np.add.at(d_rel[1], r, d_p * np.conj(u_s))
        np.add.at(d_time, t, d_p * np.conj(u_s * vt))
    else:
        wts = emb.timeplex
        vso, vot, u_t = rel[0, r], rel[2, r], tim[t]
        d_us = d_p * np.conj(vso) + wts.gamma * np.conj(d_p) * u_t
        np.add.at(d_rel[0], r, d_p * np.conj(u_s))
        np.add.at(d_rel[2], r, wts.beta * np.conj(d_p) * u_t)
        np.add.at(d_time, t, wts.beta * d_p * rel[2, r] + wts.gamma * d_p * u_s)
    np.add.at(d_ent, s, d_us)
    if time_weight > 0 and model in TEMPORAL and tim.shape[0] > 2:
        loss += _time_term(emb, s, r, o, t, time_weight, d_ent, d_rel, d_time)

    if n3 > 0:
        factors = [(ent, d_ent, s), (ent, d_ent, o)]
        for k in range(rel.shape[0]):
            factors.append((rel[k], d_rel[k], r))
        if model in TEMPORAL:
            factors.append((tim, d_time, t))
        for table, grad, idx in factors:
            val, gz = _n3_grad(table[idx])
            loss += n3 * val / b
            np.add.at(grad, idx, n3 * gz / b)
    if smoothness > 0 and model in TEMPORAL and tim.shape[0] > 2:
        diff = tim[2:] - tim[1:-1]
        loss += smoothness * float(np.sum(np.abs(diff) ** 2))
        d_time[2:] += smoothness * 2 * diff
        d_time[1:-1] -= smoothness * 2 * diff
    return loss, {"entity": d_ent, "relation": d_rel, "time": d_time}


class _Adagrad:
    def __init__(self, shapes: dict, lr: float):
        self.lr = lr
        self.acc = {k: (np.zeros(s), np.zeros(s)) for k, s in shapes.items()}

    def step(self, params: dict, grads: dict) -> None:
        for k, g in grads.items():
            acc_re, acc_im = self.acc[k]
            acc_re += g.real ** 2
            acc_im += g.imag ** 2
            upd = g.real / (np.sqrt(acc_re) + 1e-10) + 1j * (g.imag / (np.sqrt(acc_im) + 1e-10))
            params[k] -= self.lr * upd


@dataclass
class TrainLog:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_mrr: float = float("nan")
    stopped_early: bool = False


def split_tuples(tuples: np.ndarray, valid_fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    n = len(tuples)
    n_valid = int(round(valid_fraction * n))
    if n_valid == 0:
        return tuples, tuples[:0]
    perm = rng.permutation(n)
    valid = np.sort(perm[:n_valid])
    train = np.sort(perm[n_valid:])
    return tuples[train], tuples[valid]


def _expand_and_split(kg: TemporalKG, config: TrainConfig, rng):
    points = expand_facts(kg, config.max_years_per_fact, rng)
    train_fwd, valid_fwd = split_tuples(points, config.valid_fraction, rng)
    return points, train_fwd, valid_fwd


def heldout_tuples(kg: TemporalKG, config: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    """The (train, held-out) forward tuples ``train_embeddings`` uses for this config."""
    _, train_fwd, valid_fwd = _expand_and_split(kg, config, np.random.default_rng([config.seed, 1]))
    return train_fwd, valid_fwd


def train_embeddings(kg: TemporalKG, model: str, config: TrainConfig | None = None,
                     progress=None) -> tuple[EmbeddingSet, TrainLog]:
    """Train ``model`` embeddings on ``kg``; returns the best-validation-MRR tables.

    With ``valid_fraction == 0`` validation MRR is measured on a fixed sample
    of training tuples (a fit check rather than a generalisation check).
    """
    config = config or TrainConfig()
    if len(kg) == 0:
        raise ValueError("cannot train on an empty KG")
    emb = init_embeddings(kg, model, config)
    rng = np.random.default_rng([config.seed, 1])
    points, train_fwd, valid_fwd = _expand_and_split(kg, config, rng)
    train = with_reciprocals(train_fwd, kg.n_relations)
    if len(valid_fwd):
        valid = with_reciprocals(valid_fwd, kg.n_relations)
    else:
        pick = rng.choice(len(train), size=min(len(train), 2000), replace=False)
        valid = train[np.sort(pick)]
    known = with_reciprocals(points, kg.n_relations)
    filt = build_filter(known)

    params = {"entity": emb.entity, "relation": emb.relation, "time": emb.time}
    opt = _Adagrad({k: v.shape for k, v in params.items()}, config.lr)
    smooth = config.smoothness if model in TEMPORAL else 0.0
    time_weight = config.time_weight if model in TEMPORAL else 0.0
    history = TrainLog()
    best = emb.copy()
    stale = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = train[order[start:start + config.batch_size]]
            loss, grads = batch_loss_and_grads(emb, batch, config.n3, smooth, time_weight)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch starting {start}; "
                                      f"lower lr (now {config.lr}) or init_scale")
            grads["entity"][0] = 0
            grads["time"][0] = 0
            opt.step(params, grads)
            losses.append(loss)
        row = {"epoch": epoch, "loss": float(np.mean(losses)), "first_batch_loss": losses[0],
               "last_batch_loss": losses[-1], **{f"norm_{k}": v for k, v in emb.norms().items()}}
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            metrics = kgc_eval(emb, valid, filt)
            row.update(mrr=metrics["mrr"], hits1=metrics["hits@1"], hits10=metrics["hits@10"])
            if not history.best_mrr >= metrics["mrr"]:
                history.best_mrr, history.best_epoch = metrics["mrr"], epoch
                best = emb.copy()
                stale = 0
            else:
                stale += 1
        history.epochs.append(row)
        log.info("embed %s epoch %d loss %.4f mrr %s", model, epoch, row["loss"], row.get("mrr"))
        if progress is not None:
            progress(row)
        if stale >= config.patience:
            history.stopped_early = True
            break
    best.config = asdict(config)
    return best, history


# -- link-prediction evaluation ---------------------------------------------


def build_filter(tuples: np.ndarray) -> dict[tuple[int, int, int], np.ndarray]:
    """Map ``(s, r, t)`` -> array of every known true object."""
    groups: dict[tuple[int, int, int], list[int]] = {}
    for s, r, o, t in tuples.tolist():
        groups.setdefault((s, r, t), []).append(o)
    return {k: np.unique(v) for k, v in groups.items()}


def ranks(emb: EmbeddingSet, tuples: np.ndarray, known=None, chunk: int = 1024) -> np.ndarray:
    """Rank of the true object among all real entities for each tuple.

    Ties count half: ``rank = 1 + #higher + #tied / 2``. With ``known`` (see
    :func:`build_filter`), other true objects are removed from the
    candidates first.
    """
    tuples = np.asarray(tuples, dtype=np.int64).reshape(-1, 4)
    out = np.empty(len(tuples))
    for start in range(0, len(tuples), chunk):
        part = tuples[start:start + chunk]
        s, r, o, t = part.T
        scores = emb.object_scores(s, r, t)
        scores[:, 0] = -np.inf
        true = scores[np.arange(len(part)), o].copy()
        if known is not None:
            for i, key in enumerate(zip(s.tolist(), r.tolist(), t.tolist())):
                others = known.get(key)
                if others is not None:
                    scores[i, others] = -np.inf
        scores[np.arange(len(part)), o] = -np.inf
        higher = (scores > true[:, None]).sum(axis=1)
        tied = (scores == true[:, None]).sum(axis=1)
        out[start:start + len(part)] = 1 + higher + tied / 2
    return out


def kgc_eval(emb: EmbeddingSet, tuples: np.ndarray, known=None) -> dict[str, float]:
    """Filtered MRR, hits@1 and hits@10 of object prediction."""
    rk = ranks(emb, tuples, known)
    if len(rk) == 0:
        return {"mrr": float("nan"), "hits@1": float("nan"), "hits@10": float("nan"), "count": 0}
    return {"mrr": float(np.mean(1.0 / rk)), "hits@1": float(np.mean(rk <= 1)),
            "hits@10": float(np.mean(rk <= 10)), "count": int(len(rk))}


def random_mrr(n_candidates: int) -> float:
    """Expected reciprocal rank under a uniformly random ranking: ``H_n / n``."""
    return float(np.sum(1.0 / np.arange(1, n_candidates + 1)) / n_candidates)


# -- checkpoints --------------------------------------------------------------


def sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def _tables_bytes(emb: EmbeddingSet) -> bytes:
    rel = emb.relation.reshape(-1, emb.dim)
    head = HEADER.pack(MAGIC, VERSION, MODELS.index(emb.model), emb.dim, emb.entity.shape[0], rel.shape[0],
                       emb.time.shape[0])
    parts = [head]
    for table in (emb.entity, rel, emb.time):
        parts.append(np.ascontiguousarray(table.real, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(table.imag, dtype="<f8").tobytes())
    return b"".join(parts)


def _metadata(emb: EmbeddingSet) -> dict:
    return {
        "model": emb.model,
        "dim": emb.dim,
        "entities": emb.entity_labels,
        "relations": emb.relation_labels,
        "years": list(emb.years),
        "timeplex": [emb.timeplex.alpha, emb.timeplex.beta, emb.timeplex.gamma],
        "config": emb.config,
    }


def save_checkpoint(emb: EmbeddingSet, path) -> None:
    """Write the binary tables and the JSON vocabulary/config sidecar."""
    path = Path(path)
    path.write_bytes(_tables_bytes(emb))
    sidecar_path(path).write_text(json.dumps(_metadata(emb), indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _read_tables(buf: bytes, offset: int = 0):
    if len(buf) - offset < HEADER.size:
        raise CheckpointError("truncated checkpoint header")
    magic, version, tag, dim, n_ent, n_rel, n_time = HEADER.unpack_from(buf, offset)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if tag >= len(MODELS):
        raise CheckpointError(f"unknown model tag byte {tag}")
    pos = offset + HEADER.size
    tables = []
    for rows in (n_ent, n_rel, n_time):
        n = rows * dim
        need = 16 * n
        if len(buf) - pos < need:
            raise CheckpointError("truncated checkpoint body")
        re = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).reshape(rows, dim)
        im = np.frombuffer(buf, dtype="<f8", count=n, offset=pos + 8 * n).reshape(rows, dim)
        tables.append(re + 1j * im)
        pos += need
    return MODELS[tag], dim, tables, pos


def load_checkpoint(path) -> EmbeddingSet:
    path = Path(path)
    buf = path.read_bytes()
    model, dim, (ent, rel, tim), end = _read_tables(buf)
    if end != len(buf):
        raise CheckpointError(f"{len(buf) - end} trailing bytes after checkpoint body")
    try:
        meta = json.loads(sidecar_path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CheckpointError(f"missing sidecar {sidecar_path(path)}") from None
    return _assemble(model, ent, rel, tim, meta)


def _assemble(model, ent, rel, tim, meta) -> EmbeddingSet:
    if meta.get("model") != model:
        raise CheckpointError(f"sidecar model {meta.get('model')!r} disagrees with checkpoint {model!r}")
    kinds = RELATION_KINDS[model]
    n_rel = len(meta["relations"])
    if rel.shape[0] != kinds * 2 * n_rel:
        raise CheckpointError("relation row count disagrees with vocabulary")
    return EmbeddingSet(model, ent, rel.reshape(kinds, 2 * n_rel, -1), tim, list(meta["entities"]),
                        list(meta["relations"]), tuple(meta["years"]), TimeplexWeights(*meta["timeplex"]),
                        dict(meta.get("config", {})))
