"""Complex-valued scoring functions and their analytic gradients.

Vectors are 1-D ``complex128`` arrays of length ``D``. The expanded layout is
a real array of length ``2D`` holding the real parts followed by the
imaginary parts.

Every single-instance score sums its per-dimension terms strictly left to
right (ascending ``d``, via ``cumsum``), so two scores whose per-term values
coincide bitwise also coincide bitwise. Multiplying a complex term by
``1+0j`` reproduces it exactly, which is what makes the TComplEx/ComplEx and
TNTComplEx/ComplEx identity reductions exact.

Gradients of a real score ``f`` with respect to a complex vector ``z`` are
returned packed as ``df/dRe(z) + 1j * df/dIm(z)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MODELS = ("complex", "tcomplex", "tntcomplex", "timeplex")


@dataclass(frozen=True)
class TimeplexWeights:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"TimePlex weight {name} must be finite")


@dataclass(frozen=True)
class RelationParams:
    """Relation vectors for one model.

    ``vectors`` holds, by model tag: ``complex``/``tcomplex`` -> ``(v_r,)``;
    ``tntcomplex`` -> ``(v_time, v_static)``; ``timeplex`` -> ``(v_so, v_st, v_ot)``.
    """

    model: str
    vectors: tuple

    ARITY = {"complex": 1, "tcomplex": 1, "tntcomplex": 2, "timeplex": 3}

    def __post_init__(self):
        if self.model not in self.ARITY:
            raise ValueError(f"unknown model tag {self.model!r}")
        if len(self.vectors) != self.ARITY[self.model]:
            raise ValueError(f"{self.model} needs {self.ARITY[self.model]} relation vectors, "
                             f"got {len(self.vectors)}")
        vecs = tuple(as_complex(v) for v in self.vectors)
        _same_dim(*vecs)
        object.__setattr__(self, "vectors", vecs)


def as_complex(v) -> np.ndarray:
    arr = np.asarray(v)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-D complex vector, got shape {arr.shape}")
    out = arr.astype(np.complex128, copy=False)
    if not np.all(np.isfinite(out)):
        raise ValueError("complex vector has non-finite entries")
    return out


def _same_dim(*vecs) -> int:
    dims = {v.shape[-1] for v in vecs}
    if len(dims) != 1:
        raise ValueError(f"dimension mismatch: {sorted(dims)}")
    return dims.pop()


def expand_complex(v) -> np.ndarray:
    """Complex ``D`` vector (or ``(..., D)`` array) -> real ``2D`` layout."""
    v = np.asarray(v, dtype=np.complex128)
    return np.concatenate([v.real, v.imag], axis=-1)


def interp(x) -> np.ndarray:
    """Real ``2D`` layout -> complex ``D`` vector; inverse of :func:`expand_complex`."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] % 2:
        raise ValueError(f"expanded vector must have even length, got {x.shape[-1]}")
    d = x.shape[-1] // 2
    return x[..., :d] + 1j * x[..., d:]


def _ordered_real_sum(terms: np.ndarray) -> float:
    # cumsum is a strict left-to-right reduction; np.sum would be pairwise
    if terms.size == 0:
        return 0.0
    return float(np.cumsum(terms.real)[-1])


def complex_score(u_s, v_r, u_o) -> float:
    """ComplEx: ``Re(sum_d u_s[d] v_r[d] conj(u_o[d]))``."""
    u_s, v_r, u_o = as_complex(u_s), as_complex(v_r), as_complex(u_o)
    _same_dim(u_s, v_r, u_o)
    return _ordered_real_sum(u_s * v_r * np.conj(u_o))


def tcomplex_score(u_s, v_r, u_o, w_t) -> float:
    """TComplEx: ``Re(sum_d u_s[d] v_r[d] conj(u_o[d]) w_t[d])``."""
    u_s, v_r, u_o, w_t = (as_complex(x) for x in (u_s, v_r, u_o, w_t))
    _same_dim(u_s, v_r, u_o, w_t)
    return _ordered_real_sum(u_s * v_r * np.conj(u_o) * w_t)


def tntcomplex_score(u_s, v_r_time, v_r_static, u_o, w_t) -> float:
    """TNTComplEx: temporal part plus a time-insensitive ComplEx part.

    The two parts are reduced separately and then added, so with
    ``v_r_time == 0`` the result equals :func:`complex_score` on the static
    relation exactly.
    """
    u_s, vt, vs, u_o, w_t = (as_complex(x) for x in (u_s, v_r_time, v_r_static, u_o, w_t))
    _same_dim(u_s, vt, vs, u_o, w_t)
    return _ordered_real_sum(u_s * vt * np.conj(u_o) * w_t) + _ordered_real_sum(u_s * vs * np.conj(u_o))


def timeplex_score(u_s, rel: RelationParams, u_o, u_t, w: TimeplexWeights = TimeplexWeights()) -> float:
    """TimePlex base score with a real part taken on each Hermitian product.

    Terms whose weight is exactly zero are skipped, so ``alpha=beta=gamma=0``
    returns :func:`complex_score` of the subject-object part bitwise.
    """
    if rel.model != "timeplex":
        raise ValueError(f"timeplex_score needs timeplex relation params, got {rel.model!r}")
    v_so, v_st, v_ot = rel.vectors
    u_s, u_o, u_t = as_complex(u_s), as_complex(u_o), as_complex(u_t)
    _same_dim(u_s, u_o, u_t, v_so)
    score = _ordered_real_sum(u_s * v_so * np.conj(u_o))
    ct = np.conj(u_t)
    if w.alpha != 0.0:
        score += w.alpha * _ordered_real_sum(u_s * v_st * ct)
    if w.beta != 0.0:
        score += w.beta * _ordered_real_sum(u_o * v_ot * ct)
    if w.gamma != 0.0:
        score += w.gamma * _ordered_real_sum(u_s * u_o * ct)
    return score


def _as_table(table) -> np.ndarray:
    """Accept a complex ``(N, D)`` array or a ``(real, imag)`` pair."""
    if isinstance(table, tuple):
        re, im = table
        return np.asarray(re, dtype=np.float64) + 1j * np.asarray(im, dtype=np.float64)
    arr = np.asarray(table)
    if arr.ndim != 2:
        raise ValueError(f"embedding table must be 2-D, got shape {arr.shape}")
    return arr.astype(np.complex128, copy=False)


def entity_scores(qe_ent, u_s, w_t, entity_table) -> np.ndarray:
    """Score every entity row: ``Re(<u_s, interp(qe_ent), conj(u_e), w_t>)``."""
    q = interp(qe_ent)
    u_s, w_t = as_complex(u_s), as_complex(w_t)
    table = _as_table(entity_table)
    _same_dim(q, u_s, w_t, table)
    p = u_s * q * w_t
    return p.real @ table.real.T + p.imag @ table.imag.T


def time_scores(qe_time, u_s, u_o, timestamp_table) -> np.ndarray:
    """Score every timestamp row: ``Re(<u_s, interp(qe_time), conj(u_o), w_t>)``."""
    q = interp(qe_time)
    u_s, u_o = as_complex(u_s), as_complex(u_o)
    table = _as_table(timestamp_table)
    _same_dim(q, u_s, u_o, table)
    b = u_s * q * np.conj(u_o)
    return b.real @ table.real.T - b.imag @ table.imag.T


def log_softmax(scores: np.ndarray, mask: np.ndarray | None = None, axis: int = -1) -> np.ndarray:
    """Masked log-softmax; masked slots come out as ``-inf``."""
    scores = np.asarray(scores, dtype=np.float64)
    if mask is not None:
        scores = np.where(mask, -np.inf, scores)
    top = np.max(scores, axis=axis, keepdims=True)
    if not np.all(np.isfinite(top)):
        raise ValueError("every slot is masked (or scores are non-finite)")
    shifted = scores - top
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def answer_distribution(entity_scores, time_scores, entity_mask=None, time_mask=None) -> np.ndarray:
    """Softmax over the concatenated entity and time scores.

    ``entity_mask`` / ``time_mask`` flag slots (e.g. DUMMY rows) that must get
    zero probability.
    """
    ent = np.asarray(entity_scores, dtype=np.float64)
    tim = np.asarray(time_scores, dtype=np.float64)
    if not (np.all(np.isfinite(ent)) and np.all(np.isfinite(tim))):
        raise ValueError("scores must be finite")
    scores = np.concatenate([ent, tim], axis=-1)
    mask = None
    if entity_mask is not None or time_mask is not None:
        em = np.zeros(ent.shape, bool) if entity_mask is None else np.broadcast_to(entity_mask, ent.shape)
        tm = np.zeros(tim.shape, bool) if time_mask is None else np.broadcast_to(time_mask, tim.shape)
        mask = np.concatenate([em, tm], axis=-1)
    return np.exp(log_softmax(scores, mask))


# -- gradients ---------------------------------------------------------------


def _product_grads(factors) -> list[np.ndarray]:
    """Gradients of ``Re(sum_d prod_k f_k[d])`` where ``f_k`` is ``z_k`` or ``conj(z_k)``.

    ``factors`` is a list of ``(z, conjugated)``. For an unconjugated factor
    with co-product ``P`` the packed gradient is ``conj(P)``, for a
    conjugated one it is ``P``.
    """
    terms = [np.conj(z) if c else z for z, c in factors]
    grads = []
    for k, (_, conjugated) in enumerate(factors):
        rest = np.ones_like(terms[0])
        for j, t in enumerate(terms):
            if j != k:
                rest = rest * t
        grads.append(rest if conjugated else np.conj(rest))
    return grads


def score_gradients(model: str, **inputs) -> dict[str, np.ndarray]:
    """Analytic gradients of a single score with respect to each input.

    Input names follow the score functions: ``u_s, v_r, u_o`` (complex);
    ``+ w_t`` (tcomplex); ``u_s, v_r_time, v_r_static, u_o, w_t``
    (tntcomplex); ``u_s, v_so, v_st, v_ot, u_o, u_t`` and optional
    ``alpha, beta, gamma`` (timeplex). Any extra vector keyword, such as a
    ``w_t`` passed to ``complex``, is reported with a zero gradient.
    """
    if model not in MODELS:
        raise ValueError(f"unknown model tag {model!r}")
    weights = {k: float(inputs.pop(k, 1.0)) for k in ("alpha", "beta", "gamma")} if model == "timeplex" else {}
    vecs = {k: as_complex(v) for k, v in inputs.items()}
    _same_dim(*vecs.values())
    grads = {k: np.zeros_like(v) for k, v in vecs.items()}

    def need(*names):
        missing = [n for n in names if n not in vecs]
        if missing:
            raise ValueError(f"{model} gradients need inputs {missing}")

    def add(names, conj_flags, scale=1.0):
        gs = _product_grads([(vecs[n], c) for n, c in zip(names, conj_flags)])
        for n, g in zip(names, gs):
            grads[n] = grads[n] + scale * g

    if model == "complex":
        need("u_s", "v_r", "u_o")
        add(("u_s", "v_r", "u_o"), (False, False, True))
    elif model == "tcomplex":
        need("u_s", "v_r", "u_o", "w_t")
        add(("u_s", "v_r", "u_o", "w_t"), (False, False, True, False))
    elif model == "tntcomplex":
        need("u_s", "v_r_time", "v_r_static", "u_o", "w_t")
        add(("u_s", "v_r_time", "u_o", "w_t"), (False, False, True, False))
        add(("u_s", "v_r_static", "u_o"), (False, False, True))
    else:
        need("u_s", "v_so", "v_st", "v_ot", "u_o", "u_t")
        a, b, g = weights["alpha"], weights["beta"], weights["gamma"]
        add(("u_s", "v_so", "u_o"), (False, False, True))
        add(("u_s", "v_st", "u_t"), (False, False, True), a)
        add(("u_o", "v_ot", "u_t"), (False, False, True), b)
        add(("u_s", "u_o", "u_t"), (False, False, True), g)
        ct = np.conj(vecs["u_t"])
        grads["alpha"] = float(np.sum((vecs["u_s"] * vecs["v_st"] * ct).real))
        grads["beta"] = float(np.sum((vecs["u_o"] * vecs["v_ot"] * ct).real))
        grads["gamma"] = float(np.sum((vecs["u_s"] * vecs["u_o"] * ct).real))
    return grads
