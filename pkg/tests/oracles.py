"""Naive reference implementations used as test oracles.

Each oracle works on plain Python floats with explicit per-dimension loops
and shares no code with the library.
"""
from __future__ import annotations

import math


def _c(z):
    return complex(z)


def complex_oracle(u_s, v_r, u_o):
    total = 0.0
    for a, b, c in zip(u_s, v_r, u_o):
        total += (_c(a) * _c(b) * _c(c).conjugate()).real
    return total


def tcomplex_oracle(u_s, v_r, u_o, w_t):
    total = 0.0
    for a, b, c, d in zip(u_s, v_r, u_o, w_t):
        total += (_c(a) * _c(b) * _c(c).conjugate() * _c(d)).real
    return total


def tntcomplex_oracle(u_s, v_time, v_static, u_o, w_t):
    total = 0.0
    for a, bt, bs, c, d in zip(u_s, v_time, v_static, u_o, w_t):
        total += (_c(a) * _c(bt) * _c(c).conjugate() * _c(d)).real
        total += (_c(a) * _c(bs) * _c(c).conjugate()).real
    return total


def timeplex_oracle(u_s, v_so, v_st, v_ot, u_o, u_t, alpha, beta, gamma):
    total = 0.0
    for a, so, st, ot, c, t in zip(u_s, v_so, v_st, v_ot, u_o, u_t):
        ct = _c(t).conjugate()
        total += (_c(a) * _c(so) * _c(c).conjugate()).real
        total += alpha * (_c(a) * _c(st) * ct).real
        total += beta * (_c(c) * _c(ot) * ct).real
        total += gamma * (_c(a) * _c(c) * ct).real
    return total


def interp_oracle(x):
    d = len(x) // 2
    return [complex(x[i], x[d + i]) for i in range(d)]


def entity_scores_oracle(qe, u_s, w_t, table):
    q = interp_oracle(qe)
    return [tcomplex_oracle(u_s, q, row, w_t) for row in table]


def time_scores_oracle(qe, u_s, u_o, table):
    q = interp_oracle(qe)
    return [tcomplex_oracle(u_s, q, u_o, row) for row in table]


def softmax_oracle(scores, masked=()):
    live = [s for i, s in enumerate(scores) if i not in masked]
    top = max(live)
    exps = [0.0 if i in masked else math.exp(s - top) for i, s in enumerate(scores)]
    z = sum(exps)
    return [e / z for e in exps]


def harmonic_mrr_oracle(n):
    return sum(1.0 / k for k in range(1, n + 1)) / n


def filtered_rank_oracle(scores, target, known):
    """1 + number of non-filtered candidates (DUMMY excluded) scoring above the target."""
    better = 0
    for o in range(1, len(scores)):
        if o == target or o in known:
            continue
        if scores[o] > scores[target]:
            better += 1
    return 1 + better


def hits_oracle(ranked, gold, k, mode="any"):
    top = list(ranked)[:k]
    found = sum(1 for g in set(gold) if g in top)
    need = 1 if mode == "any" else min(k, len(set(gold)))
    return 1 if found >= need else 0


def central_difference(f, x, h=1e-5):
    """Gradient of real ``f`` at real array ``x`` by central differences (x is restored)."""
    import numpy as np

    g = np.zeros_like(x, dtype=float)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def complex_central_difference(f, z, h=1e-5):
    """Packed gradient dRe + i dIm of real ``f`` at complex array ``z`` (z is restored)."""
    import numpy as np

    g = np.zeros_like(z)
    flat, gflat = z.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        parts = []
        for step in (h, 1j * h):
            flat[i] = old + step
            fp = f()
            flat[i] = old - step
            fm = f()
            parts.append((fp - fm) / (2 * h))
        flat[i] = old
        gflat[i] = parts[0] + 1j * parts[1]
    return g
