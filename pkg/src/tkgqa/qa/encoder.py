"""A small pre-LayerNorm transformer encoder with hand-written backpropagation.

Each layer computes::

    x = x + MHA(LN1(x))
    x = x + W2 gelu(W1 LN2(x) + b1) + b2

and the encoder returns ``LNf(x)[:, 0]``, the state at the leading pooling
position. GELU uses the tanh approximation. Padding positions are excluded
as attention keys.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_GELU_C = np.sqrt(2.0 / np.pi)
_NEG = -1e30
LN_EPS = 1e-5


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    d_model: int = 128
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    max_len: int = 40

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        for name in ("vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


def init_encoder(cfg: EncoderConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    d, f = cfg.d_model, cfg.d_ff

    def dense(n_in, n_out):
        return rng.standard_normal((n_in, n_out)) * np.sqrt(1.0 / n_in)

    p = {"tok": rng.standard_normal((cfg.vocab_size, d)) * 0.1,
         "pos": rng.standard_normal((cfg.max_len, d)) * 0.1}
    for layer in range(cfg.n_layers):
        k = f"l{layer}."
        p[k + "ln1_g"], p[k + "ln1_b"] = np.ones(d), np.zeros(d)
        for name in ("wq", "wk", "wv", "wo"):
            p[k + name] = dense(d, d)
        for name in ("bq", "bk", "bv", "bo"):
            p[k + name] = np.zeros(d)
        p[k + "ln2_g"], p[k + "ln2_b"] = np.ones(d), np.zeros(d)
        p[k + "w1"], p[k + "b1"] = dense(d, f), np.zeros(f)
        p[k + "w2"], p[k + "b2"] = dense(f, d) / np.sqrt(2 * cfg.n_layers), np.zeros(d)
    p["lnf_g"], p["lnf_b"] = np.ones(d), np.zeros(d)
    return p


def _ln_forward(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _ln_backward(dy, g, cache):
    xhat, inv = cache
    dg = (dy * xhat).sum(0)
    db = dy.sum(0)
    dxh = dy * g
    dx = inv * (dxh - dxh.mean(-1, keepdims=True) - xhat * (dxh * xhat).mean(-1, keepdims=True))
    return dx, dg, db


def _gelu(u):
    th = np.tanh(_GELU_C * (u + 0.044715 * (u * u * u)))
    return 0.5 * u * (1.0 + th), th


def _gelu_grad(u, th):
    return 0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * _GELU_C * (1.0 + 3 * 0.044715 * u * u)


def encode(params: dict, cfg: EncoderConfig, ids: np.ndarray, mask: np.ndarray, keep_cache: bool = False):
    """Pooled representations ``(B, d_model)`` (and the backward cache if asked).

    Only the pooling position feeds the output, so the last layer computes
    queries and the feed-forward block for position 0 alone.
    """
    bsz, length = ids.shape
    if length > cfg.max_len:
        raise ValueError(f"sequence length {length} exceeds max_len {cfg.max_len}")
    h_, dh = cfg.n_heads, cfg.d_model // cfg.n_heads
    d = cfg.d_model
    x = (params["tok"][ids] + params["pos"][:length]).reshape(bsz * length, d)
    key_bias = np.where(mask, 0.0, _NEG)[:, None, None, :]
    caches = []
    for layer in range(cfg.n_layers):
        k = f"l{layer}."
        n_q = 1 if layer == cfg.n_layers - 1 else length
        h, ln1 = _ln_forward(x, params[k + "ln1_g"], params[k + "ln1_b"])
        hq = h.reshape(bsz, length, d)[:, :n_q].reshape(bsz * n_q, d)

        def split(z, n_pos):
            return z.reshape(bsz, n_pos, h_, dh).transpose(0, 2, 1, 3)

        q = split(hq @ params[k + "wq"] + params[k + "bq"], n_q)
        kk = split(h @ params[k + "wk"] + params[k + "bk"], length)
        v = split(h @ params[k + "wv"] + params[k + "bv"], length)
        s = q @ kk.transpose(0, 1, 3, 2) / np.sqrt(dh) + key_bias
        s = s - s.max(-1, keepdims=True)
        a = np.exp(s)
        a /= a.sum(-1, keepdims=True)
        ctx = (a @ v).transpose(0, 2, 1, 3).reshape(bsz * n_q, d)
        if n_q != length:
            x = x.reshape(bsz, length, d)[:, :n_q].reshape(bsz * n_q, d)
        x = x + ctx @ params[k + "wo"] + params[k + "bo"]
        h2, ln2 = _ln_forward(x, params[k + "ln2_g"], params[k + "ln2_b"])
        u = h2 @ params[k + "w1"] + params[k + "b1"]
        gl, th = _gelu(u)
        x = x + gl @ params[k + "w2"] + params[k + "b2"]
        if keep_cache:
            caches.append((n_q, h, hq, ln1, q, kk, v, a, ctx, h2, ln2, u, gl, th))
    pooled, lnf = _ln_forward(x, params["lnf_g"], params["lnf_b"])
    if keep_cache:
        return pooled, (ids, caches, lnf, length)
    return pooled


def encode_backward(params: dict, cfg: EncoderConfig, cache, d_pooled: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of every encoder parameter given ``dL/d pooled``."""
    ids, caches, lnf, length = cache
    bsz = ids.shape[0]
    h_, dh = cfg.n_heads, cfg.d_model // cfg.n_heads
    d = cfg.d_model
    grads: dict[str, np.ndarray] = {}
    dx, grads["lnf_g"], grads["lnf_b"] = _ln_backward(d_pooled, params["lnf_g"], lnf)
    for layer in reversed(range(cfg.n_layers)):
        k = f"l{layer}."
        n_q, h, hq, ln1, q, kk, v, a, ctx, h2, ln2, u, gl, th = caches[layer]
        # feed-forward block
        grads[k + "w2"] = gl.T @ dx
        grads[k + "b2"] = dx.sum(0)
        du = (dx @ params[k + "w2"].T) * _gelu_grad(u, th)
        grads[k + "w1"] = h2.T @ du
        grads[k + "b1"] = du.sum(0)
        dln, grads[k + "ln2_g"], grads[k + "ln2_b"] = _ln_backward(du @ params[k + "w1"].T, params[k + "ln2_g"], ln2)
        dx = dx + dln
        # attention block
        grads[k + "wo"] = ctx.T @ dx
        grads[k + "bo"] = dx.sum(0)
        dctx = (dx @ params[k + "wo"].T).reshape(bsz, n_q, h_, dh).transpose(0, 2, 1, 3)
        da = dctx @ v.transpose(0, 1, 3, 2)
        dv = a.transpose(0, 1, 3, 2) @ dctx
        ds = a * (da - (da * a).sum(-1, keepdims=True)) / np.sqrt(dh)
        dq = ds @ kk
        dk = ds.transpose(0, 1, 3, 2) @ q

        def merge(z, n_pos):
            return z.transpose(0, 2, 1, 3).reshape(bsz * n_pos, d)

        dq, dk, dv = merge(dq, n_q), merge(dk, length), merge(dv, length)
        grads[k + "wq"], grads[k + "bq"] = hq.T @ dq, dq.sum(0)
        grads[k + "wk"], grads[k + "bk"] = h.T @ dk, dk.sum(0)
        grads[k + "wv"], grads[k + "bv"] = h.T @ dv, dv.sum(0)
        dh_in = dk @ params[k + "wk"].T + dv @ params[k + "wv"].T
        dhq = dq @ params[k + "wq"].T
        if n_q != length:
            dh_in = dh_in.reshape(bsz, length, d)
            dh_in[:, :n_q] += dhq.reshape(bsz, n_q, d)
            dh_in = dh_in.reshape(bsz * length, d)
            resid = np.zeros((bsz, length, d))
            resid[:, :n_q] = dx.reshape(bsz, n_q, d)
            dx = resid.reshape(bsz * length, d)
        else:
            dh_in += dhq
        dln, grads[k + "ln1_g"], grads[k + "ln1_b"] = _ln_backward(dh_in, params[k + "ln1_g"], ln1)
        dx = dx + dln
    dtok = np.zeros_like(params["tok"])
    np.add.at(dtok, ids.reshape(-1), dx)
    grads["tok"] = dtok
    dpos = np.zeros_like(params["pos"])
    dpos[:length] = dx.reshape(bsz, length, d).sum(0)
    grads["pos"] = dpos
    return grads
