"""Hand-written backward pass for a 1-layer, 1-head decoder.

Only the derivative of ``sum(logits)`` with respect to the query projection
is produced; it is the fixture the finite-difference check compares against.
"""
import math

import numpy as np

from pypelab.decoder import RMS_EPS, forward, layer_inputs


def _rms_fwd(x, g):
    r = np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + RMS_EPS)
    return x / r * g, r


def _rms_bwd(dy, x, g, r):
    d = x.shape[-1]
    gy = dy * g
    return gy / r - x * np.sum(gy * x, axis=-1, keepdims=True) / (d * r**3)


def _rotate_pairs(v, angles):
    out = np.empty_like(v)
    c, s = np.cos(angles), np.sin(angles)
    out[:, 0::2] = v[:, 0::2] * c - v[:, 1::2] * s
    out[:, 1::2] = v[:, 0::2] * s + v[:, 1::2] * c
    return out


def grad_wq(state, token_ids, layout, schedule):
    cfg = state.config
    assert cfg.num_layers == 1 and cfg.num_heads == 1
    lw = state.layers[0]
    _, pos, mask = layer_inputs(cfg, layout, schedule, 1)
    D = cfg.head_dim
    freqs = cfg.rotary_base ** (-np.arange(0, D, 2) / D)
    angles = pos[:, None] * freqs[None, :]

    x0 = state.embed[np.asarray(token_ids)]
    n1, r1 = _rms_fwd(x0, lw.attn_norm)
    q, k, v = n1 @ lw.wq, n1 @ lw.wk, n1 @ lw.wv
    qr, kr = _rotate_pairs(q, angles), _rotate_pairs(k, angles)
    s = (qr @ kr.T) / math.sqrt(D)
    s = np.where(mask, s, -np.inf)
    p = np.exp(s - s.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    a = p @ v
    x1 = x0 + a @ lw.wo
    n2, r2 = _rms_fwd(x1, lw.ffn_norm)
    u = n2 @ lw.w_up
    sig = 1.0 / (1.0 + np.exp(-u))
    x2 = x1 + (u * sig) @ lw.w_down
    _, rf = _rms_fwd(x2, state.final_norm)

    d_nf = np.ones((x2.shape[0], cfg.vocab_size)) @ state.lm_head.T
    dx2 = _rms_bwd(d_nf, x2, state.final_norm, rf)
    dact = dx2 @ lw.w_down.T
    du = dact * (sig + u * sig * (1.0 - sig))
    dx1 = dx2 + _rms_bwd(du @ lw.w_up.T, x1, lw.ffn_norm, r2)
    da = dx1 @ lw.wo.T
    dp = da @ v.T
    ds = p * (dp - np.sum(dp * p, axis=1, keepdims=True))
    dqr = ds @ kr / math.sqrt(D)
    dq = _rotate_pairs(dqr, -angles)
    return n1.T @ dq


def finite_difference_wq(state, token_ids, layout, schedule, i, j, h=1e-5):
    """Central difference of ``sum(logits)`` in ``wq[i, j]``."""
    from dataclasses import replace

    def loss(delta):
        lw = state.layers[0]
        wq = lw.wq.copy()
        wq[i, j] += delta
        bumped = replace(state, layers=(replace(lw, wq=wq),))
        logits, _ = forward(bumped, token_ids, layout, schedule)
        return logits.sum()

    return (loss(h) - loss(-h)) / (2 * h)
