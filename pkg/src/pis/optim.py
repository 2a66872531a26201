"""Adam with bias correction and optional global gradient-norm clipping."""

from __future__ import annotations

import math

import numpy as np


class AdamState:
    """Per-parameter moment buffers plus a strictly increasing step counter."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}


def global_grad_norm(params):
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    return math.sqrt(total)


def clip_grad_norm(params, max_norm):
    """Scale all gradients so the global L2 norm is at most max_norm."""
    norm = global_grad_norm(params)
    if norm > max_norm:
        factor = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= np.float32(factor)
    return norm


def adam_step(params, state, lr=None, clip=None):
    """In-place Adam update of params from their .grad buffers.

    Zero-gradient parameters still decay their moments, matching the
    standard update. Missing gradients are treated as zero.
    """
    if lr is None:
        lr = state.lr
    if clip is not None:
        clip_grad_norm(params, clip)
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for k, p in params.items():
        g = p.grad if p.grad is not None else 0.0
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        mhat = m / bc1
        vhat = v / bc2
        p.data -= (lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.data.dtype)
