"""Central finite-difference gradient checks, run in float64."""

from __future__ import annotations

import numpy as np

from .autodiff import GradTape, Tensor, backward


def fd_check(fn, tensors, eps=1e-5):
    """Max relative error between tape gradients and central differences.

    ``fn(*tensors)`` must build a scalar Tensor. Inputs should be float64;
    the harness perturbs each element of each requires-grad input in turn.
    """
    for t in tensors:
        t.zero_grad()
    with GradTape() as tape:
        loss = fn(*tensors)
        backward(tape, loss)
    worst = 0.0
    for t in tensors:
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(fn(*tensors).data)
            flat[i] = orig - eps
            fm = float(fn(*tensors).data)
            flat[i] = orig
            num = (fp - fm) / (2 * eps)
            ana = float(analytic.reshape(-1)[i])
            denom = max(abs(num), abs(ana), 1e-4)
            worst = max(worst, abs(num - ana) / denom)
    return worst


def make_inputs(rng, *shapes, lo=-1.0, hi=1.0):
    """Small float64 requires-grad tensors for gradient checks."""
    return [Tensor(rng.uniform(lo, hi, s).astype(np.float64), requires_grad=True)
            for s in shapes]
