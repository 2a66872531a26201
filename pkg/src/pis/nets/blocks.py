"""Building blocks: parameter store, attention, set-attention, embeddings.

Blocks register named parameters into a shared ParamStore at construction
and are pure functions of (params, inputs) afterwards, so a checkpoint is
just the store's name -> array table.
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor


class ParamStore(dict):
    """Named parameter tensors; names are unique and insertion-ordered."""

    def add(self, name, array):
        if name in self:
            raise ValueError(f"duplicate parameter name '{name}'")
        t = Tensor(np.asarray(array, dtype=np.float32), requires_grad=True)
        self[name] = t
        return t

    def zero_grads(self):
        for p in self.values():
            p.grad = None

    def n_params(self):
        return sum(p.data.size for p in self.values())


def he_init(rng, shape, fan_in):
    return rng.standard_normal(shape).astype(np.float32) * np.sqrt(2.0 / fan_in)


class Linear:
    def __init__(self, store, name, d_in, d_out, rng, zero=False, bias=True):
        w = np.zeros((d_in, d_out)) if zero else he_init(rng, (d_in, d_out), d_in)
        self.w = store.add(f"{name}.w", w)
        self.b = store.add(f"{name}.b", np.zeros(d_out)) if bias else None

    def __call__(self, x):
        y = ad.matmul(x, self.w)
        return ad.add(y, self.b) if self.b is not None else y


class LayerNorm:
    def __init__(self, store, name, dim):
        self.g = store.add(f"{name}.g", np.ones(dim))
        self.b = store.add(f"{name}.b", np.zeros(dim))

    def __call__(self, x):
        return ad.layer_norm(x, self.g, self.b)


class Conv:
    """Channels-last 2-d conv; weights stored (k, k, c_in, c_out)."""

    def __init__(self, store, name, c_in, c_out, k, rng, zero=False, bias=True):
        fan = c_in * k * k
        w = np.zeros((k, k, c_in, c_out)) if zero else he_init(rng, (k, k, c_in, c_out), fan)
        self.w = store.add(f"{name}.w", w)
        self.b = store.add(f"{name}.b", np.zeros(c_out)) if bias else None
        self.pad = k // 2

    def __call__(self, x):
        return ad.conv2d(x, self.w, self.b, stride=1, pad=self.pad)


class MultiHeadAttention:
    """softmax(QK^T / sqrt(d_head)) V with separate projections."""

    def __init__(self, store, name, dim, heads, rng, kv_dim=None):
        kv_dim = kv_dim or dim
        self.heads = heads
        self.dim = dim
        self.q = Linear(store, f"{name}.q", dim, dim, rng)
        self.k = Linear(store, f"{name}.k", kv_dim, dim, rng)
        self.v = Linear(store, f"{name}.v", kv_dim, dim, rng)
        self.o = Linear(store, f"{name}.o", dim, dim, rng)

    def _split(self, x, b, n):
        dh = self.dim // self.heads
        x = ad.reshape(x, (b, n, self.heads, dh))
        x = ad.transpose(x, (0, 2, 1, 3))
        return ad.reshape(x, (b * self.heads, n, dh))

    def __call__(self, query, context):
        b, nq, _ = query.shape
        nk = context.shape[1]
        dh = self.dim // self.heads
        q = self._split(self.q(query), b, nq)
        k = self._split(self.k(context), b, nk)
        v = self._split(self.v(context), b, nk)
        logits = ad.scale(ad.matmul(q, ad.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(dh))
        attn = ad.softmax(logits, axis=-1)
        out = ad.matmul(attn, v)
        out = ad.reshape(out, (b, self.heads, nq, dh))
        out = ad.transpose(out, (0, 2, 1, 3))
        return self.o(ad.reshape(out, (b, nq, self.dim)))


class MAB:
    """LayerNorm(A + ff(A)) with A = LayerNorm(X + MHA(X, Y, Y))."""

    def __init__(self, store, name, dim, heads, rng):
        self.attn = MultiHeadAttention(store, f"{name}.attn", dim, heads, rng)
        self.ln1 = LayerNorm(store, f"{name}.ln1", dim)
        self.ln2 = LayerNorm(store, f"{name}.ln2", dim)
        self.ff1 = Linear(store, f"{name}.ff1", dim, dim, rng)
        self.ff2 = Linear(store, f"{name}.ff2", dim, dim, rng)

    def __call__(self, x, y):
        a = self.ln1(ad.add(x, self.attn(x, y)))
        f = self.ff2(ad.silu(self.ff1(a)))
        return self.ln2(ad.add(a, f))


class SAB:
    def __init__(self, store, name, dim, heads, rng):
        self.mab = MAB(store, name, dim, heads, rng)

    def __call__(self, x):
        return self.mab(x, x)


class ISAB:
    """mab(X, mab(I, X)) with M learned inducing points: linear in |X|."""

    def __init__(self, store, name, dim, heads, m_inducing, rng):
        self.inducing = store.add(f"{name}.inducing",
                                  rng.standard_normal((m_inducing, dim)) * 0.5)
        self.mab1 = MAB(store, f"{name}.mab1", dim, heads, rng)
        self.mab2 = MAB(store, f"{name}.mab2", dim, heads, rng)

    def __call__(self, x):
        b = x.shape[0]
        m, d = self.inducing.shape
        ind = ad.expand(ad.reshape(self.inducing, (1, m, d)), (b, m, d))
        h = self.mab1(ind, x)
        return self.mab2(x, h)


class PMA:
    """mab(S, ff(X)) pooling onto learned seed vectors."""

    def __init__(self, store, name, dim, heads, n_seeds, rng, seed_init=None):
        init = seed_init if seed_init is not None \
            else rng.standard_normal((n_seeds, dim)) * 0.5
        self.seeds = store.add(f"{name}.seeds", init)
        self.ff = Linear(store, f"{name}.ff", dim, dim, rng)
        self.mab = MAB(store, f"{name}.mab", dim, heads, rng)

    def __call__(self, x):
        b = x.shape[0]
        k, d = self.seeds.shape
        seeds = ad.expand(ad.reshape(self.seeds, (1, k, d)), (b, k, d))
        return self.mab(seeds, ad.silu(self.ff(x)))


def sinusoidal_positions_2d(n_side, dim):
    """2-d sin/cos positional table for an n_side x n_side grid, (n^2, dim)."""
    half = dim // 2
    quarter = max(half // 2, 1)
    freqs = np.exp(np.linspace(0.0, np.log(100.0), quarter))
    pos = np.linspace(0.0, 1.0, n_side)
    out = np.zeros((n_side, n_side, dim), dtype=np.float64)
    ang_y = pos[:, None] * freqs[None, :]
    ang_x = pos[:, None] * freqs[None, :]
    for i in range(n_side):
        for j in range(n_side):
            row = np.concatenate([np.sin(ang_y[i]), np.cos(ang_x[j]),
                                  np.cos(ang_y[i]), np.sin(ang_x[j])])
            out[i, j, :] = row[:dim]
    return out.reshape(n_side * n_side, dim)


def time_features(t, dim):
    """Sinusoidal features of scalar times t (B,) -> (B, dim) numpy array."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float32))
    half = dim // 2
    freqs = np.exp(np.linspace(np.log(1.0), np.log(100.0), half)).astype(np.float32)
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class TimeEmbed:
    """Sinusoidal features followed by a 2-layer SiLU MLP."""

    def __init__(self, store, name, feat_dim, out_dim, rng):
        self.feat_dim = feat_dim
        self.l1 = Linear(store, f"{name}.l1", feat_dim, out_dim, rng)
        self.l2 = Linear(store, f"{name}.l2", out_dim, out_dim, rng)

    def __call__(self, t):
        feats = Tensor(time_features(t, self.feat_dim))
        return self.l2(ad.silu(self.l1(feats)))
