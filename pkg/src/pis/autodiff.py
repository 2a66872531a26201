"""Reverse-mode automatic differentiation over dense numpy arrays.

Ops run in the dtype of their inputs (float32 for training, float64 for the
gradient-check harness). When a ``GradTape`` is active and any input requires
grad, the op appends a backward closure to the tape; ``backward`` replays the
tape in reverse, accumulating into ``.grad`` buffers. Without an active tape
ops are plain numpy calls, which is the inference fast path.

Broadcasting is deliberately narrow: equal shapes, scalar operands, or a
trailing-shape operand broadcast over leading batch axes. Anything richer
goes through the explicit ``expand`` op.
"""

from __future__ import annotations

import math
import threading

import numpy as np
from scipy.special import erf, expit

__all__ = [
    "Tensor", "GradTape", "ShapeError", "NonFiniteError", "backward",
    "add", "sub", "mul", "neg", "scale", "shift", "matmul", "conv2d",
    "transpose", "reshape", "concat", "narrow", "expand", "softmax",
    "layer_norm", "group_norm", "silu", "gelu", "mean", "tsum", "variance",
    "upsample_nearest", "upsample_bilinear", "avgpool2x2", "dropout",
]


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


_state = threading.local()


def _tape_stack():
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


class GradTape:
    """Ordered record of executed ops; a context manager.

    Nodes are appended in execution order, so inputs always precede the ops
    that consume them; the backward pass walks the list once, in reverse.
    """

    def __init__(self):
        self.nodes = []  # (output Tensor, backward closure)

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().remove(self)
        return False


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


def _check_finite(op, arr):
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{op}: non-finite values in output")


class Tensor:
    """Dense float array plus optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
            if self.grad.shape != self.data.shape:
                self.grad = np.broadcast_to(self.grad, self.data.shape).copy()
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    # operator sugar; scalars allowed on the right
    def __add__(self, other):
        return shift(self, other) if np.isscalar(other) else add(self, other)

    def __radd__(self, other):
        return shift(self, other)

    def __sub__(self, other):
        return shift(self, -other) if np.isscalar(other) else sub(self, other)

    def __mul__(self, other):
        return scale(self, other) if np.isscalar(other) else mul(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _record(out, needs, fn):
    tape = _active_tape()
    if tape is not None and needs:
        out.requires_grad = True
        tape.nodes.append((out, fn))
    return out


def _needs(*tensors):
    return _active_tape() is not None and any(t.requires_grad for t in tensors)


def backward(tape, loss):
    """Populate ``.grad`` on every requires-grad tensor reachable from loss.

    The tape is consumed: its node list is cleared after the pass.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not tape.nodes:
        raise ValueError("backward: empty tape")
    loss.grad = np.ones_like(loss.data)
    for out, fn in reversed(tape.nodes):
        if out.grad is not None:
            fn(out.grad)
    tape.nodes.clear()


# ---------------------------------------------------------------------------
# broadcasting helpers (scalar or trailing-suffix shapes only)

def _bcastable(sa, sb):
    if sa == sb:
        return True
    if int(np.prod(sb)) == 1 or int(np.prod(sa)) == 1:
        return True
    if len(sb) < len(sa) and sa[len(sa) - len(sb):] == sb:
        return True
    if len(sa) < len(sb) and sb[len(sb) - len(sa):] == sa:
        return True
    return False


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (inverse of leading-axis broadcast)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    # remaining per-axis broadcast (size-1 dims)
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss != gs)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary_shapes(op, a, b):
    if not _bcastable(a.shape, b.shape):
        raise ShapeError(f"{op}: incompatible shapes {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b):
    _binary_shapes("add", a, b)
    out = Tensor(a.data + b.data)
    _check_finite("add", out.data)

    def fn(g):
        a._accum(_unbroadcast(g, a.shape))
        b._accum(_unbroadcast(g, b.shape))

    return _record(out, _needs(a, b), fn)


def sub(a, b):
    _binary_shapes("sub", a, b)
    out = Tensor(a.data - b.data)
    _check_finite("sub", out.data)

    def fn(g):
        a._accum(_unbroadcast(g, a.shape))
        b._accum(-_unbroadcast(g, b.shape))

    return _record(out, _needs(a, b), fn)


def mul(a, b):
    _binary_shapes("mul", a, b)
    out = Tensor(a.data * b.data)
    _check_finite("mul", out.data)

    def fn(g):
        a._accum(_unbroadcast(g * b.data, a.shape))
        b._accum(_unbroadcast(g * a.data, b.shape))

    return _record(out, _needs(a, b), fn)


def neg(a):
    out = Tensor(-a.data)

    def fn(g):
        a._accum(-g)

    return _record(out, _needs(a), fn)


def scale(a, c):
    c = float(c)
    out = Tensor(a.data * a.data.dtype.type(c))
    _check_finite("scale", out.data)

    def fn(g):
        a._accum(g * a.data.dtype.type(c))

    return _record(out, _needs(a), fn)


def shift(a, c):
    c = float(c)
    out = Tensor(a.data + a.data.dtype.type(c))
    _check_finite("shift", out.data)

    def fn(g):
        a._accum(g)

    return _record(out, _needs(a), fn)


# ---------------------------------------------------------------------------
# matmul / conv

def matmul(a, b):
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul: need >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    out = Tensor(np.matmul(a.data, b.data))
    _check_finite("matmul", out.data)

    def fn(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accum(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accum(_unbroadcast(gb, b.shape))

    return _record(out, _needs(a, b), fn)


def _scratch(slot, shape, dtype):
    """Reusable per-thread work buffers; DRAM here is slow, caches are not,
    so keeping the im2col matrices in recycled (cache-warm) pages matters."""
    if not hasattr(_state, "scratch"):
        _state.scratch = {}
    need = int(np.prod(shape))
    key = (slot, np.dtype(dtype).str)
    buf = _state.scratch.get(key)
    if buf is None or buf.size < need:
        buf = np.empty(max(need, 1), dtype=dtype)
        _state.scratch[key] = buf
    return buf[:need].reshape(shape)


def _im2col_into(col, xp, kh, kw, stride, oh, ow):
    # col (B, OH, OW, kh, kw*C); one strided copy per kernel row keeps source
    # and destination runs contiguous over kw*C elements
    B, Hp, Wp, C = xp.shape
    sB, sH, sW, sC = xp.strides
    for i in range(kh):
        src = np.lib.stride_tricks.as_strided(
            xp[:, i:, :, :], shape=(B, oh, ow, kw * C),
            strides=(sB, sH * stride, sW * stride, sC))
        col[:, :, :, i, :] = src


def _conv_block_size(b, per_sample_bytes, budget=3 << 20):
    return max(1, min(b, budget // max(per_sample_bytes, 1)))


def _pad_nhwc(x, pad):
    if pad == 0:
        return x
    B, H, W, C = x.shape
    xp = np.zeros((B, H + 2 * pad, W + 2 * pad, C), dtype=x.dtype)
    xp[:, pad:pad + H, pad:pad + W, :] = x
    return xp


def conv2d(x, w, bias=None, stride=1, pad=0):
    """2-d cross-correlation, channels last: x (B,H,W,Cin), w (kh,kw,Cin,Cout)."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: need 4-d x and w, got {x.shape} and {w.shape}")
    if x.shape[3] != w.shape[2]:
        raise ShapeError(f"conv2d: channel mismatch, x {x.shape} vs w {w.shape}")
    B, H, W, Cin = x.shape
    kh, kw, _, Cout = w.shape
    OH = (H + 2 * pad - kh) // stride + 1
    OW = (W + 2 * pad - kw) // stride + 1
    kcols = kh * kw * Cin
    wmat = w.data.reshape(-1, Cout)
    xp = _pad_nhwc(x.data, pad)
    bs = _conv_block_size(B, OH * OW * kcols * xp.itemsize)
    y = np.empty((B, OH, OW, Cout), dtype=xp.dtype)
    for lo in range(0, B, bs):
        hi = min(lo + bs, B)
        nb = hi - lo
        col = _scratch("col", (nb, OH, OW, kh, kw * Cin), xp.dtype)
        _im2col_into(col, xp[lo:hi], kh, kw, stride, OH, OW)
        np.matmul(col.reshape(nb * OH * OW, kcols), wmat,
                  out=y[lo:hi].reshape(nb * OH * OW, Cout))
    if bias is not None:
        y += bias.data
    out = Tensor(y)
    _check_finite("conv2d", out.data)
    tensors = (x, w) if bias is None else (x, w, bias)

    def fn(g):
        if bias is not None and bias.requires_grad:
            bias._accum(g.reshape(-1, Cout).sum(axis=0).reshape(bias.shape))
        need_w = w.requires_grad
        need_x = x.requires_grad
        if not (need_w or need_x):
            return
        xpb = _pad_nhwc(x.data, pad)
        gw = np.zeros((kcols, Cout), dtype=g.dtype) if need_w else None
        gxp = np.zeros((B, H + 2 * pad, W + 2 * pad, Cin), dtype=g.dtype) \
            if need_x else None
        wmat_g = wmat.astype(g.dtype, copy=False)
        for lo in range(0, B, bs):
            hi = min(lo + bs, B)
            nb = hi - lo
            gm = g[lo:hi].reshape(nb * OH * OW, Cout)
            if need_w:
                col = _scratch("col", (nb, OH, OW, kh, kw * Cin), g.dtype)
                _im2col_into(col, xpb[lo:hi], kh, kw, stride, OH, OW)
                gw += col.reshape(nb * OH * OW, kcols).T @ gm
            if need_x:
                gcol = _scratch("gcol", (nb * OH * OW, kcols), g.dtype)
                np.matmul(gm, wmat_g.T, out=gcol)
                gc = gcol.reshape(nb, OH, OW, kh, kw, Cin)
                for i in range(kh):
                    for j in range(kw):
                        gxp[lo:hi, i:i + stride * OH:stride,
                            j:j + stride * OW:stride, :] += gc[:, :, :, i, j, :]
        if need_w:
            w._accum(gw.reshape(w.shape))
        if need_x:
            x._accum(gxp[:, pad:pad + H, pad:pad + W, :] if pad else gxp)

    return _record(out, _needs(*tensors), fn)


# ---------------------------------------------------------------------------
# shape ops

def transpose(a, axes):
    axes = tuple(axes)
    out = Tensor(np.ascontiguousarray(a.data.transpose(axes)))
    inv = tuple(np.argsort(axes))

    def fn(g):
        a._accum(g.transpose(inv))

    return _record(out, _needs(a), fn)


def reshape(a, shape):
    shape = tuple(shape)
    out = Tensor(a.data.reshape(shape))

    def fn(g):
        a._accum(g.reshape(a.shape))

    return _record(out, _needs(a), fn)


def concat(tensors, axis=0):
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def fn(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            t._accum(g[tuple(idx)])

    return _record(out, _needs(*tensors), fn)


def narrow(a, axis, start, length):
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = Tensor(np.ascontiguousarray(a.data[idx]))

    def fn(g):
        ga = np.zeros_like(a.data)
        ga[idx] = g
        a._accum(ga)

    return _record(out, _needs(a), fn)


def expand(a, shape):
    shape = tuple(shape)
    try:
        np.broadcast_shapes(a.shape, shape)
    except ValueError:
        raise ShapeError(f"expand: cannot expand {a.shape} to {shape}")
    out = Tensor(np.broadcast_to(a.data, shape).copy())

    def fn(g):
        a._accum(_unbroadcast(g, a.shape))

    return _record(out, _needs(a), fn)


# ---------------------------------------------------------------------------
# normalization / activations

def softmax(a, axis=-1):
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)
    _check_finite("softmax", out.data)

    def fn(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        a._accum(y * (g - dot))

    return _record(out, _needs(a), fn)


def layer_norm(a, gain, bias, eps=1e-5):
    """Normalize over the last axis, then per-feature affine."""
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + a.data.dtype.type(eps))
    xhat = (a.data - mu) * inv
    out = Tensor(xhat * gain.data + bias.data)
    _check_finite("layer_norm", out.data)
    n = a.shape[-1]

    def fn(g):
        if gain.requires_grad:
            gain._accum((g * xhat).reshape(-1, n).sum(axis=0))
        if bias.requires_grad:
            bias._accum(g.reshape(-1, n).sum(axis=0))
        if a.requires_grad:
            gg = g * gain.data
            a._accum(inv * (gg - gg.mean(axis=-1, keepdims=True)
                            - xhat * (gg * xhat).mean(axis=-1, keepdims=True)))

    return _record(out, _needs(a, gain, bias), fn)


def _group_channel_means(xr, groups, cg):
    """Per-group means of (B, HW, C) data, expanded back to per-channel (B, C)."""
    s = xr.sum(axis=1)                                 # (B, C): contiguous reduce
    gm = s.reshape(-1, groups, cg).sum(axis=2) / (xr.shape[1] * cg)
    return np.repeat(gm, cg, axis=1)


def group_norm(a, groups, gain, bias, eps=1e-5):
    """Per-sample, per-group normalization of (B, H, W, C); affine per channel."""
    B, H, W, C = a.shape
    if C % groups:
        raise ShapeError(f"group_norm: {C} channels not divisible by {groups} groups")
    cg = C // groups
    dt = a.data.dtype.type
    xr = a.data.reshape(B, H * W, C)
    mu_c = _group_channel_means(xr, groups, cg)        # (B, C)
    var_c = np.maximum(_group_channel_means(xr * xr, groups, cg) - mu_c * mu_c, 0.0)
    inv_c = (1.0 / np.sqrt(var_c + dt(eps))).astype(a.data.dtype)
    xhat = ((xr - mu_c[:, None, :]) * inv_c[:, None, :]).reshape(B, H, W, C)
    out = Tensor(xhat * gain.data + bias.data)
    _check_finite("group_norm", out.data)

    def fn(g):
        if gain.requires_grad:
            gain._accum((g * xhat).sum(axis=(0, 1, 2)).reshape(gain.shape))
        if bias.requires_grad:
            bias._accum(g.sum(axis=(0, 1, 2)).reshape(bias.shape))
        if a.requires_grad:
            gg = (g.reshape(B, H * W, C) * gain.data)
            xh = xhat.reshape(B, H * W, C)
            m1 = _group_channel_means(gg, groups, cg)
            m2 = _group_channel_means(gg * xh, groups, cg)
            ga = inv_c[:, None, :] * (gg - m1[:, None, :] - xh * m2[:, None, :])
            a._accum(ga.reshape(B, H, W, C))

    return _record(out, _needs(a, gain, bias), fn)


def silu(a):
    sig = expit(a.data)
    out = Tensor(a.data * sig)
    _check_finite("silu", out.data)

    def fn(g):
        a._accum(g * sig * (1.0 + a.data * (1.0 - sig)))

    return _record(out, _needs(a), fn)


def gelu(a):
    x = a.data
    phi = 0.5 * (1.0 + erf(x / np.sqrt(x.dtype.type(2.0))))
    out = Tensor(x * phi)
    _check_finite("gelu", out.data)

    def fn(g):
        pdf = np.exp(-0.5 * x * x) / x.dtype.type(math.sqrt(2.0 * math.pi))
        a._accum(g * (phi + x * pdf))

    return _record(out, _needs(a), fn)


def mean(a, axis=None, keepdims=False):
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.shape) / a.data.dtype.type(n))

    return _record(out, _needs(a), fn)


def tsum(a, axis=None, keepdims=False):
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.shape).copy())

    return _record(out, _needs(a), fn)


def variance(a, axis, ddof=0, keepdims=False):
    mu = a.data.mean(axis=axis, keepdims=True)
    dev = a.data - mu
    n = np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    denom = a.data.dtype.type(n - ddof)
    out = Tensor((dev * dev).sum(axis=axis, keepdims=keepdims) / denom)

    def fn(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.shape) * 2.0 * dev / denom)

    return _record(out, _needs(a), fn)


# ---------------------------------------------------------------------------
# resampling

def upsample_nearest(a, factor):
    B, H, W, C = a.shape
    out = Tensor(a.data.repeat(factor, axis=1).repeat(factor, axis=2))

    def fn(g):
        gr = g.reshape(B, H, factor, W, factor, C).sum(axis=(2, 4))
        a._accum(gr)

    return _record(out, _needs(a), fn)


def _lin_matrix(n_out, n_in, dtype):
    # align-corners interpolation matrix (n_out, n_in)
    m = np.zeros((n_out, n_in), dtype=dtype)
    if n_out == 1 or n_in == 1:
        m[:, 0] = 1.0
        return m
    pos = np.linspace(0.0, n_in - 1.0, n_out)
    lo = np.clip(np.floor(pos).astype(int), 0, n_in - 2)
    frac = pos - lo
    m[np.arange(n_out), lo] = 1.0 - frac
    m[np.arange(n_out), lo + 1] = frac
    return m


def upsample_bilinear(a, out_h, out_w):
    """Align-corners bilinear resize of channels-last (B, H, W, C)."""
    B, H, W, C = a.shape
    R = _lin_matrix(out_h, H, a.data.dtype)
    Cc = _lin_matrix(out_w, W, a.data.dtype)
    y = np.matmul(R, a.data.reshape(B, H, W * C))          # rows: (B, OH, W*C)
    y = np.matmul(Cc, y.reshape(B * out_h, W, C))          # cols: (B*OH, OW, C)
    out = Tensor(y.reshape(B, out_h, out_w, C))

    def fn(g):
        gy = np.matmul(Cc.T, g.reshape(B * out_h, out_w, C))
        ga = np.matmul(R.T, gy.reshape(B, out_h, W * C))
        a._accum(ga.reshape(a.shape))

    return _record(out, _needs(a), fn)


def avgpool2x2(a):
    B, H, W, C = a.shape
    if H % 2 or W % 2:
        raise ShapeError(f"avgpool2x2: odd spatial extent {a.shape}")
    out = Tensor(a.data.reshape(B, H // 2, 2, W // 2, 2, C).mean(axis=(2, 4)))

    def fn(g):
        a._accum(g.repeat(2, axis=1).repeat(2, axis=2) * a.data.dtype.type(0.25))

    return _record(out, _needs(a), fn)


def dropout(a, p, rng, training):
    if not training or p <= 0.0:
        return a
    keep = (rng.random(a.shape) >= p).astype(a.data.dtype) / a.data.dtype.type(1.0 - p)
    out = Tensor(a.data * keep)

    def fn(g):
        a._accum(g * keep)

    return _record(out, _needs(a), fn)
