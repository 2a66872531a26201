"""The set-conditioned velocity network and its dense-interpolation twin.

Architecture: two parallel set encoders (ISAB x2 -> PMA -> SAB x2) produce
a global context vector and a grid-aligned spatial feature map; a U-Net
consumes concat(state, spatial map, nearest-pixel raster) and is modulated
per residual block by adaptive group norm driven by concat(time embedding,
global vector), with bottleneck cross-attention onto the set tokens.

The baseline variant drops the set machinery entirely and conditions only
through an inverse-distance-interpolated dense grid stacked on the input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..sensing import interpolate_dense, rasterize
from .blocks import (
    ISAB, PMA, SAB, Conv, LayerNorm, Linear, MultiHeadAttention, ParamStore,
    TimeEmbed, sinusoidal_positions_2d,
)


@dataclass
class Conditioning:
    """Frozen per-observation-set features reused across ODE steps."""

    unet_static: np.ndarray            # (B, H, W, C_static) non-state input planes
    global_vec: object = None          # Tensor (B, G) or None for the baseline
    set_tokens: object = None          # Tensor (B, K, D) or None
    input_cache: object = field(default=None, compare=False)  # fast-path conv cache


def _cached_input(unet, x_t, cond):
    """Sampler fast path: the frozen input planes pass the input conv once.

    The input conv is linear across input channels, so splitting the state
    column from the static columns and caching the static contribution (plus
    bias) is exact up to summation order.
    """
    w = unet.in_conv.w
    if cond.input_cache is None:
        static = cond.unet_static
        static_arr = static.data if isinstance(static, Tensor) else static
        ws = Tensor(np.ascontiguousarray(w.data[:, :, 1:, :]))
        cond.input_cache = ad.conv2d(Tensor(static_arr), ws, unet.in_conv.b,
                                     pad=unet.in_conv.pad).data
    wx = Tensor(np.ascontiguousarray(w.data[:, :, :1, :]))
    hx = ad.conv2d(x_t, wx, None, pad=unet.in_conv.pad)
    return ad.add(hx, Tensor(cond.input_cache))


class SetEncoder:
    """One path: embed -> ISAB x2 -> PMA(n_seeds) -> SAB x2."""

    def __init__(self, store, name, d_in, cfg, n_seeds, rng, seed_init=None):
        d, h, m = cfg.set_dim, cfg.set_heads, cfg.inducing
        self.embed = Linear(store, f"{name}.embed", d_in, d, rng)
        self.isab1 = ISAB(store, f"{name}.isab1", d, h, m, rng)
        self.isab2 = ISAB(store, f"{name}.isab2", d, h, m, rng)
        self.pma = PMA(store, f"{name}.pma", d, h, n_seeds, rng, seed_init=seed_init)
        self.sab1 = SAB(store, f"{name}.sab1", d, h, rng)
        self.sab2 = SAB(store, f"{name}.sab2", d, h, rng)

    def __call__(self, elements):
        """elements (B, K, 2+V) -> (pooled (B, n_seeds, D), pre-PMA (B, K, D))."""
        h = self.embed(elements)
        h = self.isab2(self.isab1(h))
        pooled = self.sab2(self.sab1(self.pma(h)))
        return pooled, h


class ResBlock:
    """GN -> SiLU -> conv, AdaGN(cond), GN's affine -> SiLU -> dropout -> conv."""

    def __init__(self, store, name, c_in, c_out, cond_dim, groups, rng):
        self.c_in, self.c_out = c_in, c_out
        self.groups = groups
        self.gn1_g = store.add(f"{name}.gn1.g", np.ones(c_in))
        self.gn1_b = store.add(f"{name}.gn1.b", np.zeros(c_in))
        self.conv1 = Conv(store, f"{name}.conv1", c_in, c_out, 3, rng)
        # zero-init so modulation starts as identity and the block as a no-op
        self.cond = Linear(store, f"{name}.cond", cond_dim, 2 * c_out, rng, zero=True)
        self.gn2_g = store.add(f"{name}.gn2.g", np.ones(c_out))
        self.gn2_b = store.add(f"{name}.gn2.b", np.zeros(c_out))
        self.conv2 = Conv(store, f"{name}.conv2", c_out, c_out, 3, rng, zero=True)
        self.skip = None if c_in == c_out else \
            Conv(store, f"{name}.skip", c_in, c_out, 1, rng)

    def __call__(self, x, cond, dropout, rng, training):
        h = ad.silu(ad.group_norm(x, self.groups, self.gn1_g, self.gn1_b))
        h = self.conv1(h)
        sb = self.cond(cond)                                   # (B, 2*c_out)
        b = sb.shape[0]
        hw = h.shape[1:3]
        full = (b,) + hw + (self.c_out,)
        s = ad.reshape(ad.narrow(sb, 1, 0, self.c_out), (b, 1, 1, self.c_out))
        t = ad.reshape(ad.narrow(sb, 1, self.c_out, self.c_out), (b, 1, 1, self.c_out))
        s = ad.expand(ad.shift(s, 1.0), full)
        t = ad.expand(t, full)
        h = ad.group_norm(h, self.groups, self.gn2_g, self.gn2_b)
        h = ad.add(ad.mul(h, s), t)
        h = ad.silu(h)
        if training and dropout > 0:
            h = ad.dropout(h, dropout, rng, training)
        h = self.conv2(h)
        skip = x if self.skip is None else self.skip(x)
        return ad.add(skip, h)


class CrossAttention:
    """Grid tokens attend to set tokens at the bottleneck."""

    def __init__(self, store, name, channels, token_dim, heads, rng):
        self.ln = LayerNorm(store, f"{name}.ln", channels)
        self.attn = MultiHeadAttention(store, f"{name}.attn", channels, heads, rng,
                                       kv_dim=token_dim)

    def __call__(self, x, tokens):
        b, h, w, c = x.shape
        grid = ad.reshape(x, (b, h * w, c))
        out = self.attn(self.ln(grid), tokens)
        return ad.add(x, ad.reshape(out, (b, h, w, c)))


class UNet:
    def __init__(self, store, cfg, in_channels, cond_dim, token_dim, rng):
        base = cfg.base_channels
        mults = list(cfg.channel_mults)
        self.cfg = cfg
        self.levels = len(mults)
        self.chs = [base * m for m in mults]
        self.in_conv = Conv(store, "unet.in", in_channels, base, 3, rng)
        self.in_channels = in_channels

        self.down = []
        skip_chs = [base]
        ch = base
        for i, target in enumerate(self.chs):
            blocks = []
            for j in range(cfg.res_blocks):
                blocks.append(ResBlock(store, f"unet.d{i}.r{j}", ch, target,
                                       cond_dim, cfg.groups, rng))
                ch = target
                skip_chs.append(ch)
            downsample = i < self.levels - 1
            if downsample:
                skip_chs.append(ch)
            self.down.append((blocks, downsample))

        self.mid1 = ResBlock(store, "unet.mid1", ch, ch, cond_dim, cfg.groups, rng)
        self.cross = None
        if token_dim is not None:
            self.cross = CrossAttention(store, "unet.cross", ch,
                                        token_dim, cfg.bottleneck_heads, rng)
        self.mid2 = ResBlock(store, "unet.mid2", ch, ch, cond_dim, cfg.groups, rng)

        self.up = []
        for i in reversed(range(self.levels)):
            target = self.chs[i]
            blocks = []
            for j in range(cfg.res_blocks + 1):
                blocks.append(ResBlock(store, f"unet.u{i}.r{j}", ch + skip_chs.pop(),
                                       target, cond_dim, cfg.groups, rng))
                ch = target
            upsample = i > 0
            conv = Conv(store, f"unet.u{i}.conv", ch, self.chs[i - 1], 3, rng) \
                if upsample else None
            if upsample:
                ch = self.chs[i - 1]
            self.up.append((blocks, conv))

        self.out_gn_g = store.add("unet.out.gn.g", np.ones(ch))
        self.out_gn_b = store.add("unet.out.gn.b", np.zeros(ch))
        self.out_conv = Conv(store, "unet.out.conv", ch, 1, 3, rng, zero=True)

    def __call__(self, x, cond, tokens, rng, training, h0=None):
        drop = self.cfg.dropout
        h = self.in_conv(x) if h0 is None else h0
        skips = [h]
        for blocks, downsample in self.down:
            for blk in blocks:
                h = blk(h, cond, drop, rng, training)
                skips.append(h)
            if downsample:
                h = ad.avgpool2x2(h)
                skips.append(h)
        h = self.mid1(h, cond, drop, rng, training)
        if self.cross is not None and tokens is not None:
            h = self.cross(h, tokens)
        h = self.mid2(h, cond, drop, rng, training)
        for blocks, conv in self.up:
            for blk in blocks:
                h = blk(ad.concat([h, skips.pop()], axis=3), cond, drop, rng, training)
            if conv is not None:
                h = conv(ad.upsample_nearest(h, 2))
        h = ad.silu(ad.group_norm(h, self.cfg.groups, self.out_gn_g, self.out_gn_b))
        return self.out_conv(h)


class SetConditionedUNet:
    """Velocity field v(x_t, t, observations) over the grid."""

    def __init__(self, cfg, rng=None, store=None):
        cfg.validate_grid()
        self.cfg = cfg
        self.params = store if store is not None else ParamStore()
        rng = rng if rng is not None else np.random.default_rng(0)
        d_in = 2 + cfg.n_channels
        n_seeds = cfg.seed_grid ** 2
        seed_init = 0.5 * sinusoidal_positions_2d(cfg.seed_grid, cfg.set_dim)
        self.spatial = SetEncoder(self.params, "spatial", d_in, cfg, n_seeds, rng,
                                  seed_init=seed_init)
        self.global_enc = SetEncoder(self.params, "global", d_in, cfg, 1, rng)
        self.global_proj = Linear(self.params, "global.proj", 2 * cfg.set_dim,
                                  cfg.global_dim, rng)
        self.time = TimeEmbed(self.params, "time", 64, cfg.time_dim, rng)
        in_ch = 1 + cfg.set_dim + cfg.n_channels + 1
        self.unet = UNet(self.params, cfg, in_ch, cfg.time_dim + cfg.global_dim,
                         cfg.set_dim, rng)

    # -- conditioning ------------------------------------------------------

    def encode(self, obs_batch):
        """Frozen features for a batch of equal-cardinality observation sets."""
        if not isinstance(obs_batch, (list, tuple)):
            obs_batch = [obs_batch]
        sizes = {len(o) for o in obs_batch}
        if len(sizes) != 1:
            raise ValueError(f"observation sets in a batch must share cardinality, got {sizes}")
        g = self.cfg.grid
        elements = Tensor(np.stack([o.as_elements() for o in obs_batch]).astype(np.float32))
        pooled_s, tokens = self.spatial(elements)
        b, k2, d = pooled_s.shape
        side = self.cfg.seed_grid
        fmap = ad.reshape(pooled_s, (b, side, side, d))
        fmap = ad.upsample_bilinear(fmap, g, g)                    # (B, H, W, D)

        pooled_g, pre = self.global_enc(elements)
        pooled_g = ad.reshape(pooled_g, (b, d))
        residual = ad.mean(pre, axis=1)                            # masked mean = plain
        gvec = self.global_proj(ad.concat([pooled_g, residual], axis=1))

        raster = np.stack([rasterize(o, g, g).transpose(1, 2, 0)
                           for o in obs_batch]).astype(np.float32)
        static = ad.concat([fmap, Tensor(raster)], axis=3)
        return Conditioning(unet_static=static, global_vec=gvec, set_tokens=tokens)

    # -- velocity ----------------------------------------------------------

    def velocity(self, x_t, t, cond, rng=None, training=False, use_cache=False):
        """x_t (B, 1, H, W) Tensor, t (B,) array -> velocity Tensor."""
        temb = self.time(t)
        full_cond = ad.concat([temb, cond.global_vec], axis=1)
        h0 = None
        if use_cache and not training:
            h0 = _cached_input(self.unet, x_t, cond)
            unet_in = x_t
        else:
            static = cond.unet_static
            unet_in = ad.concat([x_t, static if isinstance(static, Tensor)
                                 else Tensor(static)], axis=3)
        return self.unet(unet_in, full_cond, cond.set_tokens, rng, training, h0=h0)

    def velocity_single(self, x_t, t, obs):
        """Convenience single-sample forward: arrays in, array out."""
        cond = self.encode([obs])
        xt = Tensor(np.asarray(x_t, dtype=np.float32).reshape(1, *x_t.shape[-2:], 1))
        v = self.velocity(xt, np.array([t], dtype=np.float32), cond)
        return v.data[0, :, :, 0]


class BaselineConditioner:
    """Dense-interpolation flow model: same U-Net, no set encoder."""

    def __init__(self, cfg, rng=None, store=None):
        cfg.validate_grid()
        self.cfg = cfg
        self.params = store if store is not None else ParamStore()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.time = TimeEmbed(self.params, "time", 64, cfg.time_dim, rng)
        in_ch = 1 + cfg.n_channels
        self.unet = UNet(self.params, cfg, in_ch, cfg.time_dim, None, rng)

    def encode(self, obs_batch):
        if not isinstance(obs_batch, (list, tuple)):
            obs_batch = [obs_batch]
        g = self.cfg.grid
        dense = np.stack([interpolate_dense(o, g, g).transpose(1, 2, 0)
                          for o in obs_batch])
        return Conditioning(unet_static=dense.astype(np.float32))

    def velocity(self, x_t, t, cond, rng=None, training=False, use_cache=False):
        temb = self.time(t)
        h0 = None
        if use_cache and not training:
            h0 = _cached_input(self.unet, x_t, cond)
            unet_in = x_t
        else:
            static = cond.unet_static
            unet_in = ad.concat([x_t, static if isinstance(static, Tensor)
                                 else Tensor(static)], axis=3)
        return self.unet(unet_in, temb, None, rng, training, h0=h0)

    def velocity_single(self, x_t, t, obs):
        cond = self.encode([obs])
        xt = Tensor(np.asarray(x_t, dtype=np.float32).reshape(1, *x_t.shape[-2:], 1))
        v = self.velocity(xt, np.array([t], dtype=np.float32), cond)
        return v.data[0, :, :, 0]


def build_model(cfg, seed=0):
    rng = np.random.default_rng(seed)
    if cfg.baseline:
        return BaselineConditioner(cfg, rng)
    return SetConditionedUNet(cfg, rng)
