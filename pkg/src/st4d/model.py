"""Disentangled space-time denoiser: a 4D latent is split into a per-view
spatial representation (frame axis pooled) and a per-frame temporal
representation (view axis pooled), denoised by separate channels, and fused
back into a 4D noise prediction with optional conditioning.

Pooling over the complementary axis uses sorted_mean so the split is exactly
permutation-invariant along the pooled axis. Both channel heads and the
fusion head are zero-initialized: a fresh model predicts exactly zero noise.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, attention
from .nn import Conv2d, Linear, Module, rng_from, timestep_embedding


@dataclass(frozen=True)
class ModelConfig:
    latent_channels: int = 8
    c_s: int = 16          # spatial-channel width
    c_t: int = 16          # temporal-channel width
    c_mid: int = 32        # channel interior width (also the tap width)
    emb_dim: int = 16      # timestep embedding width
    d_cond: int = 16       # condition embedding / cross-attention width
    fuse_mid: int = 32
    seed: int = 0


class Disentangler(Module):
    """Deterministic encoder splitting [V,T,C,h,w] into spatial/temporal latents."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        rng = rng_from(cfg.seed + 11)
        C = cfg.latent_channels
        self.conv_s1 = self.add_child("conv_s1", Conv2d(C, cfg.c_s, 3, rng))
        self.conv_s2 = self.add_child("conv_s2", Conv2d(cfg.c_s, cfg.c_s, 3, rng))
        self.conv_t1 = self.add_child("conv_t1", Conv2d(C, cfg.c_t, 3, rng))
        self.conv_t2 = self.add_child("conv_t2", Conv2d(cfg.c_t, cfg.c_t, 3, rng))

    def __call__(self, z4d: Tensor) -> tuple[Tensor, Tensor]:
        if z4d.ndim != 5:
            raise ValueError(f"expected [V,T,C,h,w], got {z4d.shape}")
        if z4d.shape[1] < 2:
            raise ValueError("temporal axis must have at least two frames")
        pooled_s = ad.sorted_mean(z4d, 1)   # [V,C,h,w]
        pooled_t = ad.sorted_mean(z4d, 0)   # [T,C,h,w]
        zs = self.conv_s2(ad.tanh(self.conv_s1(pooled_s)))
        zt = self.conv_t2(ad.tanh(self.conv_t1(pooled_t)))
        return zs, zt


class AxisDenoiser(Module):
    """Conv + attention denoising channel.

    mode "space": attends jointly across the batch axis and pixels (views x
    pixels form the token set). mode "frame": attends across the batch axis
    per pixel (frames are tokens at each location). No positional encoding,
    so the frame mode is equivariant to any permutation of its batch axis.
    """

    def __init__(self, c_in: int, c_mid: int, c_out: int, mode: str,
                 emb_dim: int, seed: int):
        super().__init__()
        if mode not in ("space", "frame"):
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self.emb_dim = emb_dim
        rng = rng_from(seed)
        self.conv_in = self.add_child("conv_in", Conv2d(c_in, c_mid, 3, rng))
        self.t_proj = self.add_child("t_proj", Linear(emb_dim, c_mid, rng))
        self.wq = self.add_child("wq", Linear(c_mid, c_mid, rng))
        self.wk = self.add_child("wk", Linear(c_mid, c_mid, rng))
        self.wv = self.add_child("wv", Linear(c_mid, c_mid, rng))
        self.wo = self.add_child("wo", Linear(c_mid, c_mid, rng, zero_init=True))
        self.conv_mid = self.add_child("conv_mid", Conv2d(c_mid, c_mid, 3, rng))
        self.head = self.add_child("head", Conv2d(c_mid, c_out, 3, rng, zero_init=True))

    def _attend(self, h: Tensor) -> Tensor:
        B, C, H, W = h.shape
        if self.mode == "space":
            tok = ad.reshape(ad.transpose(h, (0, 2, 3, 1)), (B * H * W, C))
            out = attention(self.wq(tok), self.wk(tok), self.wv(tok))
            out = self.wo(out)
            return ad.transpose(ad.reshape(out, (B, H, W, C)), (0, 3, 1, 2))
        # frame mode: [B,C,H,W] -> [H*W, B, C] batched over pixel locations
        tok = ad.reshape(ad.transpose(h, (2, 3, 0, 1)), (H * W, B, C))
        q = ad.matmul(tok, self.wq.w) + self.wq.b
        k = ad.matmul(tok, self.wk.w) + self.wk.b
        v = ad.matmul(tok, self.wv.w) + self.wv.b
        out = ad.matmul(attention(q, k, v), self.wo.w) + self.wo.b
        out = ad.reshape(out, (H, W, B, C))
        return ad.transpose(out, (2, 3, 0, 1))

    def __call__(self, x: Tensor, t: int, want_mid: bool = False):
        emb = self.t_proj(ad.reshape(timestep_embedding(t, self.emb_dim),
                                     (1, self.emb_dim)))
        emb = ad.reshape(emb, (1, emb.shape[1], 1, 1))
        h = ad.tanh(self.conv_in(x) + emb)
        mid = h + self._attend(h)
        h = ad.tanh(self.conv_mid(mid))
        out = self.head(h)
        if want_mid:
            return out, mid
        return out


class ConditionalFusion(Module):
    """Broadcast + concat the two channel outputs and map back to a 4D latent,
    with cross-attention to an optional condition embedding."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        rng = rng_from(cfg.seed + 23)
        c_cat = cfg.c_s + cfg.c_t
        m = cfg.fuse_mid
        self.cfg = cfg
        self.conv1 = self.add_child("conv1", Conv2d(c_cat, m, 1, rng, pad=0))
        self.cq = self.add_child("cq", Linear(m, cfg.d_cond, rng))
        self.ck = self.add_child("ck", Linear(cfg.d_cond, cfg.d_cond, rng))
        self.cv = self.add_child("cv", Linear(cfg.d_cond, m, rng))
        self.co = self.add_child("co", Linear(m, m, rng, zero_init=True))
        self.conv2 = self.add_child("conv2", Conv2d(m, m, 1, rng, pad=0))
        self.head = self.add_child("head",
                                   Conv2d(m, cfg.latent_channels, 1, rng,
                                          pad=0, zero_init=True))

    def __call__(self, zs: Tensor, zt: Tensor, cond=None) -> Tensor:
        V, c_s, H, W = zs.shape
        T, c_t = zt.shape[0], zt.shape[1]
        if c_s + c_t != self.cfg.c_s + self.cfg.c_t:
            raise ValueError(f"channel widths {c_s}+{c_t} do not match fusion input")
        sp = ad.expand_axis(zs, 1, T)                       # [V,T,c_s,H,W]
        tp = ad.expand_axis(zt, 0, V)                       # [V,T,c_t,H,W]
        h = ad.concatenate([sp, tp], axis=2)
        h = ad.reshape(h, (V * T, c_s + c_t, H, W))
        h = ad.tanh(self.conv1(h))
        if cond is not None:
            emb = cond.embedding
            if emb.shape[1] != self.cfg.d_cond:
                raise ValueError(
                    f"condition width {emb.shape[1]} != {self.cfg.d_cond}")
            tok = ad.reshape(ad.transpose(h, (0, 2, 3, 1)), (V * T * H * W, h.shape[1]))
            mix = attention(self.cq(tok), self.ck(emb), self.cv(emb))
            tok = tok + self.co(mix)
            h = ad.transpose(ad.reshape(tok, (V * T, H, W, tok.shape[1])), (0, 3, 1, 2))
        h = ad.tanh(self.conv2(h))
        out = self.head(h)
        return ad.reshape(out, (V, T, self.cfg.latent_channels, H, W))


class SpaceTimeDenoiser(Module):
    """The composed denoiser: disentangle -> per-channel denoise -> fuse."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.disentangler = self.add_child("disentangler", Disentangler(cfg))
        self.spatial = self.add_child(
            "spatial", AxisDenoiser(cfg.c_s, cfg.c_mid, cfg.c_s, "space",
                                    cfg.emb_dim, cfg.seed + 31))
        self.temporal = self.add_child(
            "temporal", AxisDenoiser(cfg.c_t, cfg.c_mid, cfg.c_t, "frame",
                                     cfg.emb_dim, cfg.seed + 47))
        self.fusion = self.add_child("fusion", ConditionalFusion(cfg))

    def __call__(self, z4d: Tensor, cond, t: int, want_features: bool = False):
        zs, zt = self.disentangler(z4d)
        rs, ms = self.spatial(zs, t, want_mid=True)
        rt, mt = self.temporal(zt, t, want_mid=True)
        eps = self.fusion(rs, rt, cond)
        if want_features:
            return eps, {"spatial_out": rs, "temporal_out": rt,
                         "spatial_mid": ms, "temporal_mid": mt}
        return eps

    def reconstruct(self, z4d: Tensor, cond=None) -> Tensor:
        """Fusion applied directly to the disentangled latents (channels
        bypassed); the autoencoding warm-up trains this path."""
        zs, zt = self.disentangler(z4d)
        return self.fusion(zs, zt, cond)


def merge_unified(model: SpaceTimeDenoiser) -> SpaceTimeDenoiser:
    """Package the trained pieces as one self-contained denoiser.

    The result owns copies of every parameter, so later training of `model`
    cannot alias into it; its forward equals the composed pipeline exactly.
    """
    merged = SpaceTimeDenoiser(model.cfg)
    merged.load_state_dict(model.state_dict())
    return merged


def model_config_state(cfg: ModelConfig) -> dict[str, np.ndarray]:
    """Config as checkpoint tensors so checkpoints are self-describing."""
    return {f"config.{k}": np.array(float(v)) for k, v in asdict(cfg).items()}


def model_config_from_state(state: dict[str, np.ndarray]) -> ModelConfig:
    fields = {k.split(".", 1)[1]: int(v) for k, v in state.items()
              if k.startswith("config.")}
    return ModelConfig(**fields)
