"""Six-plane factorized space-time field and the Gaussian deformation decoder.

A query (x,y,z,t) in the normalized [0,1]^4 domain samples all six planes
bilinearly, multiplies the six features, and fuses them with a small MLP.
Optionally the fused feature cross-attends to frozen prior token banks
(spatial and temporal) before the zero-initialized deformation heads, so a
fresh deformer is exactly the identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, attention
from .gaussians import GaussianSet, quat_mul_tensor
from .nn import Linear, Module, rng_from

PLANE_PAIRS = (("x", "y"), ("x", "z"), ("y", "z"),
               ("x", "t"), ("y", "t"), ("z", "t"))


class HexPlaneField(Module):
    """Six [R,R,d_h] feature grids plus a fusion MLP."""

    def __init__(self, resolution: int = 16, d_hidden: int = 8,
                 d_out: int = 16, seed: int = 0, init_noise: float = 0.05,
                 identity_fusion: bool = False):
        super().__init__()
        rng = rng_from(seed)
        self.resolution = resolution
        self.d_hidden = d_hidden
        self.identity_fusion = identity_fusion
        self.d_out = d_hidden if identity_fusion else d_out
        self.planes = []
        for a, b in PLANE_PAIRS:
            grid = np.ones((resolution, resolution, d_hidden))
            if init_noise:
                grid += init_noise * rng.normal(size=grid.shape)
            self.planes.append(self.add_param(f"plane_{a}{b}", grid))
        if not identity_fusion:
            self.fuse1 = self.add_child("fuse1", Linear(d_hidden, 32, rng))
            self.fuse2 = self.add_child("fuse2", Linear(32, d_out, rng))

    def query(self, x: Tensor, y: Tensor, z: Tensor, t: Tensor) -> Tensor:
        """Fused feature [N,d_out] at N points of the [0,1]^4 domain."""
        coords = {"x": x, "y": y, "z": z, "t": t}
        scale = float(self.resolution - 1)
        feat = None
        for plane, (a, b) in zip(self.planes, PLANE_PAIRS):
            sample = ad.grid_sample2d(plane, coords[a] * scale, coords[b] * scale)
            feat = sample if feat is None else feat * sample
        if self.identity_fusion:
            return feat
        return self.fuse2(ad.tanh(self.fuse1(feat)))


def hexplane_query(field: HexPlaneField, x, y, z, t) -> Tensor:
    """Single- or multi-point query; scalars are promoted to length-1 batches."""
    def as1d(c):
        c = c if isinstance(c, Tensor) else Tensor(c)
        return ad.reshape(c, (1,)) if c.ndim == 0 else c
    return field.query(as1d(x), as1d(y), as1d(z), as1d(t))


@dataclass
class PriorBank:
    """Frozen spatial/temporal prior tokens injected during 4D construction."""
    o_s: Tensor   # [N_p, d]
    o_t: Tensor   # [N_p, d]

    def __post_init__(self):
        if self.o_s.ndim != 2 or self.o_t.ndim != 2 or self.o_s.shape[0] < 1:
            raise ValueError("prior banks must be non-empty [N_p, d]")

    @classmethod
    def random(cls, d: int = 16, n_tokens: int = 64, seed: int = 0) -> "PriorBank":
        rng = rng_from(seed)
        return cls(Tensor(rng.normal(0, 0.5, size=(n_tokens, d))),
                   Tensor(rng.normal(0, 0.5, size=(n_tokens, d))))


@dataclass
class DeformationOut:
    delta_p: Tensor       # [N,3]
    delta_q: Tensor       # [N,4] unit quaternion increments
    delta_log_s: Tensor   # [N,3]


class Deformer(Module):
    """HexPlane feature -> (optional prior attention) -> deformation heads."""

    def __init__(self, field: HexPlaneField, d_attn: int = 16,
                 use_priors: bool = True, hidden: int = 32, seed: int = 1):
        super().__init__()
        rng = rng_from(seed)
        self.field = self.add_child("field", field)
        self.use_priors = use_priors
        head_in = 2 * d_attn if use_priors else field.d_out
        if use_priors:
            self.q_proj = self.add_child("q_proj", Linear(field.d_out, d_attn, rng))
        self.head1 = self.add_child("head1", Linear(head_in, hidden, rng))
        self.head2 = self.add_child("head2", Linear(hidden, 10, rng, zero_init=True))

    def features(self, x, y, z, t, priors: PriorBank | None) -> Tensor:
        feat = self.field.query(x, y, z, t)
        if not self.use_priors:
            return feat
        if priors is None:
            raise ValueError("deformer was built with prior attention; pass a PriorBank")
        q = self.q_proj(feat)
        v_s = attention(q, priors.o_s, priors.o_s)
        v_t = attention(q, priors.o_t, priors.o_t)
        return ad.concatenate([v_s, v_t], axis=1)

    def decode(self, feat: Tensor) -> DeformationOut:
        out = self.head2(ad.tanh(self.head1(feat)))
        if not np.isfinite(out.data).all():
            raise FloatingPointError("deformation head produced non-finite output")
        dq_raw = out[:, 3:7] + Tensor(np.array([1.0, 0.0, 0.0, 0.0]))
        norm = ad.sqrt(ad.tsum(dq_raw * dq_raw, axis=1))
        dq = dq_raw / ad.reshape(norm, (norm.shape[0], 1))
        return DeformationOut(out[:, 0:3], dq, out[:, 7:10])


def st_hexplane_attend(deformer: Deformer, feat: Tensor, priors: PriorBank):
    """Cross-attend a fused query feature to each prior bank separately."""
    q = deformer.q_proj(feat)
    return attention(q, priors.o_s, priors.o_s), attention(q, priors.o_t, priors.o_t)


def _normalized_coords(positions: Tensor):
    """Scene coordinates in [-1,1]^3 map to the field's [0,1]^3."""
    half = (positions + 1.0) * 0.5
    return half[:, 0], half[:, 1], half[:, 2]


def deform_set(gaussians: GaussianSet, deformer: Deformer,
               priors: PriorBank | None, tau: float) -> GaussianSet:
    """Deformed copy of the set at normalized time tau.

    Zero-initialized heads return the input set bit-exactly: the raw
    quaternion increment is (1,0,0,0), whose normalization divides by
    exactly 1.0, and composing the identity is exact. Opacity and color
    pass through untouched.
    """
    x, y, z = _normalized_coords(gaussians.positions)
    t = Tensor(np.full(gaussians.n, float(tau)))
    feat = deformer.features(x, y, z, t, priors)
    d = deformer.decode(feat)
    return GaussianSet(
        gaussians.positions + d.delta_p,
        quat_mul_tensor(d.delta_q, gaussians.rotations),
        gaussians.log_scales + d.delta_log_s,
        gaussians.opacities,
        gaussians.colors,
    )


def deform(g, deformer: Deformer, priors: PriorBank | None, tau: float):
    """Single-Gaussian convenience wrapper around deform_set."""
    single = GaussianSet.from_gaussians([g])
    return deform_set(single, deformer, priors, tau).to_gaussians()[0]
