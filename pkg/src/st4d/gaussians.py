"""Anisotropic 3D Gaussians: the explicit scene representation.

GaussianSet stores stacked Tensors (positions, unit quaternions, log scales,
opacities, colors) so a set can be either a plain container of numpy data or
a node in a differentiable graph during optimization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def quat_normalize(q: np.ndarray) -> np.ndarray:
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product, [..., 4] with scalar part first."""
    w1, x1, y1, z1 = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    w2, x2, y2, z2 = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 + y1 * w2 + z1 * x2 - x1 * z2,
        w1 * z2 + z1 * w2 + x1 * y2 - y1 * x2,
    ], axis=-1)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices [...,3,3] from unit quaternions."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    row0 = np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1)
    row1 = np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1)
    row2 = np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1)
    return np.stack([row0, row1, row2], axis=-2)


def axis_angle_quat(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


@dataclass
class Gaussian3D:
    position: np.ndarray   # (3,)
    rotation: np.ndarray   # (4,) unit quaternion, scalar first
    scale: np.ndarray      # (3,) positive
    opacity: float         # [0, 1]
    color: np.ndarray      # (3,) in [0, 1]

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.scale = np.asarray(self.scale, dtype=np.float64)
        self.color = np.asarray(self.color, dtype=np.float64)
        if abs(np.linalg.norm(self.rotation) - 1.0) > 1e-9:
            raise ValueError("rotation must be a unit quaternion")
        if np.any(self.scale <= 0):
            raise ValueError("scale must be positive")
        if not (0.0 <= self.opacity <= 1.0):
            raise ValueError("opacity must be in [0, 1]")


class GaussianSet:
    """Stacked Gaussians; every field is a Tensor of matching leading size."""

    def __init__(self, positions, rotations, log_scales, opacities, colors):
        as_t = lambda x: x if isinstance(x, Tensor) else Tensor(x)
        self.positions = as_t(positions)
        self.rotations = as_t(rotations)
        self.log_scales = as_t(log_scales)
        self.opacities = as_t(opacities)
        self.colors = as_t(colors)
        n = self.positions.shape[0]
        shapes = (self.positions.shape, self.rotations.shape,
                  self.log_scales.shape, self.opacities.shape, self.colors.shape)
        if shapes != ((n, 3), (n, 4), (n, 3), (n,), (n, 3)):
            raise ValueError(f"inconsistent field shapes {shapes}")

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @classmethod
    def from_gaussians(cls, gaussians: list[Gaussian3D]) -> "GaussianSet":
        return cls(
            np.stack([g.position for g in gaussians]),
            np.stack([g.rotation for g in gaussians]),
            np.log(np.stack([g.scale for g in gaussians])),
            np.array([g.opacity for g in gaussians]),
            np.stack([g.color for g in gaussians]),
        )

    def to_gaussians(self) -> list[Gaussian3D]:
        return [Gaussian3D(self.positions.data[i],
                           quat_normalize(self.rotations.data[i]),
                           np.exp(self.log_scales.data[i]),
                           float(self.opacities.data[i]),
                           self.colors.data[i])
                for i in range(self.n)]

    def detach(self) -> "GaussianSet":
        return GaussianSet(self.positions.detach(), self.rotations.detach(),
                           self.log_scales.detach(), self.opacities.detach(),
                           self.colors.detach())

    def state_dict(self, prefix: str = "gaussians.") -> dict[str, np.ndarray]:
        return {prefix + "positions": self.positions.data.copy(),
                prefix + "rotations": self.rotations.data.copy(),
                prefix + "log_scales": self.log_scales.data.copy(),
                prefix + "opacities": self.opacities.data.copy(),
                prefix + "colors": self.colors.data.copy()}

    @classmethod
    def from_state(cls, state: dict, prefix: str = "gaussians.") -> "GaussianSet":
        return cls(state[prefix + "positions"], state[prefix + "rotations"],
                   state[prefix + "log_scales"], state[prefix + "opacities"],
                   state[prefix + "colors"])


def quat_mul_tensor(a: Tensor, b: Tensor) -> Tensor:
    """Hamilton product on [N,4] Tensors (differentiable)."""
    w1, x1, y1, z1 = a[:, 0], a[:, 1], a[:, 2], a[:, 3]
    w2, x2, y2, z2 = b[:, 0], b[:, 1], b[:, 2], b[:, 3]
    return ad.stack([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 + y1 * w2 + z1 * x2 - x1 * z2,
        w1 * z2 + z1 * w2 + x1 * y2 - y1 * x2,
    ], axis=1)
