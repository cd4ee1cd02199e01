"""Differentiable Gaussian splatting.

Each Gaussian is perspective-projected, its world covariance pushed through
the projection Jacobian to a 2D footprint, and footprints are alpha-composited
front to back after a stable global depth sort. There is no footprint cutoff:
every visible Gaussian contributes to every pixel, which keeps the image a
smooth function of all attributes (the gradient checks rely on this).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .gaussians import GaussianSet

FOOTPRINT_BLUR = 0.3      # px^2 added to the 2D covariance diagonal
ALPHA_MAX = 0.999


@dataclass(frozen=True)
class Camera:
    """Orbit-parameterized pinhole camera looking at `target`."""
    azimuth: float
    elevation: float
    radius: float
    width: int = 32
    height: int = 32
    focal: float | None = None
    target: tuple = (0.0, 0.0, 0.0)
    znear: float = 0.05

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.width < 8 or self.height < 8:
            raise ValueError("image must be at least 8x8")
        if abs(self.elevation) > math.radians(85):
            raise ValueError("elevation too close to the poles")
        if self.focal is None:
            object.__setattr__(self, "focal", 1.1 * self.width)

    @property
    def cx(self) -> float:
        return self.width / 2.0

    @property
    def cy(self) -> float:
        return self.height / 2.0

    def pose(self):
        """(position, world-to-camera rotation rows). Camera z is the view
        direction, y runs down the image."""
        tgt = np.asarray(self.target, dtype=np.float64)
        direction = np.array([
            math.cos(self.elevation) * math.sin(self.azimuth),
            math.sin(self.elevation),
            math.cos(self.elevation) * math.cos(self.azimuth),
        ])
        pos = tgt + self.radius * direction
        fwd = (tgt - pos) / np.linalg.norm(tgt - pos)
        up = np.array([0.0, 1.0, 0.0])
        right = np.cross(fwd, up)
        right /= np.linalg.norm(right)
        cam_up = np.cross(right, fwd)
        rot = np.stack([right, -cam_up, fwd])   # rows: x_right, y_down, z_fwd
        return pos, rot


def orbit_cameras(n_views: int, radius: float = 2.5,
                  elevation: float = math.radians(20.0), width: int = 32,
                  height: int = 32, focal: float | None = None) -> list[Camera]:
    return [Camera(2.0 * math.pi * k / n_views, elevation, radius,
                   width, height, focal) for k in range(n_views)]


def _background(cam: Camera, bg: np.ndarray):
    img = Tensor(np.broadcast_to(bg[:, None, None],
                                 (3, cam.height, cam.width)).copy())
    zero = Tensor(np.zeros((cam.height, cam.width)))
    return img, zero, zero


def splat_alpha(u: Tensor, v: Tensor, i00: Tensor, i01: Tensor, i11: Tensor,
                opac: Tensor, px: np.ndarray, py: np.ndarray,
                alpha_max: float = ALPHA_MAX) -> Tensor:
    """Fused per-pixel footprint alphas [N,P] from projected means (u,v),
    inverse 2D covariances and opacities. One tape node instead of ~10, with
    a hand-derived backward; this is the renderer's hot path.

    The exponent is floored at -160 (footprint ~1e-35): far-away pixels
    contribute nothing anyway, and letting exp underflow into subnormals
    costs two orders of magnitude in throughput.
    """
    ud, vd = u.data[:, None], v.data[:, None]
    a, b, c = i00.data[:, None], i01.data[:, None], i11.data[:, None]
    dx = px[None, :] - ud
    dy = py[None, :] - vd
    quad = dx * dx
    quad *= a
    tmp = dx * dy
    tmp *= b
    tmp *= 2.0
    quad += tmp
    np.multiply(dy, dy, out=tmp)
    tmp *= c
    quad += tmp
    quad *= -0.5
    np.maximum(quad, -160.0, out=quad)
    foot = np.exp(quad, out=quad)
    raw = opac.data[:, None] * foot
    out = np.minimum(raw, alpha_max)
    mask = raw < alpha_max

    def backward(g, needs):
        gm = g * mask
        A = gm * raw
        Adx = A * dx
        Ady = A * dy
        sx, sy = Adx.sum(axis=1), Ady.sum(axis=1)
        gu = i00.data * sx + i01.data * sy if needs[0] else None
        gv = i01.data * sx + i11.data * sy if needs[1] else None
        gi00 = -0.5 * (Adx * dx).sum(axis=1) if needs[2] else None
        gi01 = -(Adx * dy).sum(axis=1) if needs[3] else None
        gi11 = -0.5 * (Ady * dy).sum(axis=1) if needs[4] else None
        gop = (gm * foot).sum(axis=1) if needs[5] else None
        return gu, gv, gi00, gi01, gi11, gop

    return ad._emit([u, v, i00, i01, i11, opac], out, backward)


def render(gaussians: GaussianSet, cam: Camera, bg=(0.0, 0.0, 0.0)):
    """Render a GaussianSet; returns (rgb [3,H,W], depth [H,W], alpha [H,W]).

    Differentiable w.r.t. every Gaussian attribute. Gaussians behind the
    near plane are culled; if none remain the background is returned.
    """
    if gaussians.n < 1:
        raise ValueError("render needs at least one Gaussian")
    bg = np.asarray(bg, dtype=np.float64)
    pos_w, rot_w = cam.pose()
    A = Tensor(rot_w)                                     # constant [3,3]

    rel = gaussians.positions - Tensor(pos_w)             # [N,3]
    pc = ad.matmul(rel, ad.transpose(A, (1, 0)))          # camera coords [N,3]
    z_all = pc.data[:, 2]
    visible = np.nonzero(z_all > cam.znear)[0]
    if visible.size == 0:
        return _background(cam, bg)
    order = visible[np.argsort(z_all[visible], kind="stable")]

    pc = ad.take_rows(pc, order)
    quats = ad.take_rows(gaussians.rotations, order)
    log_s = ad.take_rows(gaussians.log_scales, order)
    opac = ad.take_rows(gaussians.opacities, order)
    cols = ad.take_rows(gaussians.colors, order)
    N = order.size

    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    inv_z = 1.0 / z
    u = x * inv_z * cam.focal + cam.cx
    v = y * inv_z * cam.focal + cam.cy

    # rotation matrix entries from (defensively normalized) quaternions
    n2 = ad.tsum(quats * quats, axis=1)
    qn = quats / ad.reshape(ad.sqrt(n2), (N, 1))
    qw, qx, qy, qz = qn[:, 0], qn[:, 1], qn[:, 2], qn[:, 3]
    R = [[1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qw * qz), 2 * (qx * qz + qw * qy)],
         [2 * (qx * qy + qw * qz), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qw * qx)],
         [2 * (qx * qz - qw * qy), 2 * (qy * qz + qw * qx), 1 - 2 * (qx * qx + qy * qy)]]

    # W = A R (camera-frame principal axes), then Sigma_cam = W diag(s^2) W^T
    Arows = rot_w
    W = [[None] * 3 for _ in range(3)]
    for i in range(3):
        for r in range(3):
            W[i][r] = (R[0][r] * Arows[i, 0] + R[1][r] * Arows[i, 1]
                       + R[2][r] * Arows[i, 2])
    s2 = [ad.exp(log_s[:, r] * 2.0) for r in range(3)]
    Sig = [[None] * 3 for _ in range(3)]
    for i in range(3):
        for j in range(i, 3):
            Sig[i][j] = (W[i][0] * W[j][0] * s2[0] + W[i][1] * W[j][1] * s2[1]
                         + W[i][2] * W[j][2] * s2[2])

    # push through the projection Jacobian to 2D
    jf = inv_z * cam.focal
    ax = -(x * inv_z) * jf
    ay = -(y * inv_z) * jf
    c00 = jf * jf * Sig[0][0] + (2.0 * jf) * ax * Sig[0][2] + ax * ax * Sig[2][2] + FOOTPRINT_BLUR
    c01 = jf * jf * Sig[0][1] + jf * ay * Sig[0][2] + ax * jf * Sig[1][2] + ax * ay * Sig[2][2]
    c11 = jf * jf * Sig[1][1] + (2.0 * jf) * ay * Sig[1][2] + ay * ay * Sig[2][2] + FOOTPRINT_BLUR
    det = c00 * c11 - c01 * c01
    i00 = c11 / det
    i01 = c01 / det * -1.0
    i11 = c00 / det

    # footprint weights over the full pixel grid (fused primitive)
    px = np.tile(np.arange(cam.width) + 0.5, cam.height)
    py = np.repeat(np.arange(cam.height) + 0.5, cam.width)
    P = cam.width * cam.height
    alpha = splat_alpha(u, v, i00, i01, i11, opac, px, py)

    # front-to-back compositing (rows already depth sorted)
    trans = ad.exclusive_cumprod(1.0 - alpha, axis=0)     # [N,P]
    w = alpha * trans
    rgb_flat = ad.transpose(ad.matmul(ad.transpose(w, (1, 0)), cols), (1, 0))
    t_total = trans[N - 1] * (1.0 - alpha[N - 1])         # [P]
    rgb_flat = rgb_flat + ad.reshape(t_total, (1, P)) * Tensor(bg[:, None])
    depth_flat = ad.matmul(ad.reshape(z, (1, N)), w)
    alpha_flat = 1.0 - t_total

    image = ad.reshape(rgb_flat, (3, cam.height, cam.width))
    depth = ad.reshape(depth_flat, (cam.height, cam.width))
    alpha_map = ad.reshape(alpha_flat, (cam.height, cam.width))
    return image, depth, alpha_map


def render_video(frame_sets, cams, bg=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Plain-array [V,T,3,H,W] render of per-frame GaussianSets."""
    frames = []
    for cam in cams:
        row = [render(gs, cam, bg)[0].data for gs in frame_sets]
        frames.append(np.stack(row))
    return np.stack(frames)
