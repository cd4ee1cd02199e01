"""Procedural animated scenes with exact ground truth.

A scene is a few Gaussian-cluster primitives (spheres/boxes) with smooth
per-primitive animation programs over normalized time tau in [0,1]; tau=0
always reproduces the static configuration. Frames come from the package's
own renderer, so reconstruction targets have a known optimum.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .frameio import write_ppm
from .gaussians import GaussianSet, axis_angle_quat, quat_mul, quat_normalize
from .nn import rng_from
from .render import Camera, orbit_cameras, render

PALETTE = {
    "red": (0.85, 0.15, 0.12), "green": (0.15, 0.75, 0.2),
    "blue": (0.2, 0.3, 0.9), "yellow": (0.9, 0.85, 0.15),
    "purple": (0.6, 0.2, 0.8), "orange": (0.95, 0.55, 0.1),
    "cyan": (0.15, 0.8, 0.8), "white": (0.92, 0.92, 0.92),
}
MOTION_WORDS = {"none": "still", "slide": "sliding", "orbit": "orbiting",
                "spin": "spinning", "pulse": "pulsing"}


@dataclass
class Motion:
    kind: str = "none"          # none | slide | orbit | spin | pulse
    amplitude: float = 0.0
    axis: tuple = (0.0, 1.0, 0.0)


@dataclass
class Primitive:
    kind: str                   # sphere | box
    center: tuple
    size: float
    color_name: str
    n_points: int
    motion: Motion
    seed: int


@dataclass
class SceneSpec:
    primitives: list[Primitive]
    seed: int
    name: str = "scene"

    @property
    def description(self) -> str:
        parts = []
        for p in self.primitives:
            word = MOTION_WORDS[p.motion.kind]
            article = "an" if p.color_name[0] in "aeiou" else "a"
            parts.append(f"{article} {p.color_name} {word} {p.kind}")
        return " and ".join(parts)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SceneSpec":
        raw = json.loads(text)
        prims = [Primitive(kind=p["kind"], center=tuple(p["center"]),
                           size=p["size"], color_name=p["color_name"],
                           n_points=p["n_points"],
                           motion=Motion(**p["motion"]), seed=p["seed"])
                 for p in raw["primitives"]]
        return cls(prims, raw["seed"], raw["name"])


def _primitive_points(prim: Primitive):
    rng = rng_from(prim.seed)
    n = prim.n_points
    if prim.kind == "sphere":
        d = rng.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        radius = prim.size * rng.uniform(0.4, 1.0, size=(n, 1)) ** (1 / 3)
        offsets = d * radius
    elif prim.kind == "box":
        offsets = rng.uniform(-prim.size, prim.size, size=(n, 3))
    else:
        raise ValueError(f"unknown primitive kind {prim.kind!r}")
    base = np.asarray(PALETTE[prim.color_name])
    colors = np.clip(base + rng.normal(0, 0.05, size=(n, 3)), 0.02, 0.98)
    scale = prim.size * 1.6 / max(n, 1) ** (1 / 3)
    log_scales = np.log(scale * rng.uniform(0.7, 1.3, size=(n, 3)))
    opacities = rng.uniform(0.55, 0.9, size=n)
    quats = np.stack([quat_normalize(rng.normal(size=4)) for _ in range(n)])
    return offsets, quats, log_scales, opacities, colors


def _apply_motion(motion: Motion, offsets, quats, log_scales, tau: float):
    """Offsets/orientations/scales at time tau; tau=0 is exactly static."""
    shift = np.zeros(3)
    ang = 2.0 * np.pi * tau
    if motion.kind == "slide":
        shift = np.asarray(motion.axis) * (motion.amplitude * np.sin(ang))
    elif motion.kind == "orbit":
        shift = motion.amplitude * np.array([np.sin(ang), 0.0, np.cos(ang) - 1.0])
    elif motion.kind == "spin":
        if tau != 0.0:
            q = axis_angle_quat(motion.axis, motion.amplitude * ang)
            rotm = _rotmat(q)
            offsets = offsets @ rotm.T
            quats = quat_mul(np.broadcast_to(q, quats.shape), quats)
    elif motion.kind == "pulse":
        factor = 1.0 + motion.amplitude * np.sin(ang)
        offsets = offsets * factor
        log_scales = log_scales + np.log(factor)
    elif motion.kind != "none":
        raise ValueError(f"unknown motion kind {motion.kind!r}")
    return offsets + shift, quats, log_scales


def _rotmat(q):
    from .gaussians import quat_to_rotmat
    return quat_to_rotmat(q)


def gaussians_at(spec: SceneSpec, tau: float) -> GaussianSet:
    """Exact ground-truth GaussianSet of the scene at normalized time tau."""
    if not spec.primitives:
        raise ValueError("scene has no primitives")
    ps, qs, ls, os_, cs = [], [], [], [], []
    for prim in spec.primitives:
        offsets, quats, log_scales, opac, colors = _primitive_points(prim)
        offsets, quats, log_scales = _apply_motion(
            prim.motion, offsets, quats, log_scales, tau)
        ps.append(offsets + np.asarray(prim.center))
        qs.append(quats)
        ls.append(log_scales)
        os_.append(opac)
        cs.append(colors)
    return GaussianSet(np.concatenate(ps), np.concatenate(qs),
                       np.concatenate(ls), np.concatenate(os_),
                       np.concatenate(cs))


def random_scene(seed: int, name: str | None = None) -> SceneSpec:
    rng = rng_from(seed)
    n_prims = int(rng.integers(1, 3))
    colors = list(PALETTE)
    kinds = ["sphere", "box"]
    motions = ["slide", "orbit", "spin", "pulse"]
    prims = []
    slots = rng.permutation([(-0.3, 0.0, 0.0), (0.3, 0.1, 0.1), (0.0, -0.25, -0.2)])
    for i in range(n_prims):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        prims.append(Primitive(
            kind=kinds[int(rng.integers(0, 2))],
            center=tuple(np.asarray(slots[i]) + rng.uniform(-0.08, 0.08, 3)),
            size=float(rng.uniform(0.18, 0.3)),
            color_name=colors[int(rng.integers(0, len(colors)))],
            n_points=int(rng.integers(90, 150)),
            motion=Motion(kind=motions[int(rng.integers(0, len(motions)))],
                          amplitude=float(rng.uniform(0.1, 0.22)),
                          axis=tuple(axis)),
            seed=int(rng.integers(2**31)),
        ))
    return SceneSpec(prims, seed, name or f"scene{seed}")


@dataclass
class SceneData:
    spec: SceneSpec
    frames: np.ndarray          # [V,T,3,H,W]
    static_frames: np.ndarray   # [V,3,H,W]
    taus: np.ndarray


@dataclass
class Dataset:
    scenes: list[SceneData]
    cams: list[Camera]
    v: int
    t: int
    resolution: int


def synth_scene(spec: SceneSpec, cams: list[Camera], T: int) -> SceneData:
    taus = np.array([i / T for i in range(T)])
    sets = [gaussians_at(spec, float(tau)) for tau in taus]
    frames = np.stack([
        np.stack([render(g, cam)[0].data for g in sets]) for cam in cams])
    static = gaussians_at(spec, 0.0)
    static_frames = np.stack([render(static, cam)[0].data for cam in cams])
    return SceneData(spec, frames, static_frames, taus)


def synth_dataset(seed: int = 1, n_scenes: int = 3, V: int = 4, T: int = 8,
                  resolution: int = 32, radius: float = 2.5) -> Dataset:
    """Deterministic toy dataset: n_scenes animated scenes on a shared orbit
    plus their frozen tau=0 counterparts."""
    if V < 2 or T < 2:
        raise ValueError("need V >= 2 and T >= 2")
    cams = orbit_cameras(V, radius=radius, width=resolution, height=resolution)
    scene_rng = rng_from(seed)
    scenes = []
    for i in range(n_scenes):
        spec = random_scene(int(scene_rng.integers(2**31)), name=f"scene{i}")
        scenes.append(synth_scene(spec, cams, T))
    return Dataset(scenes, cams, V, T, resolution)


def save_dataset(ds: Dataset, root) -> None:
    """PPM frames + scene specs + ground-truth trajectories on disk."""
    from . import checkpoint
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    meta = {"v": ds.v, "t": ds.t, "resolution": ds.resolution,
            "scenes": [s.spec.name for s in ds.scenes],
            "cameras": [{"azimuth": c.azimuth, "elevation": c.elevation,
                         "radius": c.radius} for c in ds.cams]}
    (root / "dataset.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    for s in ds.scenes:
        sdir = root / s.spec.name
        sdir.mkdir(exist_ok=True)
        (sdir / "spec.json").write_text(s.spec.to_json())
        for v in range(ds.v):
            for t in range(ds.t):
                write_ppm(sdir / f"frame_v{v:02d}_t{t:02d}.ppm", s.frames[v, t])
            write_ppm(sdir / f"static_v{v:02d}.ppm", s.static_frames[v])
        traj = {}
        for i, tau in enumerate(s.taus):
            traj.update(gaussians_at(s.spec, float(tau)).state_dict(
                prefix=f"tau{i:02d}."))
        checkpoint.save(sdir / "ground_truth.ckpt", traj)
