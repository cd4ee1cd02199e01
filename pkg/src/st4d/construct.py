"""4D construction: fit static anchors to the static orbital video, then a
deformation field to the reference view, then refine everything on the full
video.

Phases (budget split): A = static anchor fit and B = deformation via the
reference-view MSE share the coarse budget; C = joint refinement under the
weighted video loss takes the fine budget. The optimizer minibatches views
and frames per iteration; the loss functions below always evaluate their
full definitions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import GradTape, Tensor, grad
from .consistency import FeatureExtractor, loss_perc
from .errors import NumericalError
from .gaussians import GaussianSet, quat_normalize
from .hexplane import Deformer, HexPlaneField, PriorBank, deform_set
from .nn import Adam, rng_from
from .render import Camera, render


def depth_smoothness(depth: Tensor) -> Tensor:
    """Mean squared difference over all horizontally and vertically adjacent
    depth pixels, pooled together."""
    dh = depth[..., :, 1:] - depth[..., :, :-1]
    dv = depth[..., 1:, :] - depth[..., :-1, :]
    total = ad.tsum(dh * dh) + ad.tsum(dv * dv)
    return total * (1.0 / (dh.size + dv.size))


def loss_hex(deformer: Deformer, priors, gaussians: GaussianSet,
             ref_video, ref_cam: Camera, taus=None) -> Tensor:
    """Reference-view deformation loss: mean over frames of per-frame MSE."""
    ref = ref_video if isinstance(ref_video, np.ndarray) else np.asarray(ref_video)
    T = ref.shape[0]
    if taus is None:
        taus = [i / T for i in range(T)]
    if len(taus) != T:
        raise ValueError(f"{T} frames but {len(taus)} timestamps")
    total = None
    for i, tau in enumerate(taus):
        img, _, _ = render(deform_set(gaussians, deformer, priors, tau), ref_cam)
        term = ad.mean_sq(img - Tensor(ref[i]))
        total = term if total is None else total + term
    return total * (1.0 / T)


@dataclass(frozen=True)
class GsWeights:
    lambda_l1: float = 1.0
    lambda_lpips: float = 0.1
    lambda_dep: float = 0.05
    lambda_hex: float = 1.0

    def __post_init__(self):
        if min(self.lambda_l1, self.lambda_lpips, self.lambda_dep, self.lambda_hex) < 0:
            raise ValueError("loss weights must be non-negative")


def loss_gs(renders, gt_video, depth_maps, weights: GsWeights,
            fx: FeatureExtractor | None = None, hex_term=None) -> Tensor:
    """Weighted full-video loss: L1 + perceptual (random-filter stand-in for
    the usual perceptual net) + depth smoothness + the reference-view term."""
    gt = gt_video if isinstance(gt_video, Tensor) else Tensor(np.asarray(gt_video))
    rend = renders if isinstance(renders, Tensor) else Tensor(np.asarray(renders))
    if rend.shape != gt.shape:
        raise ValueError(f"render/gt shapes differ: {rend.shape} vs {gt.shape}")
    flat_r = ad.reshape(rend, (-1, 3) + rend.shape[-2:]) if rend.ndim == 5 else rend
    flat_g = ad.reshape(gt, (-1, 3) + gt.shape[-2:]) if gt.ndim == 5 else gt
    total = ad.tmean(ad.absolute(flat_r - flat_g)) * weights.lambda_l1
    if weights.lambda_lpips:
        total = total + loss_perc(flat_r, flat_g, fx or FeatureExtractor()) * weights.lambda_lpips
    if weights.lambda_dep:
        dm = depth_maps if isinstance(depth_maps, Tensor) else Tensor(np.asarray(depth_maps))
        total = total + depth_smoothness(dm) * weights.lambda_dep
    if hex_term is not None:
        total = total + hex_term * weights.lambda_hex
    return total


@dataclass
class ConstructConfig:
    n_anchors: int = 512
    coarse_iters: int = 600      # split between phases A and B
    fine_iters: int = 300        # phase C
    frames_per_iter: int = 1
    lr_pos: float = 0.01
    lr_quat: float = 0.002
    lr_scale: float = 0.01
    lr_opacity: float = 0.05
    lr_color: float = 0.05
    lr_field: float = 5e-3
    fine_lr_mult: float = 0.3
    weights: GsWeights = field(default_factory=GsWeights)
    field_resolution: int = 16
    use_prior_attention: bool = True
    init_scale: float = 0.07
    perc_seed: int = 7
    seed: int = 0


@dataclass
class ConstructResult:
    gaussians: GaussianSet
    deformer: Deformer
    priors: PriorBank | None
    records: list
    final_renders: np.ndarray    # [V,T,3,H,W]

    def frame_set(self, tau: float) -> GaussianSet:
        return deform_set(self.gaussians, self.deformer, self.priors, tau).detach()


def init_anchors(static_video: np.ndarray, cams: list[Camera],
                 n_anchors: int, init_scale: float, seed: int):
    """Seed anchors by back-projecting luminance-weighted pixels of each
    static view at the orbit radius (a cheap alpha proxy: the background is
    black, so brightness marks coverage)."""
    rng = rng_from(seed)
    V = static_video.shape[0]
    per_view = [n_anchors // V + (1 if k < n_anchors % V else 0) for k in range(V)]
    pts, cols = [], []
    for v, cam in enumerate(cams[:V]):
        frame = static_video[v]
        weight = frame.max(axis=0).reshape(-1)
        if weight.sum() <= 0:
            weight = np.ones_like(weight)
        prob = weight / weight.sum()
        idx = rng.choice(weight.size, size=per_view[v], p=prob)
        iy, ix = np.divmod(idx, cam.width)
        pos, rot = cam.pose()
        d_cam = np.stack([(ix + 0.5 - cam.cx) / cam.focal,
                          (iy + 0.5 - cam.cy) / cam.focal,
                          np.ones_like(ix, dtype=np.float64)], axis=1)
        d_world = d_cam @ rot           # rot rows are camera axes, so this is R^T d
        d_world /= np.linalg.norm(d_world, axis=1, keepdims=True)
        pts.append(pos + d_world * cam.radius)
        cols.append(frame[:, iy, ix].T)
    positions = np.concatenate(pts)
    colors = np.clip(np.concatenate(cols), 0.02, 0.98)
    quats = np.tile([1.0, 0.0, 0.0, 0.0], (n_anchors, 1))
    log_scales = np.log(np.full((n_anchors, 3), init_scale))
    op_logit = np.zeros(n_anchors)
    col_logit = np.log(colors / (1.0 - colors))
    return positions, quats, log_scales, op_logit, col_logit


def _logit_set(pos, quat, log_s, op_logit, col_logit) -> GaussianSet:
    return GaussianSet(pos, quat, log_s, ad.sigmoid(op_logit), ad.sigmoid(col_logit))


def construct_4d(video: np.ndarray, static_video: np.ndarray,
                 cams: list[Camera], config: ConstructConfig,
                 priors: PriorBank | None = None,
                 record_hook=None) -> ConstructResult:
    """Optimize anchors + deformation field to explain an orbital video.

    `video` is [V,T,3,H,W]; `static_video` is [V,3,H,W] showing the frozen
    tau=0 object along the same orbit. A NaN loss aborts with a diagnostic
    dump via NumericalError.
    """
    V, T = video.shape[:2]
    if static_video.shape[0] != V:
        raise ValueError("static and dynamic videos must share the camera orbit")
    if config.use_prior_attention and priors is None:
        priors = PriorBank.random(seed=config.seed + 99)
    if not config.use_prior_attention:
        priors = None

    rng = rng_from(config.seed)
    pos0, quat0, ls0, op0, col0 = init_anchors(
        static_video, cams, config.n_anchors, config.init_scale, config.seed + 1)
    pos = Tensor(pos0, requires_grad=True)
    quat = Tensor(quat0, requires_grad=True)
    log_s = Tensor(ls0, requires_grad=True)
    op_logit = Tensor(op0, requires_grad=True)
    col_logit = Tensor(col0, requires_grad=True)
    gauss_params = {"anchors.positions": pos, "anchors.rotations": quat,
                    "anchors.log_scales": log_s, "anchors.opacity": op_logit,
                    "anchors.color": col_logit}

    fld = HexPlaneField(resolution=config.field_resolution, seed=config.seed + 2)
    deformer = Deformer(fld, use_priors=config.use_prior_attention,
                        seed=config.seed + 3)
    fx = FeatureExtractor(seed=config.perc_seed)
    taus = [i / T for i in range(T)]
    records = []

    def lr_map(mult=1.0):
        return {"positions": config.lr_pos * mult, "rotations": config.lr_quat * mult,
                "log_scales": config.lr_scale * mult, "opacity": config.lr_opacity * mult,
                "color": config.lr_color * mult}

    def check(loss_t, phase, it):
        val = float(loss_t.data)
        if not np.isfinite(val):
            from . import checkpoint
            dump = {k: p.data.copy() for k, p in gauss_params.items()}
            dump.update({"field." + k: v.data.copy()
                         for k, v in deformer.params().items()})
            checkpoint.save("construct_diverged.ckpt", dump)
            raise NumericalError(
                f"loss became non-finite in phase {phase} iteration {it}; "
                "state dumped to construct_diverged.ckpt")
        records.append({"phase": phase, "iteration": it, "loss": val})
        if record_hook:
            record_hook(records[-1])
        return val

    # phase A: static anchors against the static orbital views
    a_iters = config.coarse_iters // 2
    b_iters = config.coarse_iters - a_iters
    opt_a = Adam(gauss_params, lr=config.lr_pos, lr_overrides=lr_map())
    for it in range(a_iters):
        v = it % V
        with GradTape():
            img, depth, _ = render(_logit_set(pos, quat, log_s, op_logit, col_logit),
                                   cams[v])
            loss = ad.mean_sq(img - Tensor(static_video[v]))
            loss = loss + depth_smoothness(depth) * config.weights.lambda_dep
        check(loss, "A", it)
        opt_a.step(grad(loss, gauss_params.values()))
        quat.data = quat_normalize(quat.data)

    # phase B: deformation field on the reference view, anchors frozen
    field_params = deformer.params()
    opt_b = Adam(field_params, lr=config.lr_field)
    static_set = _logit_set(pos.detach(), quat.detach(), log_s.detach(),
                            op_logit.detach(), col_logit.detach())
    for it in range(b_iters):
        picks = rng.choice(T, size=min(config.frames_per_iter, T), replace=False)
        with GradTape():
            total = None
            for ti in picks:
                g = deform_set(static_set, deformer, priors, taus[ti])
                img, _, _ = render(g, cams[0])
                term = ad.mean_sq(img - Tensor(video[0, ti]))
                total = term if total is None else total + term
            loss = total * (1.0 / len(picks))
        check(loss, "B", it)
        opt_b.step(grad(loss, field_params.values()))

    # phase C: joint refinement on the full video
    all_params = dict(gauss_params)
    all_params.update({"field." + k: v for k, v in field_params.items()})
    opt_c = Adam(all_params, lr=config.lr_field * config.fine_lr_mult,
                 lr_overrides={k: v * config.fine_lr_mult
                               for k, v in lr_map().items()})
    w = config.weights
    for it in range(config.fine_iters):
        vs = rng.integers(0, V, size=config.frames_per_iter)
        ts = rng.integers(0, T, size=config.frames_per_iter)
        with GradTape():
            cur = _logit_set(pos, quat, log_s, op_logit, col_logit)
            total = None
            for vi, ti in zip(vs, ts):
                g = deform_set(cur, deformer, priors, taus[ti])
                img, depth, _ = render(g, cams[vi])
                gt = Tensor(video[vi, ti])
                term = ad.tmean(ad.absolute(img - gt)) * w.lambda_l1
                term = term + loss_perc(ad.reshape(img, (1,) + img.shape),
                                        ad.reshape(gt, (1,) + gt.shape), fx) * w.lambda_lpips
                term = term + depth_smoothness(depth) * w.lambda_dep
                if vi == 0:
                    ref_img = img
                else:
                    ref_img, _, _ = render(g, cams[0])
                term = term + ad.mean_sq(ref_img - Tensor(video[0, ti])) * w.lambda_hex
                total = term if total is None else total + term
            loss = total * (1.0 / config.frames_per_iter)
        check(loss, "C", it)
        opt_c.step(grad(loss, all_params.values()))
        quat.data = quat_normalize(quat.data)

    final_set = _logit_set(pos.detach(), quat.detach(), log_s.detach(),
                           op_logit.detach(), col_logit.detach())
    renders = np.stack([
        np.stack([render(deform_set(final_set, deformer, priors, taus[ti]),
                         cams[vi])[0].data for ti in range(T)])
        for vi in range(V)])
    return ConstructResult(final_set, deformer, priors, records, renders)
