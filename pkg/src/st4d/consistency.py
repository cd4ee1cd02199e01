"""Stage-3 alignment objective and its four terms, plus the conditional
denoising objective for stage 4.

The perceptual term uses a frozen random-filter conv extractor instead of a
pretrained network; random filters are a serviceable perceptual proxy at this
scale and keep the package self-contained. Convention: every term averages
over elements; the perceptual term sums over extractor taps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .diffusion import NoiseSchedule, loss_ldm
from .nn import rng_from


class FeatureExtractor:
    """Three frozen seeded conv layers; taps after each layer."""

    def __init__(self, seed: int = 7, widths=(8, 8, 8)):
        rng = rng_from(seed)
        self.seed = seed
        chans = [3, *widths]
        self.weights = []
        self.strides = [2, 2, 1]
        for i in range(3):
            fan = chans[i] * 9
            w = rng.normal(0.0, 1.0 / np.sqrt(fan), size=(chans[i + 1], chans[i], 3, 3))
            self.weights.append(Tensor(w))

    def __call__(self, frames: Tensor) -> list[Tensor]:
        if frames.ndim != 4 or frames.shape[1] != 3:
            raise ValueError(f"expected [B,3,H,W] frames, got {frames.shape}")
        taps = []
        h = frames
        for w, s in zip(self.weights, self.strides):
            h = ad.tanh(ad.conv2d(h, w, None, stride=s, pad=1))
            taps.append(h)
        return taps


def _as_frames(x) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim == 5:   # [V,T,3,H,W] -> [V*T,3,H,W]
        x = ad.reshape(x, (x.shape[0] * x.shape[1],) + x.shape[2:])
    return x


def loss_rec(pred, gt) -> Tensor:
    pred, gt = _as_frames(pred), _as_frames(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    return ad.tmean(ad.absolute(pred - gt))


def loss_perc(pred, gt, fx: FeatureExtractor) -> Tensor:
    pred, gt = _as_frames(pred), _as_frames(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    total = None
    for fp, fg in zip(fx(pred), fx(gt)):
        term = ad.mean_sq(fp - fg)
        total = term if total is None else total + term
    return total


def loss_temp(features_per_frame) -> Tensor:
    """Mean over consecutive frame pairs of the mean-squared feature change."""
    seq = features_per_frame
    if isinstance(seq, Tensor):
        seq = [seq[i] for i in range(seq.shape[0])]
    if len(seq) < 2:
        raise ValueError("need at least two frames")
    total = None
    for a, b in zip(seq[:-1], seq[1:]):
        term = ad.mean_sq(b - a)
        total = term if total is None else total + term
    return total * (1.0 / (len(seq) - 1))


def loss_align(f_s: Tensor, f_t: Tensor) -> Tensor:
    """1 - cosine similarity of the pooled spatial/temporal features."""
    ns, nt = float(np.linalg.norm(f_s.data)), float(np.linalg.norm(f_t.data))
    if ns == 0.0 or nt == 0.0:
        raise ValueError("cosine alignment undefined for zero-norm features")
    cos = ad.dot(f_s, f_t) / (ad.l2norm(f_s) * ad.l2norm(f_t))
    return 1.0 - cos


@dataclass(frozen=True)
class ConsistencyWeights:
    lambda_rec: float = 1.0
    lambda_perc: float = 0.1
    lambda_temp: float = 0.5
    lambda_align: float = 0.2

    def __post_init__(self):
        vals = (self.lambda_rec, self.lambda_perc, self.lambda_temp, self.lambda_align)
        if any(v < 0 for v in vals):
            raise ValueError("consistency weights must be non-negative")
        if all(v == 0 for v in vals):
            raise ValueError("at least one consistency weight must be positive")


def loss_const(terms: dict, weights: ConsistencyWeights) -> Tensor:
    """Weighted sum of the four consistency terms (keys rec/perc/temp/align)."""
    lam = {"rec": weights.lambda_rec, "perc": weights.lambda_perc,
           "temp": weights.lambda_temp, "align": weights.lambda_align}
    total = None
    for key, term in terms.items():
        scaled = term * lam[key]
        total = scaled if total is None else total + scaled
    return total


def loss_cond(denoiser, z0, cond, schedule: NoiseSchedule, seed) -> Tensor:
    """Conditional denoising objective; identical draw protocol to loss_ldm."""
    return loss_ldm(denoiser, z0, cond, schedule, seed)
