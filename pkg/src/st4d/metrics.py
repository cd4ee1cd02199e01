"""Image metrics: PSNR, windowed SSIM, and a temporal-smoothness score."""

from __future__ import annotations

import math

import numpy as np

SSIM_WIN = 8
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1/MSE) for [0,1] images; +inf when identical."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _ssim_single(a: np.ndarray, b: np.ndarray) -> float:
    wa = np.lib.stride_tricks.sliding_window_view(a, (SSIM_WIN, SSIM_WIN))
    wb = np.lib.stride_tricks.sliding_window_view(b, (SSIM_WIN, SSIM_WIN))
    mu_a = wa.mean(axis=(-1, -2))
    mu_b = wb.mean(axis=(-1, -2))
    da = wa - mu_a[..., None, None]
    db = wb - mu_b[..., None, None]
    var_a = (da * da).mean(axis=(-1, -2))
    var_b = (db * db).mean(axis=(-1, -2))
    cov = (da * db).mean(axis=(-1, -2))
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float((num / den).mean())


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM over sliding 8x8 uniform windows; channels averaged."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        return _ssim_single(a, b)
    if a.ndim == 3:
        return float(np.mean([_ssim_single(a[c], b[c]) for c in range(a.shape[0])]))
    raise ValueError(f"expected [H,W] or [C,H,W], got {a.shape}")


def frame_delta(frames: np.ndarray) -> float:
    """Mean absolute change between consecutive frames along axis 0."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape[0] < 2:
        raise ValueError("need at least two frames")
    return float(np.mean(np.abs(np.diff(frames, axis=0))))


def temporal_smoothness_score(renders: np.ndarray, gt: np.ndarray) -> float:
    """How closely the rendered motion magnitude tracks the ground truth's
    (absolute difference of the two mean frame deltas; 0 is perfect)."""
    return abs(frame_delta(renders) - frame_delta(gt))


def video_psnr(a: np.ndarray, b: np.ndarray) -> float:
    return psnr(np.asarray(a), np.asarray(b))


def video_ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM over every view/frame of [V,T,3,H,W] videos."""
    a, b = np.asarray(a), np.asarray(b)
    vals = [ssim(a[v, t], b[v, t])
            for v in range(a.shape[0]) for t in range(a.shape[1])]
    return float(np.mean(vals))
