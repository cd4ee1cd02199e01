"""Noise schedules, the forward/reverse denoising process, the frame
autoencoder that defines the latent space, and the denoising objective.

Conventions fixed here and used everywhere else:
  * `t` is always a diffusion step index in [0, T); video frame indices are
    called `tau` throughout the package.
  * the norm in the denoising objective is the mean squared error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import Conv2d, Module, rng_from


@dataclass
class NoiseSchedule:
    betas: np.ndarray
    alphas: np.ndarray = field(init=False)
    alpha_bar: np.ndarray = field(init=False)

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=np.float64)
        if np.any(self.betas <= 0.0) or np.any(self.betas >= 1.0):
            raise ValueError("betas must lie in (0, 1)")
        self.alphas = 1.0 - self.betas
        self.alpha_bar = np.cumprod(self.alphas)
        if np.any(np.diff(self.alpha_bar) >= 0.0):
            raise ValueError("alpha_bar must be strictly decreasing")

    @property
    def num_steps(self) -> int:
        return len(self.betas)

    @classmethod
    def linear(cls, num_steps: int = 20, beta_start: float = 1e-4,
               beta_end: float = 0.1) -> "NoiseSchedule":
        return cls(np.linspace(beta_start, beta_end, num_steps))


def _check_t(schedule: NoiseSchedule, t: int, lo: int = 0):
    if not (lo <= t < schedule.num_steps):
        raise ValueError(f"step index {t} outside [{lo}, {schedule.num_steps})")


def forward_diffuse(z0, t: int, eps, schedule: NoiseSchedule):
    """q(z_t | z_0): sqrt(abar_t) z0 + sqrt(1 - abar_t) eps."""
    _check_t(schedule, t)
    ab = schedule.alpha_bar[t]
    return z0 * math.sqrt(ab) + eps * math.sqrt(1.0 - ab)


def invert_forward_diffuse(z_t, t: int, eps, schedule: NoiseSchedule):
    """Exact algebraic inversion of forward_diffuse given the true noise."""
    _check_t(schedule, t)
    ab = schedule.alpha_bar[t]
    return (z_t - eps * math.sqrt(1.0 - ab)) * (1.0 / math.sqrt(ab))


def predict_z0(z_t, t: int, predicted_eps, schedule: NoiseSchedule):
    """z0 estimate implied by a noise prediction (same algebra as inversion)."""
    return invert_forward_diffuse(z_t, t, predicted_eps, schedule)


def ddpm_reverse_step(z_t: np.ndarray, t: int, predicted_eps: np.ndarray,
                      schedule: NoiseSchedule, rng=None,
                      add_noise: bool = True) -> np.ndarray:
    """One posterior step z_t -> z_{t-1}; the t=1 step never adds noise."""
    if t < 1:
        raise ValueError("reverse step needs t >= 1")
    _check_t(schedule, t)
    beta = schedule.betas[t]
    alpha = schedule.alphas[t]
    ab_t = schedule.alpha_bar[t]
    ab_prev = schedule.alpha_bar[t - 1]
    mean = (z_t - predicted_eps * (beta / math.sqrt(1.0 - ab_t))) / math.sqrt(alpha)
    if add_noise and t > 1:
        var = (1.0 - ab_prev) / (1.0 - ab_t) * beta
        mean = mean + math.sqrt(var) * rng_from(rng).standard_normal(z_t.shape)
    return mean


def reverse_chain(denoise_fn, z_start: np.ndarray, schedule: NoiseSchedule,
                  start_t: int | None = None, rng=None,
                  deterministic: bool = True) -> np.ndarray:
    """Run the reverse process from step start_t down to z_0.

    `denoise_fn(z_t, t)` returns the predicted noise as a plain array.
    Deterministic mode suppresses the posterior noise entirely, which makes
    the chain bit-reproducible.
    """
    t = schedule.num_steps - 1 if start_t is None else start_t
    rng = None if deterministic else rng_from(rng)
    z = np.asarray(z_start, dtype=np.float64)
    while t >= 1:
        eps_hat = denoise_fn(z, t)
        z = ddpm_reverse_step(z, t, eps_hat, schedule, rng=rng,
                              add_noise=not deterministic)
        t -= 1
    return z


def sample_step_and_noise(shape, schedule: NoiseSchedule, seed):
    """The (t, eps) draw used by the denoising losses; order is part of the
    contract so tests can reproduce it."""
    rng = rng_from(seed)
    t = int(rng.integers(0, schedule.num_steps))
    eps = rng.standard_normal(shape)
    return t, eps


def loss_ldm(denoiser, z0, cond, schedule: NoiseSchedule, seed) -> Tensor:
    """Denoising objective: mean squared error between drawn and predicted noise.

    `denoiser(z_t, cond, t)` returns a Tensor shaped like z_t.
    """
    z0 = z0 if isinstance(z0, Tensor) else Tensor(z0)
    t, eps = sample_step_and_noise(z0.shape, schedule, seed)
    z_t = forward_diffuse(z0.detach(), t, Tensor(eps), schedule)
    eps_hat = denoiser(z_t, cond, t)
    if eps_hat.shape != z0.shape:
        raise ValueError(f"denoiser output {eps_hat.shape} != latent {z0.shape}")
    return ad.mean_sq(eps_hat - Tensor(eps))


# ---------------------------------------------------------------------------
# frame autoencoder (the "VAE" of the pipeline, deterministic at desk scale)

class FrameAutoencoder(Module):
    """Per-frame conv autoencoder defining the latent space.

    32x32x3 frames map to latent_channels x 8 x 8 latents by two stride-2
    stages. Trained first, then frozen for every diffusion stage.
    """

    def __init__(self, latent_channels: int = 8, hidden: int = 32, seed: int = 0):
        super().__init__()
        rng = rng_from(seed)
        self.latent_channels = latent_channels
        self.enc1 = self.add_child("enc1", Conv2d(3, hidden, 3, rng, stride=2))
        self.enc2 = self.add_child("enc2", Conv2d(hidden, hidden, 3, rng, stride=2))
        self.enc3 = self.add_child("enc3", Conv2d(hidden, latent_channels, 3, rng))
        self.dec1 = self.add_child("dec1", Conv2d(latent_channels, hidden, 3, rng))
        self.dec2 = self.add_child("dec2", Conv2d(hidden, hidden, 3, rng))
        self.dec3 = self.add_child("dec3", Conv2d(hidden, 3, 3, rng))

    def encode(self, frames: Tensor) -> Tensor:
        if frames.ndim != 4 or frames.shape[1] != 3:
            raise ValueError(f"expected [B,3,H,W] frames, got {frames.shape}")
        h = ad.tanh(self.enc1(frames))
        h = ad.tanh(self.enc2(h))
        return self.enc3(h)

    def decode(self, z: Tensor) -> Tensor:
        if z.ndim != 4 or z.shape[1] != self.latent_channels:
            raise ValueError(f"expected [B,{self.latent_channels},h,w] latents, got {z.shape}")
        h = ad.upsample_nearest2(ad.tanh(self.dec1(z)))
        h = ad.upsample_nearest2(ad.tanh(self.dec2(h)))
        return self.dec3(h)

    def roundtrip(self, frames: Tensor) -> Tensor:
        return self.decode(self.encode(frames))

    # video helpers: [V,T,3,H,W] <-> [V,T,C,h,w]
    def encode_video(self, video) -> Tensor:
        video = video if isinstance(video, Tensor) else Tensor(video)
        V, T = video.shape[:2]
        z = self.encode(ad.reshape(video, (V * T,) + video.shape[2:]))
        return ad.reshape(z, (V, T) + z.shape[1:])

    def decode_video(self, z4d: Tensor) -> Tensor:
        V, T = z4d.shape[:2]
        x = self.decode(ad.reshape(z4d, (V * T,) + z4d.shape[2:]))
        return ad.reshape(x, (V, T) + x.shape[1:])


def train_frame_autoencoder(ae: FrameAutoencoder, frames: np.ndarray,
                            steps: int, seed: int, lr: float = 2e-3,
                            batch: int = 8) -> list[float]:
    """Fit the autoencoder with MSE; returns the per-step loss curve."""
    from .autodiff import GradTape, grad
    from .nn import Adam

    rng = rng_from(seed)
    params = ae.params()
    opt = Adam(params, lr=lr)
    curve = []
    n = frames.shape[0]
    for _ in range(steps):
        idx = rng.integers(0, n, size=min(batch, n))
        x = Tensor(frames[idx])
        with GradTape():
            rec = ae.roundtrip(x)
            loss = ad.mean_sq(rec - x)
        opt.step(grad(loss, params.values()))
        curve.append(float(loss.data))
    return curve
