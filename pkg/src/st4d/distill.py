"""Joint space-time kernel distillation.

Two frozen teachers (a multi-view denoiser carrying spatial priors und a
single-view sequence denoiser carrying temporal priors) are distilled into
the student's spatial and temporal channels. A joint Gaussian kernel over
the teachers' feature deviations weights a shared attention mixture that
forms the distillation targets; the kernel scales and the attention
temperature are learned jointly with the student.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import GradTape, Tensor, grad
from .diffusion import NoiseSchedule, forward_diffuse, sample_step_and_noise
from .nn import Adam, Module, rng_from

SIGMA_FLOOR = 1e-6


class KernelParams(Module):
    """Learnable kernel scales with a positive-semidefiniteness clamp.

    The clamp keeps |alpha| <= sigma_st^2 / (sigma_s * sigma_t), which makes
    the kernel's quadratic form PSD and hence kappa <= 1.
    """

    def __init__(self, sigma_s=1.0, sigma_t=1.0, sigma_st=1.0, alpha=0.0,
                 clamp: bool = True):
        super().__init__()
        self.sigma_s = self.add_param("sigma_s", np.array(float(sigma_s)))
        self.sigma_t = self.add_param("sigma_t", np.array(float(sigma_t)))
        self.sigma_st = self.add_param("sigma_st", np.array(float(sigma_st)))
        self.alpha = self.add_param("alpha", np.array(float(alpha)))
        if clamp:
            self.clamp()

    def clamp(self):
        for s in (self.sigma_s, self.sigma_t, self.sigma_st):
            s.data = np.maximum(s.data, SIGMA_FLOOR)
        bound = float(self.sigma_st.data) ** 2 / (
            float(self.sigma_s.data) * float(self.sigma_t.data))
        self.alpha.data = np.clip(self.alpha.data, -bound, bound)

    def psd_ok(self) -> bool:
        a = float(self.alpha.data)
        return a * a / float(self.sigma_st.data) ** 4 <= 1.0 / (
            float(self.sigma_s.data) ** 2 * float(self.sigma_t.data) ** 2) + 1e-12


@dataclass
class FeatureMeans:
    g_s: Tensor
    g_t: Tensor


def feature_means(f_s: Tensor, f_t: Tensor) -> FeatureMeans:
    """Per-batch token means of the two feature sets."""
    return FeatureMeans(ad.tmean(f_s, axis=0), ad.tmean(f_t, axis=0))


def kernel_eval(f_s: Tensor, f_t: Tensor, means: FeatureMeans,
                params: KernelParams) -> Tensor:
    """Joint Gaussian kernel for one (spatial, temporal) token pair."""
    for x in (f_s.data, f_t.data):
        if not np.isfinite(x).all():
            raise ValueError("non-finite kernel input")
    us = f_s - means.g_s
    ut = f_t - means.g_t
    q = (ad.dot(us, us) / (params.sigma_s * params.sigma_s)
         + ad.dot(ut, ut) / (params.sigma_t * params.sigma_t)
         + (2.0 * params.alpha) * ad.dot(us, ut)
         / (params.sigma_st * params.sigma_st))
    return ad.exp(q * -0.5)


def kernel_batch(f_s: Tensor, f_t: Tensor, means: FeatureMeans,
                 params: KernelParams) -> Tensor:
    """kernel_eval vectorized over [N,d] token sets; returns [N]."""
    us = f_s - means.g_s
    ut = f_t - means.g_t
    q = (ad.tsum(us * us, axis=1) / (params.sigma_s * params.sigma_s)
         + ad.tsum(ut * ut, axis=1) / (params.sigma_t * params.sigma_t)
         + ad.tsum(us * ut, axis=1) * (2.0 * params.alpha)
         / (params.sigma_st * params.sigma_st))
    return ad.exp(q * -0.5)


def kernel_attend(tokens: Tensor, kappa: Tensor, temperature) -> Tensor:
    """Residual kernel-weighted mixture: out_i = f_i + sum_j w_j f_j with
    w = softmax(kappa / temperature) over the token axis."""
    if tokens.shape[0] < 1:
        raise ValueError("need at least one token")
    if kappa.shape != (tokens.shape[0],):
        raise ValueError(f"kappa shape {kappa.shape} != ({tokens.shape[0]},)")
    w = ad.softmax(kappa / temperature, axis=0)
    mix = ad.matmul(ad.reshape(w, (1, w.shape[0])), tokens)   # [1,d]
    return tokens + ad.reshape(mix, (mix.shape[1],))


def distill_loss(student_s: Tensor, student_t: Tensor, teacher_s_bar: Tensor,
                 teacher_t_bar: Tensor, lambda_o: float) -> Tensor:
    """Weighted feature-matching loss between student taps and attended
    teacher targets; mean squared error per spec'd norm convention."""
    if not 0.0 <= lambda_o <= 1.0:
        raise ValueError(f"lambda_o must be in [0,1], got {lambda_o}")
    if student_s.shape != teacher_s_bar.shape or student_t.shape != teacher_t_bar.shape:
        raise ValueError("student/teacher feature shapes differ")
    term_s = ad.mean_sq(student_s - teacher_s_bar)
    term_t = ad.mean_sq(student_t - teacher_t_bar)
    return term_s * lambda_o + term_t * (1.0 - lambda_o)


class TapProjector:
    """Frozen random projection turning mid-layer activations into tokens.

    Activations [B, c_mid, h, w] are pooled over the batch axis (views or
    frames) and projected per latent pixel, giving h*w aligned tokens of
    width d for both feature families.
    """

    def __init__(self, c_mid: int, d: int, seed: int):
        rng = rng_from(seed)
        self.proj = Tensor(rng.normal(0.0, 1.0 / np.sqrt(c_mid), size=(c_mid, d)))

    def __call__(self, mid: Tensor) -> Tensor:
        B, C, H, W = mid.shape
        pooled = ad.tmean(mid, axis=0)                       # [C,h,w]
        tok = ad.reshape(ad.transpose(pooled, (1, 2, 0)), (H * W, C))
        return ad.matmul(tok, self.proj)


class TransferState(Module):
    """Learnables owned by the distillation stage besides the student."""

    def __init__(self, seed: int = 0):
        super().__init__()
        self.kernel = self.add_child("kernel", KernelParams())
        self.log_temp = self.add_param("log_temp", np.array(0.0))

    @property
    def temperature(self) -> Tensor:
        return ad.exp(self.log_temp)


def state_hash(module: Module) -> str:
    h = hashlib.sha256()
    for name in sorted(module.params()):
        h.update(name.encode())
        h.update(module.params()[name].data.tobytes())
    return h.hexdigest()


def teacher_spatial_input(z_t: np.ndarray) -> np.ndarray:
    """Frame-pooled noisy latent [V,C,h,w] fed to the multi-view teacher."""
    n = z_t.shape[1]
    return np.sort(z_t, axis=1).sum(axis=1) / n


def teacher_temporal_input(z_t: np.ndarray) -> np.ndarray:
    """View-pooled noisy latent [T,C,h,w] fed to the sequence teacher."""
    n = z_t.shape[0]
    return np.sort(z_t, axis=0).sum(axis=0) / n


def run_distill_stage(student, teacher_3d, teacher_video, latents,
                      schedule: NoiseSchedule, steps: int, lambda_o: float,
                      lr: float, seed: int, tap_seed: int = 101,
                      record_path=None):
    """Stage-2 training loop: optimize the distillation loss over the dataset.

    `latents` is a list of clean [V,T,C,h,w] arrays. Teachers are never
    recorded on the tape, so their weights cannot move. Returns the loss
    records; the student is trained in place.
    """
    c_mid = teacher_3d.conv_mid.w.shape[1]
    proj_t_s = TapProjector(c_mid, 16, tap_seed)
    proj_t_t = TapProjector(c_mid, 16, tap_seed + 1)
    proj_s_s = TapProjector(student.spatial.conv_mid.w.shape[1], 16, tap_seed + 2)
    proj_s_t = TapProjector(student.temporal.conv_mid.w.shape[1], 16, tap_seed + 3)

    transfer = TransferState(seed)
    train_params = {}
    for prefix, module in (("disentangler.", student.disentangler),
                           ("spatial.", student.spatial),
                           ("temporal.", student.temporal),
                           ("transfer.", transfer)):
        for k, v in module.params().items():
            train_params[prefix + k] = v
    opt = Adam(train_params, lr=lr)
    rng = rng_from(seed)
    records = []
    pre_hash = (state_hash(teacher_3d), state_hash(teacher_video))

    for step in range(steps):
        z0 = latents[step % len(latents)]
        t, eps = sample_step_and_noise(z0.shape, schedule, int(rng.integers(2**62)))
        z_t = forward_diffuse(z0, t, eps, schedule)

        # frozen teachers run off-tape; their features are constants
        _, mid_s3d = teacher_3d(Tensor(teacher_spatial_input(z_t)), t, want_mid=True)
        _, mid_tv = teacher_video(Tensor(teacher_temporal_input(z_t)), t, want_mid=True)
        f_s = Tensor(proj_t_s(mid_s3d).data)
        f_t = Tensor(proj_t_t(mid_tv).data)

        with GradTape():
            zs, zt = student.disentangler(Tensor(z_t))
            _, ms = student.spatial(zs, t, want_mid=True)
            _, mt = student.temporal(zt, t, want_mid=True)
            stu_s = proj_s_s(ms)
            stu_t = proj_s_t(mt)

            means = feature_means(f_s, f_t)
            kap = kernel_batch(f_s, f_t, means, transfer.kernel)
            temp = transfer.temperature
            bar_s = kernel_attend(f_s, kap, temp)
            bar_t = kernel_attend(f_t, kap, temp)
            loss = distill_loss(stu_s, stu_t, bar_s, bar_t, lambda_o)

            term_s = float(ad.mean_sq(stu_s - bar_s).data)
            term_t = float(ad.mean_sq(stu_t - bar_t).data)

        if not np.isfinite(loss.data):
            raise FloatingPointError(f"distillation loss became non-finite at step {step}")
        opt.step(grad(loss, train_params.values()))
        transfer.kernel.clamp()
        records.append({
            "step": step, "loss_total": float(loss.data),
            "loss_s": term_s, "loss_t": term_t,
            "sigma_s": float(transfer.kernel.sigma_s.data),
            "sigma_t": float(transfer.kernel.sigma_t.data),
            "sigma_st": float(transfer.kernel.sigma_st.data),
            "alpha": float(transfer.kernel.alpha.data),
        })

    post_hash = (state_hash(teacher_3d), state_hash(teacher_video))
    if pre_hash != post_hash:
        raise RuntimeError("teacher weights changed during distillation")
    if record_path is not None:
        write_records(record_path, records)
    return records


RECORD_FIELDS = ("step", "loss_total", "loss_s", "loss_t",
                 "sigma_s", "sigma_t", "sigma_st", "alpha")


def write_records(path, records):
    lines = [",".join(RECORD_FIELDS)]
    for r in records:
        lines.append(",".join(repr(r[k]) if k != "step" else str(r[k])
                              for k in RECORD_FIELDS))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
