"""Desk-scale 4D generation: disentangled space-time latent diffusion with
teacher distillation, plus HexPlane-deformed Gaussian splatting."""

import ctypes as _ctypes


def _tune_allocator():
    # The renderer churns through 4MB transient arrays; with glibc defaults
    # each one is a fresh mmap (and a page-fault storm). Keep big blocks on
    # the heap instead. No-op off glibc.
    try:
        libc = _ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 256 * 1024 * 1024)   # M_MMAP_THRESHOLD
        libc.mallopt(-1, 256 * 1024 * 1024)   # M_TRIM_THRESHOLD
    except Exception:
        pass


_tune_allocator()

from .autodiff import (GradTape, GradientError, Tensor, attention,
                       finite_diff_check, grad)
from .diffusion import (FrameAutoencoder, NoiseSchedule, ddpm_reverse_step,
                        forward_diffuse, invert_forward_diffuse, loss_ldm,
                        reverse_chain)
from .model import ModelConfig, SpaceTimeDenoiser, merge_unified
from .distill import (KernelParams, distill_loss, feature_means, kernel_attend,
                      kernel_batch, kernel_eval, run_distill_stage)
from .consistency import (ConsistencyWeights, FeatureExtractor, loss_align,
                          loss_cond, loss_const, loss_perc, loss_rec, loss_temp)
from .conditions import Condition, ConditionEncoders, encode_condition
from .gaussians import Gaussian3D, GaussianSet
from .render import Camera, orbit_cameras, render
from .hexplane import (Deformer, HexPlaneField, PriorBank, deform, deform_set,
                       hexplane_query, st_hexplane_attend)
from .construct import (ConstructConfig, GsWeights, construct_4d,
                        depth_smoothness, loss_gs, loss_hex)
from .scenes import SceneSpec, gaussians_at, random_scene, synth_dataset
from .metrics import psnr, ssim, temporal_smoothness_score

__version__ = "0.1.0"
