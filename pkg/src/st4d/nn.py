"""Minimal layer kit on top of the autodiff tensors: parameter registry,
linear/conv layers, sinusoidal step embeddings, and Adam."""

from __future__ import annotations

import math
import numpy as np

from .autodiff import Tensor, conv2d, matmul, add

def rng_from(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


class Module:
    """Base with an ordered name->Tensor parameter registry."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, Module] = {}

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(np.asarray(value, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def add_child(self, name: str, child: "Module") -> "Module":
        self._children[name] = child
        return child

    def params(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for name, t in self._params.items():
            out[prefix + name] = t
        for cname, child in self._children.items():
            out.update(child.params(prefix + cname + "."))
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        mine = self.params()
        missing = sorted(set(mine) - set(state))
        extra = sorted(set(state) - set(mine))
        if missing or extra:
            raise ValueError(f"state mismatch: missing={missing} extra={extra}")
        for k, t in mine.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {t.data.shape}")
            t.data = arr.copy()

    def n_params(self) -> int:
        return sum(t.size for t in self.params().values())


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng, zero_init: bool = False):
        super().__init__()
        if zero_init:
            w = np.zeros((d_in, d_out))
        else:
            w = rng_from(rng).normal(0.0, 1.0 / math.sqrt(d_in), size=(d_in, d_out))
        self.w = self.add_param("w", w)
        self.b = self.add_param("b", np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.w), self.b)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng, stride: int = 1,
                 pad: int | None = None, zero_init: bool = False):
        super().__init__()
        self.stride = stride
        self.pad = k // 2 if pad is None else pad
        fan_in = c_in * k * k
        if zero_init:
            w = np.zeros((c_out, c_in, k, k))
        else:
            w = rng_from(rng).normal(0.0, 1.0 / math.sqrt(fan_in), size=(c_out, c_in, k, k))
        self.w = self.add_param("w", w)
        self.b = self.add_param("b", np.zeros(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w, self.b, stride=self.stride, pad=self.pad)


def timestep_embedding(t: int, dim: int, max_steps: int = 10_000) -> Tensor:
    """Sinusoidal embedding of an integer step index; constant w.r.t. the tape."""
    half = dim // 2
    freqs = np.exp(-math.log(max_steps) * np.arange(half) / max(half - 1, 1))
    ang = t * freqs
    emb = np.concatenate([np.sin(ang), np.cos(ang)])
    if dim % 2:
        emb = np.concatenate([emb, np.zeros(1)])
    return Tensor(emb)


class Adam:
    """Deterministic Adam on raw parameter arrays.

    `lr_overrides` maps parameter-name substrings to learning rates; the
    first matching override wins (used by the 4D construction, where
    positions and opacities want different step sizes).
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 betas=(0.9, 0.999), eps: float = 1e-8, lr_overrides=None):
        self.params = dict(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.lr_overrides = list((lr_overrides or {}).items())
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def _lr_for(self, name: str) -> float:
        for key, lr in self.lr_overrides:
            if key in name:
                return lr
        return self.lr

    def step(self, grads: dict):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, p in self.params.items():
            g = grads.get(p)
            if g is None:
                continue
            gd = g.data if isinstance(g, Tensor) else g
            m = self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * gd
            v = self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * gd * gd
            p.data = p.data - self._lr_for(name) * (m / c1) / (np.sqrt(v / c2) + self.eps)
