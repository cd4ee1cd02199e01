"""Condition encoders: text over a fixed 64-word vocabulary, a reference
image, or an orbital video of the static object. Each produces an embedding
sequence consumed by the fusion cross-attention."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from . import autodiff as ad
from .autodiff import Tensor
from .nn import Conv2d, Module, rng_from

VOCAB_PATH = Path(__file__).with_name("vocab.txt")


def load_vocab() -> list[str]:
    return VOCAB_PATH.read_text().split()


@dataclass
class Condition:
    kind: str                 # "text" | "image" | "video"
    embedding: Tensor         # [n_tokens, d]

    def __post_init__(self):
        if self.embedding.ndim != 2 or self.embedding.shape[0] < 1:
            raise ValueError(f"condition embedding must be [n>=1, d], got "
                             f"{self.embedding.shape}")


class ConditionEncoders(Module):
    """Learned token table plus small conv encoders for image/video prompts."""

    def __init__(self, d: int = 16, seed: int = 0):
        super().__init__()
        self.d = d
        self.vocab = load_vocab()
        self.index = {w: i for i, w in enumerate(self.vocab)}
        rng = rng_from(seed + 5)
        self.table = self.add_param(
            "table", rng.normal(0.0, 0.5, size=(len(self.vocab), d)))
        self.img1 = self.add_child("img1", Conv2d(3, 16, 3, rng, stride=2))
        self.img2 = self.add_child("img2", Conv2d(16, 16, 3, rng, stride=2))
        self.img3 = self.add_child("img3", Conv2d(16, d, 3, rng, stride=2))

    def encode_text(self, text: str) -> Condition:
        words = text.lower().split()
        if not words:
            ids = [0]   # the learned null token
        else:
            unknown = [w for w in words if w not in self.index]
            if unknown:
                raise ValueError(f"unknown tokens: {unknown}")
            ids = [self.index[w] for w in words]
        emb = ad.take_rows(self.table, list(ids))
        return Condition("text", emb)

    def _image_tokens(self, image: Tensor) -> Tensor:
        if image.ndim != 3 or image.shape[0] != 3:
            raise ValueError(f"expected a [3,H,W] image, got {image.shape}")
        x = ad.reshape(image, (1,) + image.shape)
        h = ad.tanh(self.img1(x))
        h = ad.tanh(self.img2(h))
        h = self.img3(h)                                   # [1,d,H/8,W/8]
        n = h.shape[2] * h.shape[3]
        return ad.reshape(ad.transpose(h, (0, 2, 3, 1)), (n, self.d))

    def encode_image(self, image) -> Condition:
        image = image if isinstance(image, Tensor) else Tensor(image)
        return Condition("image", self._image_tokens(image))

    def encode_video(self, static_frames) -> Condition:
        """One token per view of the static orbital video (frame tau=0)."""
        frames = static_frames if isinstance(static_frames, Tensor) else Tensor(static_frames)
        if frames.ndim != 4 or frames.shape[1] != 3:
            raise ValueError(f"expected [V,3,H,W] static views, got {frames.shape}")
        tokens = [ad.tmean(self._image_tokens(frames[v]), axis=0, keepdims=True)
                  for v in range(frames.shape[0])]
        return Condition("video", ad.concatenate(tokens, axis=0))


def encode_condition(encoders: ConditionEncoders, kind: str, payload) -> Condition:
    if kind == "text":
        return encoders.encode_text(payload)
    if kind == "image":
        return encoders.encode_image(payload)
    if kind == "video":
        return encoders.encode_video(payload)
    raise ValueError(f"unknown condition kind {kind!r}")
