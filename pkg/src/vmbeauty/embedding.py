"""Image to token sequence: patchify, project, prepend class token, add positions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Module, normal, param
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class PatchEmbedConfig:
    image_size: int = 224
    patch_size: int = 16
    channels: int = 3
    embed_dim: int = 192

    def __post_init__(self):
        if self.patch_size <= 0 or self.image_size % self.patch_size:
            raise ValueError(f"image_size {self.image_size} is not divisible by patch_size {self.patch_size}")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid * self.grid

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels


def patchify(image, patch_size: int) -> Tensor:
    """Split ``(C, H, W)`` or ``(B, C, H, W)`` into ``(..., N, C*P*P)`` rows.

    Patches are ordered row-major over the grid; each row is the row-major
    flattening of the ``(C, P, P)`` block.
    """
    image = image if isinstance(image, Tensor) else Tensor(image)
    single = image.ndim == 3
    if single:
        image = T.reshape(image, (1,) + image.shape)
    if image.ndim != 4:
        raise ShapeError(f"patchify expects (C, H, W) or (B, C, H, W), got {image.shape}")
    b, c, h, w = image.shape
    p = patch_size
    if h % p or w % p:
        raise ShapeError(f"image {h}x{w} is not divisible into {p}x{p} patches")
    gh, gw = h // p, w // p
    x = T.reshape(image, (b, c, gh, p, gw, p))
    x = T.transpose(x, (0, 2, 4, 1, 3, 5))
    x = T.reshape(x, (b, gh * gw, c * p * p))
    return T.reshape(x, x.shape[1:]) if single else x


def unpatchify(patches: np.ndarray, patch_size: int, channels: int) -> np.ndarray:
    """Inverse of :func:`patchify` on plain arrays (``(N, C*P*P) -> (C, H, W)``)."""
    n = patches.shape[-2]
    g = int(round(np.sqrt(n)))
    p = patch_size
    x = patches.reshape(patches.shape[:-2] + (g, g, channels, p, p))
    lead = x.ndim - 5
    axes = tuple(range(lead)) + tuple(lead + i for i in (2, 0, 3, 1, 4))
    x = np.transpose(x, axes)
    return x.reshape(patches.shape[:-2] + (channels, g * p, g * p))


class PatchEmbedding(Module):
    """Learned projection ``E``, class token and positional table for one branch."""

    def __init__(self, cfg: PatchEmbedConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.projection = normal(rng, (cfg.patch_dim, cfg.embed_dim))
        self.class_token = param(np.zeros((1, cfg.embed_dim)))
        self.pos_embed = normal(rng, (cfg.num_patches + 1, cfg.embed_dim))

    def __call__(self, images) -> Tensor:
        return embed(images, self)


def embed(images, params: PatchEmbedding) -> Tensor:
    images = images if isinstance(images, Tensor) else Tensor(images)
    cfg = params.cfg
    single = images.ndim == 3
    if single:
        images = T.reshape(images, (1,) + images.shape)
    expected = (cfg.channels, cfg.image_size, cfg.image_size)
    if images.shape[1:] != expected:
        raise ShapeError(f"embed expects images shaped (B, {', '.join(map(str, expected))}), got {images.shape}")
    b = images.shape[0]
    tokens = patchify(images, cfg.patch_size) @ params.projection
    cls = T.broadcast_to(params.class_token, (b, 1, cfg.embed_dim))
    z = T.concat([cls, tokens], axis=1) + params.pos_embed
    return T.reshape(z, z.shape[1:]) if single else z
