"""Transformer branch: pre-norm encoder blocks and a class-token regression head."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import LayerNorm, Linear, Module, param
from .tensor import Tensor


@dataclass(frozen=True)
class ViTConfig:
    depth: int = 4
    embed_dim: int = 128
    num_heads: int = 4
    mlp_ratio: float = 4.0
    dropout: float = 0.0

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError("vit depth must be non-negative")
        if self.embed_dim % self.num_heads:
            raise ValueError(f"embed_dim {self.embed_dim} is not divisible by num_heads {self.num_heads}")

    @property
    def hidden_dim(self) -> int:
        return int(round(self.mlp_ratio * self.embed_dim))


class EncoderBlock(Module):
    def __init__(self, cfg: ViTConfig, rng: np.random.Generator):
        d = cfg.embed_dim
        self.num_heads = cfg.num_heads
        self.dropout = cfg.dropout
        self.norm1 = LayerNorm(d)
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.o = Linear(d, d, rng)
        self.norm2 = LayerNorm(d)
        self.fc1 = Linear(d, cfg.hidden_dim, rng)
        self.fc2 = Linear(cfg.hidden_dim, d, rng)

    def __call__(self, z: Tensor, rng=None, attn_out: list | None = None) -> Tensor:
        z = z + T.dropout(mhsa(self.norm1(z), self, attn_out), self.dropout, rng)
        h = T.gelu(self.fc1(self.norm2(z)))
        return z + T.dropout(self.fc2(h), self.dropout, rng)


def mhsa(z: Tensor, block: EncoderBlock, attn_out: list | None = None) -> Tensor:
    """Multi-head scaled dot-product self-attention over ``(..., S, D)``.

    If ``attn_out`` is a list, the attention weights ``(..., heads, S, S)`` are
    appended to it.
    """
    *lead, s, d = z.shape
    h = block.num_heads
    dh = d // h

    def heads(x):
        x = T.reshape(x, tuple(lead) + (s, h, dh))
        n = len(lead)
        return T.transpose(x, tuple(range(n)) + (n + 1, n, n + 2))

    q, k, v = heads(block.q(z)), heads(block.k(z)), heads(block.v(z))
    n = len(lead)
    kt = T.transpose(k, tuple(range(n + 1)) + (n + 2, n + 1))
    weights = T.softmax((q @ kt) * (1.0 / math.sqrt(dh)), axis=-1)
    if attn_out is not None:
        attn_out.append(weights.data)
    ctx = weights @ v
    ctx = T.transpose(ctx, tuple(range(n)) + (n + 1, n, n + 2))
    return block.o(T.reshape(ctx, tuple(lead) + (s, d)))


class ViTBackbone(Module):
    def __init__(self, cfg: ViTConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.blocks = [EncoderBlock(cfg, rng) for _ in range(cfg.depth)]
        self.norm = LayerNorm(cfg.embed_dim)
        self.head_weight = param(np.zeros((cfg.embed_dim, 1)))
        self.head_bias = param(np.zeros(1))

    def __call__(self, z0: Tensor, rng=None, capture: dict | None = None) -> Tensor:
        return vit_forward(z0, self, rng=rng, capture=capture)


def vit_forward(z0: Tensor, params: ViTBackbone, rng=None, capture: dict | None = None) -> Tensor:
    """Score ``(B,)`` (or a 0-d tensor for unbatched input) from embedded tokens."""
    single = z0.ndim == 2
    z = T.reshape(z0, (1,) + z0.shape) if single else z0
    attn = [] if capture is not None else None
    if capture is not None:
        capture["attention"] = attn
    for i, block in enumerate(params.blocks):
        if capture is not None and i == len(params.blocks) - 1:
            # tokens entering the last block: the class read-out depends on the
            # patch rows only through this block's mixing
            capture["tokens"] = z.retain_grad()
        z = block(z, rng=rng, attn_out=attn)
    if capture is not None and not params.blocks:
        capture["tokens"] = z.retain_grad()
    cls = z[:, 0]
    out = params.norm(cls) @ params.head_weight + params.head_bias
    out = T.reshape(out, out.shape[:-1])
    return T.reshape(out, ()) if single else out
