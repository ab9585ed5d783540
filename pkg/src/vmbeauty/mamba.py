"""State-space branch: Mamba blocks built on the input-conditioned selective scan."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import scan as _scan
from . import tensor as T
from .nn import LayerNorm, Linear, Module, fan_in_uniform, param
from .tensor import Tensor, _as_tensor, _record


@dataclass(frozen=True)
class MambaConfig:
    depth: int = 4
    embed_dim: int = 192
    d_state: int = 16
    conv_kernel: int = 4
    expand: int = 2
    bidirectional: bool = True
    class_position: str = "first"
    scan_strategy: str = "chunked"
    dt_min: float = 1e-3
    dt_max: float = 1e-1

    def __post_init__(self):
        if self.depth < 0 or self.d_state < 1 or self.conv_kernel < 1 or self.expand < 1:
            raise ValueError("mamba depth must be >= 0 and d_state, conv_kernel, expand >= 1")
        if self.class_position not in ("first", "last"):
            raise ValueError(f"class_position must be 'first' or 'last', got {self.class_position!r}")
        if self.scan_strategy not in _scan.STRATEGIES:
            raise ValueError(f"unknown scan_strategy {self.scan_strategy!r}")
        if not 0 < self.dt_min <= self.dt_max:
            raise ValueError("need 0 < dt_min <= dt_max")

    @property
    def inner_dim(self) -> int:
        return self.expand * self.embed_dim


def discretize(A, B, delta):
    """Map continuous operands to per-step ones: exact exponential for the
    diagonal ``A``, Euler for ``B``.

    Broadcasting follows numpy; ``delta`` must be strictly positive.
    """
    A, B, delta = np.asarray(A), np.asarray(B), np.asarray(delta)
    if np.any(delta <= 0):
        raise ValueError("discretize needs a strictly positive step delta")
    return np.exp(delta * A), delta * B


def selective_scan(x, delta, A, B, C, strategy: str = "chunked") -> Tensor:
    """``y_t = <C_t, h_t>`` with ``h_t = exp(delta_t A) h_{t-1} + delta_t B_t x_t``.

    ``x, delta: (batch, S, inner)``; ``A: (inner, n)``; ``B, C: (batch, S, n)``.
    Differentiable in every operand.
    """
    x, delta, A, B, C = (_as_tensor(t) for t in (x, delta, A, B, C))
    if x.ndim != 3 or delta.shape != x.shape:
        raise T.ShapeError(f"selective_scan: x {x.shape} and delta {delta.shape} must both be (batch, S, inner)")
    if A.shape[0] != x.shape[2] or B.shape != x.shape[:2] + (A.shape[1],) or C.shape != B.shape:
        raise T.ShapeError(f"selective_scan: inconsistent A {A.shape}, B {B.shape}, C {C.shape} for x {x.shape}")
    y, h, a_bar = _scan.selective_scan_forward(x.data, delta.data, A.data, B.data, C.data, strategy)

    def backward(g):
        return _scan.selective_scan_backward(g, x.data, delta.data, A.data, B.data, C.data,
                                             h, a_bar, strategy)

    return _record(y, (x, delta, A, B, C), backward, "selective_scan")


def causal_conv1d(x, weight, bias) -> Tensor:
    """Depthwise convolution over the time axis of ``(batch, S, channels)``.

    ``weight: (channels, K)``; output at ``t`` sees inputs ``t-K+1 .. t`` only.
    """
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    b, s, c = x.shape
    k = weight.shape[1]
    xp = np.concatenate([np.zeros((b, k - 1, c), dtype=x.dtype), x.data], axis=1)
    out = np.zeros(x.shape, dtype=x.dtype)
    for j in range(k):
        out += xp[:, j:j + s] * weight.data[:, j]
    out += bias.data

    def backward(g):
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        gw = np.empty(weight.shape, dtype=g.dtype)
        for j in range(k):
            gxp[:, j:j + s] += g * weight.data[:, j]
            gw[:, j] = (g * xp[:, j:j + s]).sum(axis=(0, 1))
        return gxp[:, k - 1:], gw, g.sum(axis=(0, 1))

    return _record(out, (x, weight, bias), backward, "causal_conv1d")


def _inverse_softplus(y: np.ndarray) -> np.ndarray:
    return y + np.log(-np.expm1(-y))


class MambaBlock(Module):
    def __init__(self, cfg: MambaConfig, rng: np.random.Generator):
        d, di, n = cfg.embed_dim, cfg.inner_dim, cfg.d_state
        self.bidirectional = cfg.bidirectional
        self.strategy = cfg.scan_strategy
        k = cfg.conv_kernel
        # fan-in uniform init: under the attention branch's N(0, 0.02^2) the scan
        # path's share of the class token starts below float32 resolution
        self.norm = LayerNorm(d)
        self.in_proj = Linear(d, di, rng, init="fan_in")
        self.gate_proj = Linear(d, di, rng, init="fan_in")
        self.conv_weight = fan_in_uniform(rng, (di, k), k)
        self.conv_bias = fan_in_uniform(rng, (di,), k)
        self.dt_proj = Linear(di, di, rng, init="fan_in")
        dt = np.exp(rng.uniform(np.log(cfg.dt_min), np.log(cfg.dt_max), size=di))
        self.dt_proj.bias = param(_inverse_softplus(dt))
        self.b_proj = Linear(di, n, rng, bias=False, init="fan_in")
        self.c_proj = Linear(di, n, rng, bias=False, init="fan_in")
        # A = -exp(a_log) keeps every entry strictly negative
        self.a_log = param(np.log(np.tile(np.arange(1, n + 1, dtype=np.float64), (di, 1))))
        self.out_proj = Linear(di, d, rng, init="fan_in")

    @property
    def A(self) -> Tensor:
        return T.neg(T.exp(self.a_log))

    def ssm_operands(self, u: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        """Per-token ``(x, delta, B, C)`` for the scan, from normalized tokens ``u``."""
        xc = T.silu(causal_conv1d(self.in_proj(u), self.conv_weight, self.conv_bias))
        delta = T.softplus(self.dt_proj(xc))
        return xc, delta, self.b_proj(xc), self.c_proj(xc)

    def __call__(self, z: Tensor) -> Tensor:
        return mamba_block(z, self)


def mamba_block(z: Tensor, blk: MambaBlock) -> Tensor:
    u = blk.norm(z)
    xc, delta, B, C = blk.ssm_operands(u)
    A = blk.A
    y = selective_scan(xc, delta, A, B, C, blk.strategy)
    if blk.bidirectional:
        rev = [T.flip(t, 1) for t in (xc, delta, B, C)]
        y_rev = T.flip(selective_scan(*rev[:2], A, *rev[2:], strategy=blk.strategy), 1)
        y = (y + y_rev) * 0.5
    gate = T.silu(blk.gate_proj(u))
    return z + blk.out_proj(y * gate)


class MambaBackbone(Module):
    def __init__(self, cfg: MambaConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.blocks = [MambaBlock(cfg, rng) for _ in range(cfg.depth)]
        self.norm = LayerNorm(cfg.embed_dim)
        self.head_weight = param(np.zeros((cfg.embed_dim, 1)))
        self.head_bias = param(np.zeros(1))

    def __call__(self, z0: Tensor, capture: dict | None = None) -> Tensor:
        return mamba_forward(z0, self, capture=capture)


def mamba_forward(z0: Tensor, params: MambaBackbone, capture: dict | None = None) -> Tensor:
    """Score ``(B,)`` (or 0-d for unbatched input) from tokens laid out class-first."""
    single = z0.ndim == 2
    z = T.reshape(z0, (1,) + z0.shape) if single else z0
    last = params.cfg.class_position == "last"
    if last:
        z = T.concat([z[:, 1:], z[:, :1]], axis=1)
    if capture is not None:
        capture["class_index"] = z.shape[1] - 1 if last else 0
    for i, block in enumerate(params.blocks):
        if capture is not None and i == len(params.blocks) - 1:
            capture["tokens"] = z.retain_grad()  # input of the last block
        z = block(z)
    if capture is not None and not params.blocks:
        capture["tokens"] = z.retain_grad()
    cls = z[:, -1] if last else z[:, 0]
    out = params.norm(cls) @ params.head_weight + params.head_bias
    out = T.reshape(out, out.shape[:-1])
    return T.reshape(out, ()) if single else out
