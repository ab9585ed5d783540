"""Parameter containers shared by the backbones."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Anything holding :class:`Tensor` parameters, possibly nested.

    Parameters are discovered by walking instance attributes in definition
    order; lists of modules are indexed (``blocks.0.attn_q.weight``).
    """

    def named_parameters(self, prefix: str = "") -> "OrderedDict[str, Tensor]":
        out: OrderedDict[str, Tensor] = OrderedDict()
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    out[name] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(name + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{name}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))


def param(data) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True)


def normal(rng: np.random.Generator, shape, std: float = 0.02) -> Tensor:
    return param(rng.normal(0.0, std, size=shape))


def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    """``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``, the usual default for state-space blocks."""
    bound = 1.0 / np.sqrt(fan_in)
    return param(rng.uniform(-bound, bound, size=shape))


class Linear(Module):
    """``x @ W + b`` with ``W: (d_in, d_out)``.

    ``init="normal"`` draws ``N(0, std^2)``; ``init="fan_in"`` draws
    ``U(+-1/sqrt(d_in))``.  Biases start at zero either way.
    """

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, std: float = 0.02,
                 bias: bool = True, init: str = "normal"):
        if init == "normal":
            self.weight = normal(rng, (d_in, d_out), std)
        elif init == "fan_in":
            self.weight = fan_in_uniform(rng, (d_in, d_out), d_in)
        else:
            raise ValueError(f"unknown init {init!r}")
        self.bias = param(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-6):
        self.gain = param(np.ones(d))
        self.bias = param(np.zeros(d))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layernorm(x, self.gain, self.bias, self.eps)
