"""Central finite-difference oracle for checking analytic gradients.

Independent of the tape: it only ever evaluates the forward function.  Run it
under ``precision("f64")``; at 32 bits the differences drown in rounding.
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """``||a - n|| / max(||a||, ||n||, floor)``.

    The floor matters for gradients that vanish identically (a key bias under
    softmax, for one): there both sides are rounding noise near 1e-13 and the
    comparison becomes absolute.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / scale)


def numerical_grad(f: Callable[[], float], arr: np.ndarray, h: float = 1e-3,
                   coords: np.ndarray | None = None) -> np.ndarray:
    """Central differences of ``f`` w.r.t. ``arr`` (perturbed in place and restored)."""
    flat = arr.reshape(-1)
    idx = np.arange(flat.size) if coords is None else np.asarray(coords)
    out = np.empty(idx.size)
    for j, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        out[j] = (fp - fm) / (2 * h)
    return out


def check_gradients(loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor], h: float = 1e-3,
                    max_coords: int | None = None, rng: np.random.Generator | None = None) -> dict[str, float]:
    """Relative error per parameter between the tape gradient and finite differences.

    With ``max_coords`` set, each parameter is checked on that many randomly
    chosen entries instead of all of them.
    """
    for p in params.values():
        p.grad = None
    loss_fn().backward()
    analytic = {k: (np.zeros(p.shape) if p.grad is None else p.grad.copy()) for k, p in params.items()}

    def value() -> float:
        return float(loss_fn().data)

    errors = {}
    for name, p in params.items():
        n = p.size
        coords = None
        if max_coords is not None and n > max_coords:
            coords = (rng or np.random.default_rng(0)).choice(n, size=max_coords, replace=False)
        numeric = numerical_grad(value, p.data, h, coords)
        a = analytic[name].reshape(-1)
        errors[name] = relative_error(a if coords is None else a[coords], numeric)
    return errors


def directional_check(loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor], h: float = 1e-3,
                      rng: np.random.Generator | None = None) -> float:
    """Relative error of the directional derivative along one random unit direction
    spanning every parameter at once."""
    rng = rng or np.random.default_rng(0)
    for p in params.values():
        p.grad = None
    loss_fn().backward()
    dirs = {k: rng.normal(size=p.shape) for k, p in params.items()}
    norm = np.sqrt(sum(float((d * d).sum()) for d in dirs.values()))
    analytic = sum(float(((0 if p.grad is None else p.grad) * dirs[k]).sum()) for k, p in params.items()) / norm
    saved = {k: p.data.copy() for k, p in params.items()}

    def shifted(sign: float) -> float:
        for k, p in params.items():
            p.data = np.asarray(saved[k] + sign * h * dirs[k] / norm, dtype=saved[k].dtype)
        return float(loss_fn().data)

    try:
        numeric = (shifted(1.0) - shifted(-1.0)) / (2 * h)
    finally:
        for k, p in params.items():
            p.data = saved[k]
    return relative_error(np.array([analytic]), np.array([numeric]))


def randomize(params: Mapping[str, Tensor], rng: np.random.Generator, std: float = 0.5) -> None:
    """Perturb every parameter so no gradient path is trivially zero (zero heads etc.)."""
    for p in params.values():
        p.data = np.asarray(p.data + rng.normal(0.0, std, size=p.shape), dtype=p.dtype)
