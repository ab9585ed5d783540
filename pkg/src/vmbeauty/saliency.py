"""Gradient x activation token attribution on the patch grid, plus an occlusion oracle."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import tensor as T
from .data import IMAGENET_MEAN, IMAGENET_STD
from .model import VMBeautyNet, fuse
from .tensor import Tensor

BRANCHES = ("vit", "mamba", "fused")


class SaliencyError(ValueError):
    pass


@dataclass
class SaliencyMap:
    grid: np.ndarray  # (side, side), values in [0, 1]
    branch: str
    raw: np.ndarray  # same grid before max-normalization
    score: float


def check_branch(branch: str) -> str:
    if branch not in BRANCHES:
        raise SaliencyError(f"unknown saliency branch {branch!r}; valid tags: {', '.join(BRANCHES)}")
    return branch


def max_normalize(values: np.ndarray) -> np.ndarray:
    """Scale so the maximum is 1; an all-zero map stays all-zero."""
    values = np.asarray(values, dtype=np.float64)
    top = values.max() if values.size else 0.0
    return values / top if top > 0 else np.zeros_like(values)


def token_importance(tokens: Tensor, patch_slice: slice) -> np.ndarray:
    """``sum_c ReLU(a * da)`` per patch token for the single image in the batch."""
    if tokens.grad is None:
        return np.zeros(len(range(*patch_slice.indices(tokens.shape[1]))))
    contrib = np.maximum(tokens.data[0] * tokens.grad[0], 0.0)
    return contrib[patch_slice].sum(axis=-1).astype(np.float64)


def _as_batch(image) -> np.ndarray:
    arr = np.asarray(getattr(image, "data", image))
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[0] != 1:
        raise T.ShapeError(f"saliency takes one image (C, H, W), got shape {arr.shape}")
    return arr


def _patch_slices(model: VMBeautyNet, mamba_capture: dict) -> tuple[slice, slice]:
    n = model.cfg.grid ** 2
    vit = slice(1, n + 1)
    mamba = slice(0, n) if mamba_capture["class_index"] == n else slice(1, n + 1)
    return vit, mamba


def saliency_maps(model: VMBeautyNet, image, branches=BRANCHES) -> dict[str, SaliencyMap]:
    """Maps for several branch tags from one shared forward pass.

    Each map is the gradient of its scalar (``p_vit``, ``p_mamba`` or the fused
    score) with respect to the final-block patch tokens.  The fused map adds the
    token attributions of both branches, each taken w.r.t. the fused score.
    """
    branches = [check_branch(b) for b in branches]
    side = model.cfg.grid
    batch = _as_batch(image)
    vit_cap, mamba_cap = {}, {}
    images = Tensor(batch.astype(T.get_dtype()))
    p_vit = model.vit_score(images, capture=vit_cap)
    p_mamba = model.mamba_score(images, capture=mamba_cap)
    y_hat = fuse(p_vit, p_mamba, model.fusion)
    vit_sl, mamba_sl = _patch_slices(model, mamba_cap)
    roots = {"vit": p_vit, "mamba": p_mamba, "fused": y_hat}
    out = {}
    try:
        for b in branches:
            root = T.sum(roots[b])
            root.backward()
            raw = np.zeros(side * side)
            if b in ("vit", "fused"):
                raw += token_importance(vit_cap["tokens"], vit_sl)
            if b in ("mamba", "fused"):
                raw += token_importance(mamba_cap["tokens"], mamba_sl)
            raw = raw.reshape(side, side)
            out[b] = SaliencyMap(max_normalize(raw), b, raw, float(root.data))
    finally:
        model.zero_grad()
    return out


def saliency(model: VMBeautyNet, image, branch: str) -> SaliencyMap:
    return saliency_maps(model, image, [check_branch(branch)])[branch]


def gray_value(dtype=np.float64) -> np.ndarray:
    """Per-channel normalized value of mid-gray, shaped ``(3, 1, 1)``."""
    return ((0.5 - IMAGENET_MEAN) / IMAGENET_STD).reshape(3, 1, 1).astype(dtype)


def occlusion_deltas(model: VMBeautyNet, image, branch: str) -> np.ndarray:
    """``|score(image) - score(image with patch k grayed)|`` on the patch grid."""
    check_branch(branch)
    batch = _as_batch(image)[0]
    p, side = model.cfg.patch_size, model.cfg.grid
    fill = gray_value(batch.dtype)
    variants = [batch]
    for r in range(side):
        for c in range(side):
            occ = batch.copy()
            occ[:, r * p:(r + 1) * p, c * p:(c + 1) * p] = fill
            variants.append(occ)
    stack = Tensor(np.stack(variants).astype(T.get_dtype()))
    variant = {"vit": "vit_only", "mamba": "mamba_only", "fused": "learned_fusion"}[branch]
    with T.no_grad():
        scores = np.asarray(model.predict(stack, variant).data, dtype=np.float64)
    return np.abs(scores[1:] - scores[0]).reshape(side, side)


def upsample(grid: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of a saliency grid to ``size x size`` pixels."""
    grid = np.asarray(grid, dtype=np.float64)
    zoom = size / grid.shape[0]
    out = ndimage.zoom(grid, zoom, order=1, mode="nearest", grid_mode=True)
    return np.clip(out, 0.0, max(grid.max(), 0.0))


def write_grid_csv(path, smap: SaliencyMap) -> None:
    np.savetxt(path, smap.grid, delimiter=",", fmt="%.8f")
