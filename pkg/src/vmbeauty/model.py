"""The dual-branch regressor, its linear fusion head, and checkpoint I/O."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .embedding import PatchEmbedConfig, PatchEmbedding
from .mamba import MambaBackbone, MambaConfig
from .nn import Module, param
from .tensor import ShapeError, Tensor
from .vit import ViTBackbone, ViTConfig

VARIANTS = ("vit_only", "mamba_only", "averaging", "learned_fusion")

CHECKPOINT_MAGIC = b"VMBCKPT\n"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 224
    patch_size: int = 16
    channels: int = 3
    vit: ViTConfig = field(default_factory=ViTConfig)
    mamba: MambaConfig = field(default_factory=MambaConfig)
    fusion_weight_init: tuple[float, float] = (0.5, 0.5)
    fusion_bias_init: float = 0.0

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ValueError(f"image_size {self.image_size} is not divisible by patch_size {self.patch_size}")

    def embed_config(self, dim: int) -> PatchEmbedConfig:
        return PatchEmbedConfig(self.image_size, self.patch_size, self.channels, dim)

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size


def tiny_model_config(image_size: int = 8, patch_size: int = 4, **overrides) -> ModelConfig:
    """Smallest configuration used by the verification suites."""
    return ModelConfig(
        image_size=image_size,
        patch_size=patch_size,
        vit=ViTConfig(depth=1, embed_dim=8, num_heads=1, mlp_ratio=4.0),
        mamba=MambaConfig(depth=1, embed_dim=8, d_state=4, conv_kernel=4, expand=2),
        **overrides,
    )


class Fusion(Module):
    def __init__(self, weight=(0.5, 0.5), bias: float = 0.0):
        self.weight = param(np.asarray(weight, dtype=np.float64).reshape(1, 2))
        self.bias = param(np.asarray(bias, dtype=np.float64))


def fuse(p_vit, p_mamba, params: Fusion) -> Tensor:
    """``W . [p_vit, p_mamba]^T + b`` for scalar or ``(B,)`` branch scores."""
    p_vit, p_mamba = T._as_tensor(p_vit), T._as_tensor(p_mamba)
    pair = T.stack([p_vit, p_mamba], axis=-1)
    single = pair.ndim == 1
    if single:
        pair = T.reshape(pair, (1, 2))
    out = pair @ T.transpose(params.weight, (1, 0))
    out = T.reshape(out, out.shape[:-1]) + params.bias
    return T.reshape(out, ()) if single else out


class VMBeautyNet(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.vit_embed = PatchEmbedding(cfg.embed_config(cfg.vit.embed_dim), rng)
        self.vit = ViTBackbone(cfg.vit, rng)
        self.mamba_embed = PatchEmbedding(cfg.embed_config(cfg.mamba.embed_dim), rng)
        self.mamba = MambaBackbone(cfg.mamba, rng)
        self.fusion = Fusion(cfg.fusion_weight_init, cfg.fusion_bias_init)

    def branch_parameters(self, variant: str) -> "dict[str, Tensor]":
        """Parameters that receive updates when training ``variant``."""
        named = self.named_parameters()
        prefixes = {
            "vit_only": ("vit_embed.", "vit."),
            "mamba_only": ("mamba_embed.", "mamba."),
            "averaging": ("vit_embed.", "vit.", "mamba_embed.", "mamba."),
            "learned_fusion": ("vit_embed.", "vit.", "mamba_embed.", "mamba.", "fusion."),
        }[_check_variant(variant)]
        return {k: v for k, v in named.items() if k.startswith(prefixes)}

    def _check_image(self, images) -> Tensor:
        images = images if isinstance(images, Tensor) else Tensor(images)
        c, s = self.cfg.channels, self.cfg.image_size
        if images.shape[-3:] != (c, s, s) or images.ndim not in (3, 4):
            raise ShapeError(f"model expects images shaped (B, {c}, {s}, {s}), got {images.shape}")
        return images

    def vit_score(self, images, rng=None, capture=None) -> Tensor:
        return self.vit(self.vit_embed(self._check_image(images)), rng=rng, capture=capture)

    def mamba_score(self, images, capture=None) -> Tensor:
        return self.mamba(self.mamba_embed(self._check_image(images)), capture=capture)

    def __call__(self, images, rng=None):
        return forward(images, self, rng=rng)

    def predict(self, images, variant: str = "learned_fusion", rng=None) -> Tensor:
        """Score under one of the four ablation read-outs."""
        variant = _check_variant(variant)
        if variant == "vit_only":
            return self.vit_score(images, rng=rng)
        if variant == "mamba_only":
            return self.mamba_score(images)
        y_hat, p_vit, p_mamba = forward(images, self, rng=rng)
        if variant == "averaging":
            return (p_vit + p_mamba) * 0.5
        return y_hat


def forward(images, model: VMBeautyNet, rng=None) -> tuple[Tensor, Tensor, Tensor]:
    """``(y_hat, p_vit, p_mamba)`` for one image or a batch."""
    p_vit = model.vit_score(images, rng=rng)
    p_mamba = model.mamba_score(images)
    return fuse(p_vit, p_mamba, model.fusion), p_vit, p_mamba


def _check_variant(variant: str) -> str:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {', '.join(VARIANTS)}")
    return variant


# -- checkpoints ------------------------------------------------------------
#
# Layout: magic line, 8-byte little-endian header length, UTF-8 JSON header,
# then the little-endian float32 payload.  The header carries the full run
# configuration, format version, seeds and an entry list (name, shape,
# offset in elements).

def save_checkpoint(path, model: VMBeautyNet, config: dict, extra_arrays: dict | None = None,
                    meta: dict | None = None) -> Path:
    path = Path(path)
    arrays = {name: p.data for name, p in model.named_parameters().items()}
    if extra_arrays:
        arrays.update(extra_arrays)
    entries, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        flat = np.ascontiguousarray(arr, dtype="<f4").reshape(-1)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(flat.tobytes())
        offset += flat.size
    header = {
        "format": "vmbeauty-checkpoint",
        "version": CHECKPOINT_VERSION,
        "config": config,
        "meta": meta or {},
        "entries": entries,
    }
    blob = json.dumps(header, sort_keys=True, indent=1).encode("utf-8")
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for chunk in chunks:
            fh.write(chunk)
    tmp.replace(path)
    return path


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Header dict and float32 arrays by name."""
    path = Path(path)
    raw = path.read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a vmbeauty checkpoint")
    start = len(CHECKPOINT_MAGIC)
    try:
        (hlen,) = struct.unpack("<Q", raw[start:start + 8])
        header = json.loads(raw[start + 8:start + 8 + hlen].decode("utf-8"))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint header ({exc})") from None
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {header.get('version')} != supported {CHECKPOINT_VERSION}")
    body = raw[start + 8 + hlen:]
    if len(body) % 4:
        raise CheckpointError(f"{path}: payload is not a whole number of float32 values")
    payload = np.frombuffer(body, dtype="<f4")
    arrays = {}
    for e in header["entries"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        if e["offset"] + n > payload.size:
            raise CheckpointError(f"{path}: payload truncated inside entry {e['name']!r}")
        arrays[e["name"]] = payload[e["offset"]:e["offset"] + n].reshape(e["shape"])
    return header, arrays


def load_parameters(model: VMBeautyNet, arrays: dict[str, np.ndarray]) -> None:
    for name, p in model.named_parameters().items():
        if name not in arrays:
            raise CheckpointError(f"checkpoint is missing parameter {name!r}")
        arr = arrays[name]
        if tuple(arr.shape) != p.shape:
            raise CheckpointError(f"shape mismatch for {name!r}: checkpoint {tuple(arr.shape)} vs model {p.shape}")
        p.data = arr.astype(T.get_dtype())


def model_config_dict(cfg: ModelConfig) -> dict:
    return asdict(cfg)


def model_config_from_dict(d: dict) -> ModelConfig:
    d = dict(d)
    vit = ViTConfig(**d.pop("vit"))
    mamba = MambaConfig(**d.pop("mamba"))
    d["fusion_weight_init"] = tuple(d["fusion_weight_init"])
    return ModelConfig(vit=vit, mamba=mamba, **d)
