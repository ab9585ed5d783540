"""Manifest ingestion, augmentation, fold splits and the synthetic face-like dataset."""

from __future__ import annotations

import csv
import hashlib
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

IMAGENET_MEAN = np.array([0.485, 0.456, 0.406])
IMAGENET_STD = np.array([0.229, 0.224, 0.225])

MANIFEST_HEADER = ("image_path", "score", "fold")
SCORE_RANGE = (1.0, 5.0)


class DataError(ValueError):
    pass


class ManifestError(DataError):
    pass


@dataclass(frozen=True)
class Record:
    image_path: str
    score: float
    fold: int


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[Record, ...]
    k: int = 5
    root: str = "."

    def __len__(self) -> int:
        return len(self.records)

    def resolve(self, record: Record) -> Path:
        p = Path(record.image_path)
        return p if p.is_absolute() else Path(self.root) / p


@dataclass(frozen=True)
class AugmentConfig:
    enabled: bool = True
    flip_prob: float = 0.5
    rotation_degrees: float = 10.0
    brightness: float = 0.1
    contrast: float = 0.1
    saturation: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError(f"flip_prob must lie in [0, 1], got {self.flip_prob}")
        if self.rotation_degrees < 0:
            raise ValueError("rotation_degrees must be non-negative")
        if min(self.brightness, self.contrast, self.saturation) < 0:
            raise ValueError("jitter strengths must be non-negative")


@dataclass
class Sample:
    pixels: np.ndarray  # (3, H, W), normalized
    score: float


# -- manifest ---------------------------------------------------------------

def load_manifest(path, k: int | None = None) -> DatasetManifest:
    """Read ``image_path,score,fold`` CSV; relative paths resolve against its folder.

    ``k`` defaults to the largest fold id present.  Every fold ``1..k`` must be
    populated.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    text = path.read_text(encoding="utf-8")
    reader = csv.reader(io.StringIO(text))
    rows = list(reader)
    if not rows or tuple(c.strip() for c in rows[0]) != MANIFEST_HEADER:
        raise ManifestError(f"{path}:1: expected header {','.join(MANIFEST_HEADER)}")
    records = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise ManifestError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
        try:
            score = float(row[1])
            fold = int(row[2])
        except ValueError:
            raise ManifestError(f"{path}:{lineno}: cannot parse score/fold from {row!r}") from None
        if not SCORE_RANGE[0] <= score <= SCORE_RANGE[1]:
            raise ManifestError(f"{path}:{lineno}: score {score} outside [1, 5]")
        if fold < 1:
            raise ManifestError(f"{path}:{lineno}: fold id {fold} must be >= 1")
        records.append(Record(row[0].strip(), score, fold))
    if not records:
        raise ManifestError(f"{path}: manifest has no records")
    kk = k if k is not None else max(r.fold for r in records)
    present = {r.fold for r in records}
    if any(r.fold > kk for r in records):
        raise ManifestError(f"{path}: fold id exceeds K={kk}")
    missing = sorted(set(range(1, kk + 1)) - present)
    if missing:
        raise ManifestError(f"{path}: folds {missing} have no records")
    return DatasetManifest(tuple(records), kk, str(path.parent))


def write_manifest(path, records: Sequence[Record]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for r in records:
            w.writerow([r.image_path, repr(float(r.score)), r.fold])


def manifest_from_split_lists(test_lists: Sequence, image_dir: str) -> list[Record]:
    """Records from per-fold test lists (one ``<file name> <score>`` pair per line).

    List ``k`` (1-based, in the order given) supplies the records of fold
    ``k``; image paths become ``image_dir/<file name>``.  This is the layout of
    the public five-fold split files of the common facial-beauty benchmark.
    """
    records: list[Record] = []
    seen: dict[str, int] = {}
    for fold, lst in enumerate(test_lists, start=1):
        lst = Path(lst)
        if not lst.is_file():
            raise DataError(f"split list not found: {lst}")
        for lineno, line in enumerate(lst.read_text(encoding="utf-8").splitlines(), start=1):
            parts = line.replace(",", " ").split()
            if not parts:
                continue
            if len(parts) != 2:
                raise ManifestError(f"{lst}:{lineno}: expected '<file> <score>', got {line!r}")
            name = parts[0]
            try:
                score = float(parts[1])
            except ValueError:
                raise ManifestError(f"{lst}:{lineno}: bad score {parts[1]!r}") from None
            if not SCORE_RANGE[0] <= score <= SCORE_RANGE[1]:
                raise ManifestError(f"{lst}:{lineno}: score {score} outside [1, 5]")
            if name in seen:
                raise ManifestError(f"{lst}:{lineno}: {name} already assigned to fold {seen[name]}")
            seen[name] = fold
            records.append(Record(str(Path(image_dir) / name), score, fold))
    return records


def fold_split(manifest: DatasetManifest, test_fold: int) -> tuple[list[Record], list[Record]]:
    if not 1 <= test_fold <= manifest.k:
        raise ValueError(f"test fold {test_fold} outside 1..{manifest.k}")
    train = [r for r in manifest.records if r.fold != test_fold]
    test = [r for r in manifest.records if r.fold == test_fold]
    if not train:
        raise DataError("fold split leaves no training records")
    return train, test


# -- decoding and augmentation ----------------------------------------------

@lru_cache(maxsize=8192)
def _decode_resized(path: str, size: int, mtime_ns: int) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            if im.size != (size, size):
                im = im.resize((size, size), Image.BILINEAR)
            arr = np.asarray(im, dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from None
    arr.setflags(write=False)
    return arr


def decode_image(path, size: int) -> np.ndarray:
    """``(H, W, 3)`` floats in [0, 1], bilinearly resized to ``size``."""
    p = Path(path)
    try:
        mtime = p.stat().st_mtime_ns
    except OSError:
        raise DataError(f"image file not found: {p}") from None
    return _decode_resized(str(p), size, mtime)


def hflip(img: np.ndarray) -> np.ndarray:
    return img[:, ::-1].copy()


def rotate(img: np.ndarray, degrees: float) -> np.ndarray:
    if degrees == 0:
        return img
    return ndimage.rotate(img, degrees, axes=(1, 0), reshape=False, order=1, mode="nearest")


def _gray(img: np.ndarray) -> np.ndarray:
    return img @ np.array([0.299, 0.587, 0.114])


def color_jitter(img: np.ndarray, brightness: float, contrast: float, saturation: float) -> np.ndarray:
    """Apply multiplicative brightness, contrast and saturation factors in that order."""
    out = img * brightness
    m = _gray(out).mean()
    out = (out - m) * contrast + m
    g = _gray(out)[..., None]
    out = (out - g) * saturation + g
    return np.clip(out, 0.0, 1.0)


def augment(img: np.ndarray, aug: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    # draw every random number up front so the stream does not depend on which
    # transforms end up being no-ops
    u_flip, u_rot, u_b, u_c, u_s = rng.random(5)
    out = img
    if u_flip < aug.flip_prob:
        out = hflip(out)
    angle = (2 * u_rot - 1) * aug.rotation_degrees
    out = rotate(out, angle)
    if aug.brightness or aug.contrast or aug.saturation:
        out = color_jitter(out, 1 + (2 * u_b - 1) * aug.brightness,
                           1 + (2 * u_c - 1) * aug.contrast,
                           1 + (2 * u_s - 1) * aug.saturation)
    return out


def normalize(img: np.ndarray) -> np.ndarray:
    """``(H, W, 3)`` in [0, 1] to ImageNet-normalized ``(3, H, W)``."""
    return np.transpose((img - IMAGENET_MEAN) / IMAGENET_STD, (2, 0, 1))


def load_sample(manifest: DatasetManifest, record: Record, size: int, train_mode: bool = False,
                aug: AugmentConfig | None = None, rng: np.random.Generator | None = None) -> Sample:
    img = decode_image(manifest.resolve(record), size)
    if train_mode and aug is not None and aug.enabled:
        if rng is None:
            raise ValueError("training-mode augmentation needs a random generator")
        img = augment(img, aug, rng)
    return Sample(normalize(img), record.score)


# -- batching -----------------------------------------------------------------

def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def iter_batches(manifest: DatasetManifest, records: Sequence[Record], size: int, batch_size: int, *,
                 shuffle_seed: int | None = None, epoch: int = 0, train_mode: bool = False,
                 aug: AugmentConfig | None = None, aug_seed: int = 0,
                 workers: int = 0) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Yield ``(images, scores, indices)`` batches; the last partial batch is kept.

    Each sample's augmentation generator is seeded from ``(aug_seed, epoch,
    index)``, so results do not depend on how many workers decode.
    """
    n = len(records)
    order = epoch_order(n, shuffle_seed, epoch) if shuffle_seed is not None else np.arange(n)

    def one(i: int) -> Sample:
        rng = np.random.default_rng([aug_seed, epoch, int(i)]) if train_mode else None
        return load_sample(manifest, records[i], size, train_mode, aug, rng)

    pool = ThreadPoolExecutor(workers) if workers > 0 else None
    try:
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            samples = list(pool.map(one, idx)) if pool else [one(i) for i in idx]
            yield (np.stack([s.pixels for s in samples]),
                   np.array([s.score for s in samples]),
                   idx)
    finally:
        if pool:
            pool.shutdown()


def epoch_digest(paths: Sequence[str]) -> str:
    """Digest of the order in which one epoch visited its records."""
    return hashlib.sha256("\x1f".join(paths).encode("utf-8")).hexdigest()


def data_order_hash(digests: Sequence[str]) -> str:
    """Combine per-epoch digests into one run-level data-order hash."""
    return hashlib.sha256("\x1e".join(digests).encode("utf-8")).hexdigest()[:16]


# -- synthetic dataset ----------------------------------------------------------

def synth_score(brightness: float, symmetry: float) -> float:
    """Known smooth target: ``1 + 4 * sigmoid(2 * brightness + symmetry)``."""
    return float(1.0 + 4.0 / (1.0 + np.exp(-(2.0 * brightness + symmetry))))


def synth_image(size: int, brightness: float, symmetry: float, rng: np.random.Generator) -> np.ndarray:
    """A face-like pattern: an ellipse whose tone follows ``brightness`` and two
    dark "eyes" whose vertical misalignment grows as ``symmetry`` falls.
    Returns ``(size, size, 3)`` uint8.
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    c = size / 2.0
    img = np.empty((size, size, 3))
    img[:] = np.array([0.35, 0.38, 0.42])
    face = ((xx - c) / (0.36 * size)) ** 2 + ((yy - c) / (0.44 * size)) ** 2 <= 1.0
    tone = 0.55 + 0.3 * brightness
    img[face] = np.array([1.0, 0.82, 0.7]) * tone
    eye_r = max(size / 14.0, 0.75)
    eye_y = c - size * 0.1
    offset = (1.0 - symmetry) / 2.0 * size * 0.12
    for ex, ey in ((c - size * 0.16, eye_y), (c + size * 0.16, eye_y + offset)):
        eye = (xx - ex) ** 2 + (yy - ey) ** 2 <= eye_r ** 2
        img[eye] = np.array([0.12, 0.1, 0.1])
    img += rng.normal(0.0, 0.02, size=img.shape)
    return (np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def synth_dataset(out_dir, n: int, image_size: int, seed: int, k: int = 5) -> DatasetManifest:
    """Write ``n`` PNGs and ``manifest.csv`` into ``out_dir``; folds round-robin."""
    if n < k:
        raise DataError(f"need at least K={k} samples, got n={n}")
    out = Path(out_dir)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from None
    rng = np.random.default_rng(seed)
    records = []
    width = max(4, len(str(n - 1)))
    for i in range(n):
        brightness, symmetry = rng.uniform(-1.0, 1.0, size=2)
        pixels = synth_image(image_size, brightness, symmetry, rng)
        rel = f"images/{i:0{width}d}.png"
        Image.fromarray(pixels, "RGB").save(out / rel, format="PNG", optimize=False)
        records.append(Record(rel, round(synth_score(brightness, symmetry), 6), i % k + 1))
    write_manifest(out / "manifest.csv", records)
    return DatasetManifest(tuple(records), k, str(out))
