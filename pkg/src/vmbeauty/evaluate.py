"""Regression metrics (PC, MAE, RMSE) and per-variant evaluation."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import DatasetManifest, Record, iter_batches
from .model import VARIANTS


class MetricError(ValueError):
    pass


@dataclass
class MetricsReport:
    pc: float
    mae: float
    rmse: float
    n: int
    residuals: np.ndarray = field(repr=False)

    def row(self) -> dict:
        return {"pc": self.pc, "mae": self.mae, "rmse": self.rmse, "n": self.n}


def _pair(pred, target) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(getattr(pred, "data", pred), dtype=np.float64).reshape(-1)
    t = np.asarray(getattr(target, "data", target), dtype=np.float64).reshape(-1)
    if p.shape != t.shape:
        raise MetricError(f"length mismatch: {p.size} predictions vs {t.size} targets")
    if p.size == 0:
        raise MetricError("metrics need at least one sample")
    return p, t


def pearson(pred, target) -> float:
    """Population-form correlation coefficient."""
    p, t = _pair(pred, target)
    if p.size < 2:
        raise MetricError("pearson needs at least two samples")
    pc, tc = p - p.mean(), t - t.mean()
    sp, st = math.sqrt((pc * pc).mean()), math.sqrt((tc * tc).mean())
    if sp == 0.0 or st == 0.0:
        raise MetricError("pearson is undefined for a constant input (zero variance)")
    return float((pc * tc).mean() / (sp * st))


def mae(pred, target) -> float:
    p, t = _pair(pred, target)
    return float(np.abs(p - t).mean())


def rmse(pred, target) -> float:
    p, t = _pair(pred, target)
    d = p - t
    return float(math.sqrt((d * d).mean()))


def metrics_report(pred, target) -> MetricsReport:
    p, t = _pair(pred, target)
    try:
        pc = pearson(p, t)
    except MetricError as exc:
        warnings.warn(f"PC undefined ({exc}); reporting NaN", RuntimeWarning, stacklevel=2)
        pc = float("nan")
    return MetricsReport(pc, mae(p, t), rmse(p, t), int(p.size), p - t)


def mean_report(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Arithmetic mean of per-fold metrics; residuals are concatenated."""
    if not reports:
        raise MetricError("no reports to average")
    return MetricsReport(
        pc=float(np.mean([r.pc for r in reports])),
        mae=float(np.mean([r.mae for r in reports])),
        rmse=float(np.mean([r.rmse for r in reports])),
        n=int(sum(r.n for r in reports)),
        residuals=np.concatenate([r.residuals for r in reports]),
    )


def predict_records(model, manifest: DatasetManifest, records: Sequence[Record], variant: str,
                    image_size: int, batch_size: int = 64, workers: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Eval-path predictions and targets in record order."""
    preds, targets = [], []
    with T.no_grad():
        for images, scores, _ in iter_batches(manifest, records, image_size, batch_size, workers=workers):
            preds.append(np.asarray(model.predict(T.Tensor(images), variant).data, dtype=np.float64).reshape(-1))
            targets.append(scores)
    return np.concatenate(preds), np.concatenate(targets)


def evaluate(model, manifest: DatasetManifest, records: Sequence[Record], variant: str = "learned_fusion",
             image_size: int | None = None, batch_size: int = 64, workers: int = 0) -> MetricsReport:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {', '.join(VARIANTS)}")
    if not records:
        raise MetricError("cannot evaluate on an empty test set")
    size = image_size if image_size is not None else model.cfg.image_size
    pred, target = predict_records(model, manifest, records, variant, size, batch_size, workers)
    return metrics_report(pred, target)
