"""Four-variant ablation under identical seeds, folds and augmentation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from .config import RunConfig
from .data import DatasetManifest
from .evaluate import MetricsReport
from .model import VARIANTS
from .train import CrossValidation, cross_validate

REPORT_HEADER = ("variant", "pc", "mae", "rmse", "n", "config_hash")
RUNS_HEADER = ("variant", "fold", "pc", "mae", "rmse", "n", "data_order_hash")


@dataclass
class AblationRow:
    variant: str
    report: MetricsReport
    config_hash: str
    cv: CrossValidation

    @property
    def data_order_hashes(self) -> list[str]:
        return self.cv.data_order_hashes


def variant_config(cfg: RunConfig, variant: str) -> RunConfig:
    return replace(cfg, train=replace(cfg.train, variant=variant))


def ablate(manifest: DatasetManifest, cfg: RunConfig, out_dir=None,
           folds: Sequence[int] | None = None, variants: Sequence[str] = VARIANTS) -> list[AblationRow]:
    """Cross-validate every variant with the same root seed and folds.

    Only ``train.variant`` differs between runs, so per-fold initial weights,
    batch order and augmentation draws coincide across variants.
    """
    rows = []
    for variant in variants:
        vcfg = variant_config(cfg, variant)
        sub = Path(out_dir) / variant if out_dir is not None else None
        cv = cross_validate(manifest, vcfg, sub, folds)
        rows.append(AblationRow(variant, cv.mean, vcfg.hash(), cv))
    if out_dir is not None:
        write_report(Path(out_dir) / "ablation.csv", rows)
        write_runs(Path(out_dir) / "ablation_runs.csv", rows)
    return rows


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.6f}"


def write_report(path, rows: Sequence[AblationRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for r in rows:
            w.writerow([r.variant, _fmt(r.report.pc), _fmt(r.report.mae), _fmt(r.report.rmse),
                        r.report.n, r.config_hash])


def write_runs(path, rows: Sequence[AblationRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUNS_HEADER)
        for r in rows:
            for fold, rep, h in zip(r.cv.fold_ids, r.cv.folds, r.cv.data_order_hashes):
                w.writerow([r.variant, fold, _fmt(rep.pc), _fmt(rep.mae), _fmt(rep.rmse), rep.n, h])


def format_table(rows: Sequence[AblationRow]) -> str:
    lines = [f"{'variant':<16}{'PC':>9}{'MAE':>9}{'RMSE':>9}{'n':>6}  config"]
    for r in rows:
        rep = r.report
        lines.append(f"{r.variant:<16}{rep.pc:>9.4f}{rep.mae:>9.4f}{rep.rmse:>9.4f}{rep.n:>6}  {r.config_hash}")
    return "\n".join(lines)
