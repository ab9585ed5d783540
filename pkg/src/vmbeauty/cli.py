"""Command-line entry point: ``vmbeauty <command> ...``.

Exit codes: 0 success, 2 argument or config error, 3 data error (missing or
malformed files), 4 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .ablation import ablate, format_table
from .bench import BenchError, bench_scan, format_bench, write_bench_csv
from .config import ConfigError, RunConfig, dump_config, parse_config, tiny_run_config
from .data import (DataError, decode_image, fold_split, load_manifest, manifest_from_split_lists, normalize,
                   synth_dataset, write_manifest)
from .evaluate import MetricError, evaluate
from .model import VARIANTS, CheckpointError, forward
from .saliency import BRANCHES, saliency_maps, write_grid_csv
from .train import NumericalAbort, cross_validate, load_model, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("vmbeauty")


class UsageError(Exception):
    pass


def _lengths(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--quiet", action="store_true", help="suppress tables and progress logging")
    common.add_argument("--seed", type=int, default=None, help="root seed (overrides the config)")
    common.add_argument("--workers", type=int, default=None, help="data prefetch threads")

    p = argparse.ArgumentParser(prog="vmbeauty", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    s = sub.add_parser("synth", parents=[common], help="write a synthetic scored image set")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--n", type=int, default=64)
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--k", type=int, default=5, help="number of folds")

    def run_args(sp, fold: bool):
        sp.add_argument("--config", type=Path, help="INI run config (defaults if omitted)")
        sp.add_argument("--tiny", action="store_true", help="start from the tiny test config instead of defaults")
        sp.add_argument("--manifest", required=True, type=Path)
        sp.add_argument("--out", required=True, type=Path)
        sp.add_argument("--keep-last", type=int, default=None, help="keep only the newest N epoch checkpoints")
        if fold:
            sp.add_argument("--fold", required=True, type=int)
            sp.add_argument("--resume", type=Path, help="epoch checkpoint to resume from")

    run_args(sub.add_parser("train", parents=[common], help="train one fold"), fold=True)
    run_args(sub.add_parser("cv", parents=[common], help="k-fold cross-validation"), fold=False)
    a = sub.add_parser("ablate", parents=[common], help="train and compare the four variants")
    run_args(a, fold=False)
    a.add_argument("--folds", type=_lengths, default=None, help="subset of folds, e.g. 1,2")

    e = sub.add_parser("eval", parents=[common], help="metrics of a checkpoint on a fold")
    e.add_argument("--checkpoint", required=True, type=Path)
    e.add_argument("--manifest", required=True, type=Path)
    e.add_argument("--fold", type=int, default=None, help="defaults to the checkpoint's test fold")
    e.add_argument("--variant", choices=VARIANTS, default=None)
    e.add_argument("--out", type=Path, default=None)

    pr = sub.add_parser("predict", parents=[common], help="fused and branch scores for one image")
    pr.add_argument("--checkpoint", required=True, type=Path)
    pr.add_argument("--image", required=True, type=Path)

    sa = sub.add_parser("saliency", parents=[common], help="per-branch saliency overlay and grid")
    sa.add_argument("--checkpoint", required=True, type=Path)
    sa.add_argument("--image", required=True, type=Path)
    sa.add_argument("--branch", choices=BRANCHES + ("all",), default="all")
    sa.add_argument("--out", required=True, type=Path)

    b = sub.add_parser("bench-scan", parents=[common], help="scan vs attention length scaling")
    b.add_argument("--lengths", type=_lengths, default=[128, 256, 512, 1024])
    b.add_argument("--trials", type=int, default=5)
    b.add_argument("--out", type=Path, default=None)

    cs = sub.add_parser("convert-splits", parents=[common],
                        help="build a manifest from per-fold '<file> <score>' test lists")
    cs.add_argument("--lists", required=True, nargs="+", type=Path, help="test list of fold 1, 2, ...")
    cs.add_argument("--images", required=True, help="directory holding the listed image files")
    cs.add_argument("--out", required=True, type=Path, help="manifest CSV to write")

    pc = sub.add_parser("print-config", parents=[common], help="print the full default config")
    pc.add_argument("--tiny", action="store_true")
    pc.add_argument("--config", type=Path, default=None, help="print this config with defaults filled in")
    return p


# -- helpers --------------------------------------------------------------------

def _run_config(args) -> RunConfig:
    base = tiny_run_config() if getattr(args, "tiny", False) else RunConfig()
    if getattr(args, "config", None) is not None:
        if not args.config.is_file():
            raise ConfigError(f"config file not found: {args.config}")
        cfg = parse_config(args.config.read_text(encoding="utf-8"), base)
    else:
        cfg = base
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.workers is not None:
        updates["workers"] = args.workers
    if getattr(args, "keep_last", None) is not None:
        updates["keep_last"] = args.keep_last
    env = os.environ.get("VMB_PRECISION")
    if env:
        updates["precision"] = env
    return replace(cfg, train=replace(cfg.train, **updates)) if updates else cfg


def _manifest(path: Path):
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    return load_manifest(path)


def _say(args, text: str) -> None:
    if not args.quiet:
        print(text)


def _report_line(name, rep) -> str:
    return f"{name:<16} PC {rep.pc:.4f}  MAE {rep.mae:.4f}  RMSE {rep.rmse:.4f}  n {rep.n}"


def _load_image(path: Path, size: int) -> tuple[np.ndarray, np.ndarray]:
    hwc = decode_image(path, size)
    return hwc, normalize(hwc)


# -- commands -------------------------------------------------------------------

def cmd_synth(args) -> int:
    seed = 0 if args.seed is None else args.seed
    if args.n < args.k:
        raise UsageError(f"--n {args.n} is smaller than the number of folds K={args.k}")
    man = synth_dataset(args.out, args.n, args.size, seed, k=args.k)
    _say(args, f"wrote {len(man.records)} images and manifest.csv to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .plotting import plot_loss_curve

    cfg = _run_config(args)
    man = _manifest(args.manifest)
    if not 1 <= args.fold <= man.k:
        raise UsageError(f"--fold {args.fold} outside 1..{man.k} for this manifest")
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "config.ini").write_text(dump_config(cfg), encoding="utf-8")
    res = train(man, args.fold, cfg, args.out, resume_from=args.resume)
    if res.history:
        plot_loss_curve(res.history, args.out / "loss.png", f"fold {args.fold}")
        last = res.history[-1]
        _say(args, f"fold {args.fold}: {res.steps} steps, final train loss {last['mean_train_loss']:.5f}, "
                   f"val PC {last['val_pc']:.4f}, MAE {last['val_mae']:.4f}, RMSE {last['val_rmse']:.4f}")
    return EXIT_OK


def cmd_cv(args) -> int:
    from .plotting import plot_loss_curve

    cfg = _run_config(args)
    man = _manifest(args.manifest)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "config.ini").write_text(dump_config(cfg), encoding="utf-8")
    cv = cross_validate(man, cfg, args.out)
    with open(args.out / "cv.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fold", "pc", "mae", "rmse", "n", "data_order_hash"])
        for fold, rep, h in zip(cv.fold_ids, cv.folds, cv.data_order_hashes):
            w.writerow([fold, rep.pc, rep.mae, rep.rmse, rep.n, h])
        w.writerow(["mean", cv.mean.pc, cv.mean.mae, cv.mean.rmse, cv.mean.n, ""])
    for fold, res in zip(cv.fold_ids, cv.results):
        if res.history:
            plot_loss_curve(res.history, args.out / f"fold{fold}" / "loss.png", f"fold {fold}")
    for fold, rep in zip(cv.fold_ids, cv.folds):
        _say(args, _report_line(f"fold {fold}", rep))
    _say(args, _report_line("mean", cv.mean))
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .plotting import plot_ablation

    cfg = _run_config(args)
    man = _manifest(args.manifest)
    if args.folds is not None and any(not 1 <= f <= man.k for f in args.folds):
        raise UsageError(f"--folds {args.folds} outside 1..{man.k} for this manifest")
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "config.ini").write_text(dump_config(cfg), encoding="utf-8")
    rows = ablate(man, cfg, args.out, args.folds)
    plot_ablation(rows, args.out / "ablation.png")
    _say(args, format_table(rows))
    return EXIT_OK


def cmd_eval(args) -> int:
    model, cfg, meta = load_model(args.checkpoint)
    man = _manifest(args.manifest)
    fold = args.fold if args.fold is not None else meta.get("fold")
    if fold is None:
        raise UsageError("checkpoint records no test fold; pass --fold")
    if not 1 <= fold <= man.k:
        raise UsageError(f"--fold {fold} outside 1..{man.k} for this manifest")
    variant = args.variant or cfg.train.variant
    _, test = fold_split(man, fold)
    with T.precision(cfg.train.precision):
        rep = evaluate(model, man, test, variant, cfg.model.image_size, workers=args.workers or 0)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        with open(args.out / "eval.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variant", "fold", "pc", "mae", "rmse", "n", "config_hash"])
            w.writerow([variant, fold, rep.pc, rep.mae, rep.rmse, rep.n, cfg.hash()])
    _say(args, _report_line(variant, rep))
    return EXIT_OK


def cmd_predict(args) -> int:
    model, cfg, _ = load_model(args.checkpoint)
    _, img = _load_image(args.image, cfg.model.image_size)
    with T.precision(cfg.train.precision), T.no_grad():
        y_hat, p_vit, p_mamba = forward(T.Tensor(img[None].astype(T.get_dtype())), model)
    # scores are the command's output, so they print even with --quiet
    print("y_hat,p_vit,p_mamba")
    print(",".join(repr(float(np.asarray(t.data).reshape(-1)[0])) for t in (y_hat, p_vit, p_mamba)))
    return EXIT_OK


def cmd_saliency(args) -> int:
    from .plotting import plot_saliency_overlay

    model, cfg, _ = load_model(args.checkpoint)
    hwc, img = _load_image(args.image, cfg.model.image_size)
    branches = BRANCHES if args.branch == "all" else (args.branch,)
    args.out.mkdir(parents=True, exist_ok=True)
    with T.precision(cfg.train.precision):
        maps = saliency_maps(model, img, branches)
    stem = args.image.stem
    for b, smap in maps.items():
        write_grid_csv(args.out / f"{stem}_{b}_grid.csv", smap)
        plot_saliency_overlay(hwc, smap, args.out / f"{stem}_{b}_overlay.png")
        row, col = (int(i) for i in np.unravel_index(np.argmax(smap.grid), smap.grid.shape))
        _say(args, f"{b:<6} score {smap.score:.4f}  peak patch (row {row}, col {col})")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .plotting import plot_bench

    res = bench_scan(args.lengths, args.trials, seed=0 if args.seed is None else args.seed)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        write_bench_csv(args.out / "bench.csv", res)
        plot_bench(res, args.out / "bench.png")
    _say(args, format_bench(res))
    return EXIT_OK


def cmd_convert_splits(args) -> int:
    records = manifest_from_split_lists(args.lists, args.images)
    if not records:
        raise DataError("split lists contain no records")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_manifest(args.out, records)
    _say(args, f"wrote {len(records)} records in {len(args.lists)} folds to {args.out}")
    return EXIT_OK


def cmd_print_config(args) -> int:
    cfg = _run_config(args)
    sys.stdout.write(dump_config(cfg))
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "cv": cmd_cv,
    "ablate": cmd_ablate,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "saliency": cmd_saliency,
    "bench-scan": cmd_bench,
    "convert-splits": cmd_convert_splits,
    "print-config": cmd_print_config,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, BenchError) as exc:
        parser.print_usage(sys.stderr)
        print(f"vmbeauty {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, MetricError, FileNotFoundError) as exc:
        print(f"vmbeauty {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalAbort, T.NumericalError, FloatingPointError) as exc:
        print(f"vmbeauty {args.command}: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    raise SystemExit(main())
