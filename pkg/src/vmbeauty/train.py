"""End-to-end training: MSE objective, AdamW, the epoch loop and k-fold driver."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .config import RunConfig, derive_seed
from .data import DatasetManifest, Record, data_order_hash, epoch_digest, fold_split, iter_batches
from .evaluate import MetricsReport, evaluate, mean_report
from .model import VMBeautyNet, load_parameters, read_checkpoint, save_checkpoint
from .tensor import Tensor

log = logging.getLogger(__name__)

HISTORY_HEADER = ("epoch", "mean_train_loss", "val_pc", "val_mae", "val_rmse")

DESIGN_FLAGS = {
    "block_order": "pre-norm",
    "class_token_init": "zeros",
    "pos_embed_init": "normal(0, 0.02)",
    "weight_init": "attention branch normal(0, 0.02); state-space blocks uniform(+-1/sqrt(fan_in)); zero biases",
    "head_init": "zero weight; bias zero or the mean training score (head_bias_init)",
    "ssm_discretization": "A_bar=exp(delta*A), B_bar=delta*B",
    "ssm_A_init": "-(1..d_state) per channel",
    "bidirectional_merge": "shared params; reverse, scan, reverse back, average before out_proj",
    "lr_schedule": "constant unless cosine_schedule",
    "reported_epoch": "last",
}


class NumericalAbort(RuntimeError):
    pass


# -- objective and optimizer ------------------------------------------------

def mse_loss(pred, target) -> Tensor:
    pred, target = T._as_tensor(pred), T._as_tensor(target)
    if pred.shape != target.shape:
        raise T.ShapeError(f"mse_loss: prediction shape {pred.shape} != target shape {target.shape}")
    if pred.size < 1:
        raise T.ShapeError("mse_loss needs at least one element")
    return T.mean(T.square(pred - target))


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adamw_step(params: dict[str, Tensor], state: OptimizerState, lr: float, betas=(0.9, 0.999),
               eps: float = 1e-8, weight_decay: float = 0.0) -> None:
    """One decoupled-weight-decay Adam update using each parameter's ``grad``."""
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient")
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps) + lr * weight_decay * p.data
        p.data = np.asarray(p.data - update, dtype=p.data.dtype)


class AdamW:
    def __init__(self, params: dict[str, Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = dict(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = OptimizerState()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        adamw_step(self.params, self.state, self.lr if lr is None else lr, self.betas, self.eps,
                   self.weight_decay)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.params:
            if name in self.state.m:
                out[f"optim.m.{name}"] = self.state.m[name]
                out[f"optim.v.{name}"] = self.state.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], t: int) -> None:
        self.state.t = t
        for name, p in self.params.items():
            if f"optim.m.{name}" in arrays:
                self.state.m[name] = arrays[f"optim.m.{name}"].astype(p.dtype)
                self.state.v[name] = arrays[f"optim.v.{name}"].astype(p.dtype)


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    total = math.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum()) for p in params.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params.values():
            p.grad *= scale
    return total


# -- training loop ------------------------------------------------------------

@dataclass
class TrainResult:
    model: VMBeautyNet
    history: list[dict]
    data_order_hash: str
    steps: int
    seeds: dict[str, int]
    checkpoints: list[Path] = field(default_factory=list)
    final_loss: float = float("nan")


def fold_seeds(root: int, fold: int) -> dict[str, int]:
    return {name: derive_seed(root, name, fold) for name in ("init", "data", "augment", "dropout")}


def build_model(cfg: RunConfig, seed: int) -> VMBeautyNet:
    with T.precision(cfg.train.precision):
        return VMBeautyNet(cfg.model, np.random.default_rng(seed))


def write_history(path, history: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_HEADER)
        for row in history:
            w.writerow([row[k] for k in HISTORY_HEADER])


def train(manifest: DatasetManifest, test_fold: int, cfg: RunConfig, out_dir=None, *,
          model: VMBeautyNet | None = None, train_records: Sequence[Record] | None = None,
          eval_records: Sequence[Record] | None = None, resume_from=None,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Train one model on every fold except ``test_fold``.

    Per batch: augment, run both branches, fuse, MSE, zero grads, backward,
    AdamW step.  The test fold doubles as the per-epoch validation set for the
    history file.  When ``out_dir`` is given, a checkpoint is written after
    every epoch plus ``final.vmb`` and ``history.csv``.
    """
    tc = cfg.train
    seeds = fold_seeds(tc.seed, test_fold)
    if train_records is None or eval_records is None:
        tr, te = fold_split(manifest, test_fold)
        train_records = tr if train_records is None else train_records
        eval_records = te if eval_records is None else eval_records
    if not train_records:
        raise ValueError("no training records")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)

    with T.precision(tc.precision):
        if model is None:
            model = VMBeautyNet(cfg.model, np.random.default_rng(seeds["init"]))
            if tc.head_bias_init == "target_mean" and resume_from is None:
                mu = float(np.mean([r.score for r in train_records]))
                for head in (model.vit.head_bias, model.mamba.head_bias):
                    head.data = np.full(head.shape, mu, dtype=head.dtype)
        variant = tc.variant
        if variant == "averaging":
            model.fusion.weight.data = np.full((1, 2), 0.5, dtype=T.get_dtype())
            model.fusion.bias.data = np.zeros((), dtype=T.get_dtype())
        params = model.branch_parameters(variant)
        opt = AdamW(params, tc.learning_rate, (tc.beta1, tc.beta2), tc.eps, tc.weight_decay)
        dropout_rng = np.random.default_rng(seeds["dropout"])

        start_epoch, steps = 1, 0
        history: list[dict] = []
        orders: list[str] = []
        if resume_from is not None:
            header, arrays = read_checkpoint(resume_from)
            load_parameters(model, arrays)
            meta = header["meta"]
            opt.load_state_arrays(arrays, int(meta["step"]))
            start_epoch, steps = int(meta["epoch"]) + 1, int(meta["step"])
            history = list(meta.get("history", []))
            orders = list(meta.get("epoch_digests", []))
            dropout_rng = np.random.default_rng([seeds["dropout"], steps])

        batches_per_epoch = -(-len(train_records) // tc.batch_size)
        total_steps = tc.max_steps or tc.epochs * batches_per_epoch
        checkpoints: list[Path] = []
        last_loss = float("nan")
        done = bool(tc.max_steps) and steps >= tc.max_steps
        for epoch in range(start_epoch, tc.epochs + 1):
            if done:
                break
            losses, epoch_paths = [], []
            batches = iter_batches(manifest, train_records, cfg.model.image_size, tc.batch_size,
                                   shuffle_seed=seeds["data"], epoch=epoch, train_mode=True,
                                   aug=cfg.augment, aug_seed=seeds["augment"], workers=tc.workers)
            for b_idx, (images, scores, idx) in enumerate(batches, start=1):
                epoch_paths.extend(train_records[i].image_path for i in idx)
                pred = model.predict(Tensor(images), variant, rng=dropout_rng)
                loss = mse_loss(pred, Tensor(scores))
                last_loss = loss.item()
                if not math.isfinite(last_loss):
                    raise NumericalAbort(f"non-finite loss at epoch {epoch}, batch {b_idx} (step {steps + 1})")
                opt.zero_grad()
                loss.backward()
                if tc.grad_clip > 0:
                    clip_grad_norm(params, tc.grad_clip)
                lr = tc.learning_rate
                if tc.cosine_schedule:
                    lr = 0.5 * tc.learning_rate * (1 + math.cos(math.pi * min(steps, total_steps) / total_steps))
                opt.step(lr)
                steps += 1
                losses.append(last_loss)
                if tc.max_steps and steps >= tc.max_steps:
                    done = True
                    break
            orders.append(epoch_digest(epoch_paths))
            row = {"epoch": epoch, "mean_train_loss": float(np.mean(losses))}
            if eval_records:
                rep = evaluate(model, manifest, eval_records, variant, cfg.model.image_size)
                row.update(val_pc=rep.pc, val_mae=rep.mae, val_rmse=rep.rmse)
            else:
                row.update(val_pc=float("nan"), val_mae=float("nan"), val_rmse=float("nan"))
            history.append(row)
            log.info("fold %d epoch %d: loss %.5f val_pc %.4f", test_fold, epoch, row["mean_train_loss"], row["val_pc"])
            if on_epoch:
                on_epoch(row)
            if out is not None:
                meta = _meta(seeds, test_fold, variant, epoch, steps, history, orders)
                ck = save_checkpoint(out / "checkpoints" / f"epoch_{epoch:03d}.vmb", model, cfg.to_dict(),
                                     opt.state_arrays(), meta)
                checkpoints.append(ck)
                _prune(out / "checkpoints", tc.keep_last)

        order_hash = data_order_hash(orders)
        if out is not None:
            meta = _meta(seeds, test_fold, variant, history[-1]["epoch"] if history else 0, steps, history, orders)
            save_checkpoint(out / "final.vmb", model, cfg.to_dict(), opt.state_arrays(), meta)
            write_history(out / "history.csv", history)
    return TrainResult(model, history, order_hash, steps, seeds, checkpoints, last_loss)


def _meta(seeds, fold, variant, epoch, step, history, orders) -> dict:
    return {
        "seeds": seeds,
        "fold": fold,
        "variant": variant,
        "epoch": epoch,
        "step": step,
        "design": DESIGN_FLAGS,
        "history": history,
        "epoch_digests": orders,
        "data_order_hash": data_order_hash(orders),
    }


def _prune(ckpt_dir: Path, keep_last: int) -> None:
    if keep_last <= 0:
        return
    files = sorted(ckpt_dir.glob("epoch_*.vmb"))
    for stale in files[:-keep_last]:
        stale.unlink()


def load_model(path) -> tuple[VMBeautyNet, RunConfig, dict]:
    """Rebuild a model from a checkpoint; returns ``(model, config, meta)``."""
    header, arrays = read_checkpoint(path)
    cfg = RunConfig.from_dict(header["config"])
    with T.precision(cfg.train.precision):
        model = VMBeautyNet(cfg.model, np.random.default_rng(0))
        load_parameters(model, arrays)
    return model, cfg, header.get("meta", {})


# -- cross-validation -----------------------------------------------------------

@dataclass
class CrossValidation:
    folds: list[MetricsReport]
    mean: MetricsReport
    data_order_hashes: list[str]
    fold_ids: list[int] = field(default_factory=list)
    results: list[TrainResult] = field(default_factory=list, repr=False)


def cross_validate(manifest: DatasetManifest, cfg: RunConfig, out_dir=None,
                   folds: Sequence[int] | None = None) -> CrossValidation:
    """Independent train/evaluate run per fold, then the per-fold mean."""
    folds = list(folds) if folds is not None else list(range(1, manifest.k + 1))
    reports, hashes, results = [], [], []
    for fold in folds:
        sub = Path(out_dir) / f"fold{fold}" if out_dir is not None else None
        res = train(manifest, fold, cfg, sub)
        _, test = fold_split(manifest, fold)
        with T.precision(cfg.train.precision):
            reports.append(evaluate(res.model, manifest, test, cfg.train.variant, cfg.model.image_size))
        hashes.append(res.data_order_hash)
        results.append(res)
    return CrossValidation(reports, mean_report(reports), hashes, folds, results)
