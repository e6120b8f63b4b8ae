"""Training loop and evaluation."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics as M
from .checkpoint import save_checkpoint
from .config import ExperimentConfig
from .data import SegDataset, crop_batch, load_dataset
from .network import (Network, apply_grads, backward, build_network, forward, loss_and_grad,
                      predict)
from .optim import Schedule, quantized_lr
from .quant import BitConfig, classify_distribution
from .tensor import Rng

log = logging.getLogger(__name__)

RUN_COLUMNS = ("step", "loss", "lr", "g_scale_max", "g_scale_min", "n_concentrated", "n_clipped")


class DivergenceError(RuntimeError):
    def __init__(self, msg, record):
        super().__init__(msg)
        self.record = record


@dataclass
class RunRecord:
    steps: list = field(default_factory=list)  # dicts keyed by RUN_COLUMNS
    evals: list = field(default_factory=list)  # dicts: step, miou, pixel_acc, iou

    def losses(self) -> np.ndarray:
        return np.array([s["loss"] for s in self.steps])

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        with open(out / "run.csv", "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(RUN_COLUMNS)
            for s in self.steps:
                w.writerow([_fmt(s[c]) for c in RUN_COLUMNS])
        if self.evals:
            n = len(self.evals[0]["iou"])
            with open(out / "eval.csv", "w", newline="") as f:
                w = csv.writer(f, lineterminator="\n")
                w.writerow(["step", "miou", "pixel_acc"] + [f"iou_{i}" for i in range(n)])
                for e in self.evals:
                    w.writerow([e["step"], _fmt(e["miou"]), _fmt(e["pixel_acc"])]
                               + [_fmt(v) for v in e["iou"]])


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


@dataclass
class TrainResult:
    record: RunRecord
    net: Network
    cfg: BitConfig
    config: ExperimentConfig


def prepare_network(config: ExperimentConfig, n_classes: int) -> tuple[Network, BitConfig]:
    cfg = config.bit_config()
    k_U = cfg.k_U if cfg.on("U") and config.quant != "none" else None
    net = build_network(config.network, n_classes, seed=config.seed,
                        grad_mode=config.resolved_grad_mode(), k_U=k_U,
                        channels=config.channels, quantize_skip=config.quantize_skip)
    for layer in net.layers.values():
        layer.quantized = (config.quant == "all" or layer.part == config.quant)
        if layer.bn is not None:
            layer.bn.stop_stats_grad = config.bn_stop_stats_grad
    return net, cfg


def _datasets(config, train_ds, val_ds):
    if train_ds is None:
        if not config.dataset:
            raise ValueError("no dataset given")
        train_ds = load_dataset(config.dataset)
    if val_ds is None:
        val_ds = load_dataset(config.val_dataset) if config.val_dataset else train_ds
    return train_ds, val_ds


def train(config: ExperimentConfig, train_ds: SegDataset | None = None,
          val_ds: SegDataset | None = None, out_dir=None) -> TrainResult:
    """Run the quantized training loop; write run.csv/eval.csv/checkpoint to ``out_dir``."""
    train_ds, val_ds = _datasets(config, train_ds, val_ds)
    net, cfg = prepare_network(config, train_ds.n_classes)
    sched = Schedule(config.resolved_lr(), config.halving_period,
                     cfg.k_U if cfg.on("U") else None)
    wd = config.resolved_weight_decay()
    root = Rng(config.seed)
    data_rng = root.split(1)
    record = RunRecord()
    initial = None
    bad = 0
    for step in range(config.steps):
        images, masks = crop_batch(train_ds, config.batch_size, config.crop, data_rng)
        logits = forward(net, images, cfg, training=True)
        loss, grad = loss_and_grad(net, logits, masks)
        lr = quantized_lr(sched, step)
        grads = backward(net, grad, cfg, root.split(2, step), wd)
        apply_grads(net, grads, lr, cfg)

        scales = [g.raw_scale for g in grads.values()]
        modes = [classify_distribution(g.raw_grad, cfg.k_G).mode for g in grads.values()]
        n_conc = sum(m in ("concentrated", "both") for m in modes)
        n_clip = sum(m in ("clipped", "both") for m in modes)
        record.steps.append({"step": step, "loss": loss, "lr": lr,
                             "g_scale_max": max(scales), "g_scale_min": min(scales),
                             "n_concentrated": n_conc, "n_clipped": n_clip})
        if initial is None:
            initial = loss
        if not math.isfinite(loss):
            _abort(record, out_dir, f"loss became {loss} at step {step}")
        bad = bad + 1 if loss > config.divergence_factor * initial else 0
        if bad >= config.divergence_patience:
            _abort(record, out_dir, f"loss above {config.divergence_factor}x initial for "
                                    f"{bad} steps (step {step})")
        if config.eval_interval and (step + 1) % config.eval_interval == 0 and step + 1 < config.steps:
            record.evals.append({"step": step + 1, **evaluate(net, val_ds, cfg, config.eval_mode)})
    record.evals.append({"step": config.steps, **evaluate(net, val_ds, cfg, config.eval_mode)})
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        record.write(out)
        save_checkpoint(net, cfg, out / "checkpoint.qck",
                        extra={"seed": config.seed, "steps": config.steps})
        (out / "config.resolved").write_text(config.to_text())
    return TrainResult(record, net, cfg, config)


def _abort(record, out_dir, msg):
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        record.write(out_dir)
    raise DivergenceError(msg, record)


def evaluate(net: Network, ds: SegDataset, cfg: BitConfig, mode: str = "global") -> dict:
    """Inference-mode metrics over a dataset: mIoU, pixel accuracy, per-class IoU."""
    if ds.n_classes != net.n_classes:
        raise ValueError(f"dataset has {ds.n_classes} classes, network {net.n_classes}")
    preds = predict(net, ds.images, cfg)
    cm = M.ConfusionMatrix(ds.n_classes)
    cm = M.accumulate(cm, preds, ds.masks)
    if mode == "per_image":
        miou = M.per_image_mean_iou(preds, ds.masks, ds.n_classes)
    else:
        miou = M.mean_iou(cm)
    return {"miou": miou, "pixel_acc": M.pixel_accuracy(cm),
            "iou": [float(v) for v in M.iou_per_class(cm)], "eval_mode": mode}
