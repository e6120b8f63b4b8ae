"""Ablation sweeps: k_U, gradient scaling mode, quantized network part.

Runs execute one after another. Each run is fully determined by its
config (seed included), so a ``cache`` dict keyed on the resolved config
text lets several sweeps share runs.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .data import SegDataset
from .train import DivergenceError, train

log = logging.getLogger(__name__)

DEFAULT_SEEDS = (0, 1, 2, 3, 4)


def run_key(config: ExperimentConfig, train_ds: SegDataset) -> tuple:
    return (config.to_text(), train_ds.seed, len(train_ds), train_ds.images.shape[2:])


def run_one(config: ExperimentConfig, train_ds: SegDataset, val_ds: SegDataset,
            out_dir=None, cache: dict | None = None) -> dict:
    """Train once and return {miou, pixel_acc, final_loss, diverged}."""
    key = run_key(config, train_ds)
    if cache is not None and key in cache:
        return cache[key]
    t0 = time.perf_counter()
    try:
        res = train(config, train_ds, val_ds, out_dir)
        ev = res.record.evals[-1]
        out = {"miou": ev["miou"], "pixel_acc": ev["pixel_acc"],
               "final_loss": float(res.record.losses()[-1]), "diverged": False}
    except DivergenceError as e:
        log.warning("run diverged: %s", e)
        losses = e.record.losses()
        out = {"miou": math.nan, "pixel_acc": math.nan,
               "final_loss": float(losses[-1]) if len(losses) else math.nan, "diverged": True}
    out["seconds"] = time.perf_counter() - t0
    if cache is not None:
        cache[key] = out
    return out


def _sub(out_dir, name):
    return None if out_dir is None else Path(out_dir) / name


def _runs(variants, config, seeds, train_ds, val_ds, out_dir, cache):
    """variants: list of (label dict, config overrides). Returns per-seed rows."""
    rows = []
    for labels, overrides in variants:
        for seed in seeds:
            cfg = config.with_(seed=seed, **overrides)
            tag = "_".join(f"{k}-{v}" for k, v in labels.items()) + f"_seed-{seed}"
            r = run_one(cfg, train_ds, val_ds, _sub(out_dir, tag), cache)
            log.info("%s: miou=%.4f", tag, r["miou"])
            rows.append({**labels, "seed": seed, **r})
    return rows


def summarize(rows: list[dict], by: tuple) -> list[dict]:
    """Mean/std of mIoU over seeds for each label combination; diverged runs are counted apart."""
    groups = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in by), []).append(r)
    out = []
    for key, rs in groups.items():
        vals = np.array([r["miou"] for r in rs if not r["diverged"]])
        out.append({**dict(zip(by, key)),
                    "mean_miou": float(vals.mean()) if vals.size else math.nan,
                    "std_miou": float(vals.std()) if vals.size else math.nan,
                    "n_runs": len(rs), "n_diverged": len(rs) - vals.size})
    return out


def sweep_ku(config, values, train_ds, val_ds, seeds=DEFAULT_SEEDS, out_dir=None, cache=None):
    variants = []
    for k in values:
        bits = dict(config.bits, k_U=int(k))
        variants.append(({"k_U": int(k)}, {"bits": bits}))
    rows = _runs(variants, config, seeds, train_ds, val_ds, out_dir, cache)
    return rows, summarize(rows, ("k_U",))


def sweep_scaling(config, train_ds, val_ds, seeds=DEFAULT_SEEDS, out_dir=None, cache=None,
                  networks=("toy_fcn", "toy_bn_net")):
    variants = [({"network": net, "grad_mode": mode}, {"network": net, "grad_mode": mode})
                for net in networks for mode in ("preserve_scale", "abandon_scale")]
    rows = _runs(variants, config, seeds, train_ds, val_ds, out_dir, cache)
    return rows, summarize(rows, ("network", "grad_mode"))


STRUCTURE = (("full_precision", "full_precision", "none"),
             ("quantized", "full_precision", "encoder"),
             ("full_precision", "quantized", "decoder"),
             ("quantized", "quantized", "all"))


def sweep_structure(config, train_ds, val_ds, seeds=DEFAULT_SEEDS, out_dir=None, cache=None):
    variants = [({"encoder": e, "decoder": d}, {"quant": q}) for e, d, q in STRUCTURE]
    rows = _runs(variants, config, seeds, train_ds, val_ds, out_dir, cache)
    summary = summarize(rows, ("encoder", "decoder"))
    base = summary[0]["mean_miou"]
    for s in summary:
        s["drop_vs_fp"] = base - s["mean_miou"]
    return rows, summary


def write_table(rows: list[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = list(rows[0]) if rows else []
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return path
