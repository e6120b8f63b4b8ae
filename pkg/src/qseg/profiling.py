"""Per-layer distribution profiles of the quantized objects.

One forward/backward pass is replayed with probes switched on; each
captured tensor gets a log-magnitude histogram, quartiles, its Scale and a
failure-mode classification against the grid of its bit-width.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .network import Network, backward, forward, loss_and_grad
from .quant import BitConfig, classify_distribution, scale_factor
from .tensor import Rng

OBJECTS = ("W", "A", "E1", "E2", "G", "mu", "sigma", "gamma", "beta", "xhat")
BN_OBJECTS = ("mu", "sigma", "gamma", "beta", "xhat", "E2")

# magnitude bins: 10^-12 .. 10^4, four per decade
LOG_LO, LOG_HI, PER_DECADE = -12, 4, 4


def magnitude_histogram(x) -> dict:
    a = np.abs(np.asarray(x, dtype=np.float64)).ravel()
    edges = np.logspace(LOG_LO, LOG_HI, (LOG_HI - LOG_LO) * PER_DECADE + 1)
    nz = a[a > 0]
    # out-of-range magnitudes land in the end bins so counts always add up
    clamped = np.clip(nz, edges[0], edges[-1])
    counts, _ = np.histogram(clamped, bins=edges)
    return {"edges": edges.tolist(), "counts": counts.astype(int).tolist(),
            "zeros": int(a.size - nz.size)}


def tensor_report(x, k: int) -> dict:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot profile an empty tensor")
    q = np.quantile(x, [0.0, 0.25, 0.5, 0.75, 1.0])
    fm = classify_distribution(x, k)
    return {"size": int(x.size), "k": k, "scale": scale_factor(x),
            "quartiles": [float(v) for v in q],
            "failure_mode": fm.mode, "fraction_below_step": fm.fraction_below_step,
            "fraction_clipped": fm.fraction_clipped, **magnitude_histogram(x)}


def capture(net: Network, cfg: BitConfig, images, masks, seed: int = 0) -> dict:
    """Replay one training step (no update) and return {layer: {object: tensor}}."""
    net.probes(True)
    try:
        logits = forward(net, images, cfg, training=True)
        _, grad = loss_and_grad(net, logits, masks)
        backward(net, grad, cfg, Rng(seed))
        return {name: dict(layer.probe) for name, layer in net.layers.items()}
    finally:
        net.probes(False)


def profile(net: Network, cfg: BitConfig, images, masks, objects=OBJECTS, seed: int = 0) -> dict:
    """Return {object: {layer: report}}; objects no layer produces are left out."""
    unknown = [o for o in objects if o not in OBJECTS]
    if unknown:
        raise ValueError(f"unknown object(s) {unknown}; choose from {OBJECTS}")
    probes = capture(net, cfg, images, masks, seed)
    out = {}
    for obj in objects:
        per_layer = {name: tensor_report(p[obj], cfg.bits(obj))
                     for name, p in probes.items() if obj in p}
        if per_layer:
            out[obj] = per_layer
    return out


def scale_range(report: dict, obj: str = "G") -> tuple[float, float]:
    """(max, min) over layers of Scale(obj)."""
    scales = [r["scale"] for r in report[obj].values()]
    return max(scales), min(scales)


def write_profile(report: dict, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for obj, layers in report.items():
        for layer, r in layers.items():
            p = out / f"hist_{obj}_{layer}.json"
            p.write_text(json.dumps({"object": obj, "layer": layer, **r}, indent=1))
            paths.append(p)
    return paths


def summary_rows(report: dict) -> list[dict]:
    rows = []
    for obj, layers in report.items():
        for layer, r in layers.items():
            q = r["quartiles"]
            rows.append({"object": obj, "layer": layer, "size": r["size"], "k": r["k"],
                         "scale": r["scale"], "min": q[0], "q1": q[1], "median": q[2],
                         "q3": q[3], "max": q[4], "failure_mode": r["failure_mode"],
                         "fraction_below_step": r["fraction_below_step"],
                         "fraction_clipped": r["fraction_clipped"]})
    return rows
