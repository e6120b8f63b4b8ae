"""Exact, byte-deterministic checkpoint container.

Layout: ``b"QSEGCKPT"``, u32 version, u32 header length, a JSON header
(sorted keys) and then the raw little-endian array payload. Grid-valued
tensors are stored as int64 grid indices with their (k, scale) so that
loading reproduces every value bit for bit; anything off-grid (full
precision layers, BN running statistics) is stored as float64.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .l1bn import BNState
from .layers import QLayer
from .network import Network
from .quant import BitConfig, quant_step

MAGIC = b"QSEGCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _encode(arr, k, scale):
    """Return (meta, bytes); grid encoding when exactly representable."""
    arr = np.asarray(arr, dtype=np.float64)
    if k is not None:
        idx = np.rint(arr / scale / quant_step(k))
        if np.array_equal(idx * quant_step(k) * scale, arr):
            return ({"enc": "grid", "k": int(k), "scale": scale, "shape": list(arr.shape)},
                    idx.astype("<i8").tobytes())
    return {"enc": "f64", "shape": list(arr.shape)}, arr.astype("<f8").tobytes()


def _decode(meta, buf):
    shape = tuple(meta["shape"])
    if meta["enc"] == "grid":
        idx = np.frombuffer(buf, "<i8").reshape(shape)
        return idx.astype(np.float64) * quant_step(meta["k"]) * meta["scale"]
    return np.frombuffer(buf, "<f8").reshape(shape).copy()


def save_checkpoint(net: Network, cfg: BitConfig, path, extra: dict | None = None) -> None:
    k_U = cfg.k_U if cfg.on("U") else None
    header = {"arch": net.arch, "n_classes": net.n_classes, "loss": net.loss,
              "quantize_skip": net.quantize_skip, "bits": cfg.to_dict(),
              "extra": extra or {}, "layers": [], "arrays": []}
    payload = []
    offset = 0

    def put(name, arr, k=None, scale=1.0):
        nonlocal offset
        meta, raw = _encode(arr, k, scale)
        meta.update(name=name, offset=offset, nbytes=len(raw))
        header["arrays"].append(meta)
        payload.append(raw)
        offset += len(raw)

    for layer in net.layers.values():
        lk = k_U if layer.quantized else None
        header["layers"].append({
            "name": layer.name, "kind": layer.kind, "stride": layer.stride,
            "padding": layer.padding, "grad_mode": layer.grad_mode, "relu": layer.relu,
            "part": layer.part, "quantized": layer.quantized, "has_bn": layer.has_bn,
            "bn": None if layer.bn is None else {"eps": layer.bn.eps,
                                                 "momentum": layer.bn.momentum,
                                                 "stop_stats_grad": layer.bn.stop_stats_grad},
        })
        put(f"{layer.name}.weights", layer.weights, lk)
        if layer.bn is not None:
            put(f"{layer.name}.gamma", layer.bn.gamma, lk, 2.0)
            put(f"{layer.name}.beta", layer.bn.beta, lk, 2.0)
            put(f"{layer.name}.running_mu", layer.bn.running_mu)
            put(f"{layer.name}.running_sigma", layer.bn.running_sigma)
    hdr = json.dumps(header, sort_keys=True).encode()
    Path(path).write_bytes(MAGIC + struct.pack("<II", VERSION, len(hdr)) + hdr + b"".join(payload))


def load_checkpoint(path):
    """Return (network, BitConfig, extra)."""
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", buf, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    start = 16 + hlen
    header = json.loads(buf[16:start])
    arrays = {}
    for meta in header["arrays"]:
        lo = start + meta["offset"]
        hi = lo + meta["nbytes"]
        if hi > len(buf):
            raise CheckpointError(f"{path}: truncated array {meta['name']}")
        arrays[meta["name"]] = _decode(meta, buf[lo:hi])
    layers = {}
    for spec in header["layers"]:
        n = spec["name"]
        bn = None
        if spec["has_bn"]:
            bn = BNState(gamma=arrays[f"{n}.gamma"], beta=arrays[f"{n}.beta"],
                         running_mu=arrays[f"{n}.running_mu"],
                         running_sigma=arrays[f"{n}.running_sigma"], **spec["bn"])
        layers[n] = QLayer(n, spec["kind"], arrays[f"{n}.weights"], spec["stride"],
                           spec["padding"], spec["grad_mode"], spec["relu"], bn,
                           spec["part"], spec["quantized"])
    net = Network(header["arch"], header["n_classes"], layers, header["loss"],
                  header["quantize_skip"])
    return net, BitConfig.from_dict(header["bits"]), header["extra"]
