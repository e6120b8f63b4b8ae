"""Experiment configuration and its flat ``key = value`` text format.

Lines are ``key = value``; ``#`` starts a comment. Keys are the field
names of ``ExperimentConfig`` plus ``k_<object>`` bit-widths and
``mode_<object>`` quantizer overrides (e.g. ``k_U = 16``,
``mode_E2 = off``).
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .network import ARCHITECTURES, DEFAULT_CHANNELS, DEFAULT_GRAD_MODE
from .quant import DEFAULT_MODES, BitConfig

QUANT_PARTS = ("all", "encoder", "decoder", "none")
DEFAULT_WEIGHT_DECAY = {"toy_fcn": 5e-4, "toy_bn_net": 1e-5}


@dataclass
class ExperimentConfig:
    network: str = "toy_bn_net"
    dataset: str = ""
    val_dataset: str = ""
    steps: int = 8000
    batch_size: int = 8
    crop: int = 32
    seed: int = 0
    lr: float = 0.0  # 0 -> network default
    halving_period: int = 2000
    weight_decay: float = -1.0  # negative -> network default
    grad_mode: str = ""  # empty -> network default
    quant: str = "all"  # which part of the network is quantized
    quantize_skip: bool = True
    eval_interval: int = 0  # 0 -> only at the end
    eval_mode: str = "global"  # or "per_image"
    channels: tuple = DEFAULT_CHANNELS
    divergence_factor: float = 10.0
    divergence_patience: int = 200
    bn_stop_stats_grad: bool = False
    bits: dict = field(default_factory=dict)  # k_* overrides
    modes: dict = field(default_factory=dict)  # mode_* overrides

    def __post_init__(self):
        if self.network not in ARCHITECTURES:
            raise ValueError(f"unknown network {self.network!r}")
        if self.quant not in QUANT_PARTS:
            raise ValueError(f"quant must be one of {QUANT_PARTS}")
        if self.eval_mode not in ("global", "per_image"):
            raise ValueError("eval_mode must be 'global' or 'per_image'")
        if self.crop % 16:
            raise ValueError("crop must be a multiple of 16")
        self.channels = tuple(int(c) for c in self.channels)
        self.bit_config()  # validate

    def resolved_grad_mode(self) -> str:
        return self.grad_mode or DEFAULT_GRAD_MODE[self.network]

    def resolved_lr(self) -> float:
        if self.lr > 0:
            return self.lr
        return DEFAULT_LR[(self.network, self.resolved_grad_mode())]

    def resolved_weight_decay(self) -> float:
        return self.weight_decay if self.weight_decay >= 0 else DEFAULT_WEIGHT_DECAY[self.network]

    def bit_config(self) -> BitConfig:
        modes = dict(DEFAULT_MODES)
        modes.update(self.modes)
        if self.quant == "none":
            modes = {o: "off" for o in DEFAULT_MODES}
        return BitConfig(modes=modes, **self.bits)

    def with_(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)

    def to_text(self) -> str:
        """Flat text with defaults resolved; reading it back reproduces the run."""
        resolved = {"grad_mode": self.resolved_grad_mode(), "lr": self.resolved_lr(),
                    "weight_decay": self.resolved_weight_decay()}
        lines = []
        for f in fields(self):
            if f.name in ("bits", "modes"):
                continue
            v = getattr(self, f.name)
            if f.name in resolved:
                v = resolved[f.name]
            if f.name == "channels":
                v = ",".join(str(c) for c in v)
            lines.append(f"{f.name} = {v}")
        bc = self.bit_config()
        for obj in DEFAULT_MODES:
            lines.append(f"k_{obj} = {bc.bits(obj)}")
        for obj in DEFAULT_MODES:
            lines.append(f"mode_{obj} = {bc.mode(obj)}")
        return "\n".join(lines) + "\n"


# lr tuned per (network, gradient mode) at desk scale; see README
DEFAULT_LR = {
    ("toy_fcn", "abandon_scale"): 0.01,
    ("toy_fcn", "preserve_scale"): 0.01,
    ("toy_bn_net", "preserve_scale"): 0.1,
    ("toy_bn_net", "abandon_scale"): 0.1,
}


def _coerce(name, raw: str):
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    t = types[name]
    raw = raw.strip()
    if t == "int":
        return int(raw)
    if t == "float":
        return float(raw)
    if t == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: not a boolean: {raw!r}")
    if t == "tuple":
        return tuple(int(x) for x in raw.split(","))
    return raw


def parse_pairs(pairs) -> dict:
    """Turn (key, raw value) pairs into ExperimentConfig keyword arguments."""
    known = {f.name for f in fields(ExperimentConfig)} - {"bits", "modes"}
    kw, bits, modes = {}, {}, {}
    for key, raw in pairs:
        key = key.strip().replace("-", "_")
        if key.startswith("k_") and key[2:] in DEFAULT_MODES:
            bits[key] = int(raw)
        elif key.startswith("mode_") and key[5:] in DEFAULT_MODES:
            modes[key[5:]] = raw.strip()
        elif key in known:
            kw[key] = _coerce(key, raw)
        else:
            raise ValueError(f"unknown config key {key!r}")
    if bits:
        kw["bits"] = bits
    if modes:
        kw["modes"] = modes
    return kw


def read_config_file(path) -> dict:
    pairs = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected 'key = value'")
        k, v = line.split("=", 1)
        pairs.append((k, v))
    return parse_pairs(pairs)


def load_config(path=None, **overrides) -> ExperimentConfig:
    kw = read_config_file(path) if path else {}
    for key in ("bits", "modes"):
        if key in overrides:
            merged = dict(kw.get(key, {}))
            merged.update(overrides.pop(key))
            kw[key] = merged
    kw.update(overrides)
    return ExperimentConfig(**kw)
