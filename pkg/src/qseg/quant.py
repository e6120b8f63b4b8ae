"""Fixed-point quantizers and the bit-width configuration.

Every quantizer maps onto the symmetric grid ``{n * step(k)}`` clipped to
``[-1 + step, 1 - step]``, optionally wrapped by a scale factor:

* ``uniform_quantize``    -- deterministic round-half-up onto the grid
* ``scale_quantize``      -- divide by max|x|, quantize, multiply back
* ``stochastic_quantize`` -- unbiased random rounding onto the grid
* ``constant2_quantize``  -- fixed scale of 2 for BN statistics/affine terms
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

MODES = ("off", "uniform", "scale", "stochastic", "constant2")

# bit-width attribute -> default quantizer for that object
DEFAULT_MODES = {
    "W": "uniform",
    "A": "scale",
    "E1": "scale",
    "E2": "scale",
    "G": "stochastic",
    "U": "uniform",
    "mu": "constant2",
    "sigma": "constant2",
    "xhat": "scale",
    "gamma": "constant2",
    "beta": "constant2",
}


def quant_step(k: int) -> float:
    """Smallest grid increment for bit-width ``k``: 2**(1 - k)."""
    if int(k) != k or k < 2:
        raise ValueError(f"bit-width must be an integer >= 2, got {k}")
    return 2.0 ** (1 - int(k))


@dataclass(frozen=True)
class QTensor:
    values: np.ndarray
    k: int
    scale: float = 1.0

    def indices(self) -> np.ndarray:
        """Integer grid index of every element (values / scale / step)."""
        return np.rint(self.values / self.scale / quant_step(self.k)).astype(np.int64)


def _clip(x, k):
    d = quant_step(k)
    return np.clip(x, -1.0 + d, 1.0 - d)


def _round_half_up(y):
    # floor(y + 1/2) without the rounding error of the float addition
    f = np.floor(y)
    return f + ((y - f) >= 0.5)


def _uq(x, k):
    d = quant_step(k)
    return _clip(d * _round_half_up(np.asarray(x, dtype=np.float64) / d), k)


def uniform_quantize(x, k: int) -> QTensor:
    return QTensor(_uq(x, k), int(k), 1.0)


def scale_factor(x) -> float:
    """max |x|, or 1.0 for an all-zero tensor."""
    m = float(np.max(np.abs(x))) if np.size(x) else 0.0
    return m if m > 0 else 1.0


def scale_quantize(x, k: int) -> QTensor:
    s = scale_factor(x)
    return QTensor(s * _uq(np.asarray(x, dtype=np.float64) / s, k), int(k), s)


def stochastic_round(x, rng) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    f = np.floor(x)
    return f + (rng.uniform(x.shape) < (x - f))


def stochastic_quantize(x, k: int, rng) -> QTensor:
    d = quant_step(k)
    return QTensor(_clip(d * stochastic_round(np.asarray(x, dtype=np.float64) / d, rng), k), int(k), 1.0)


def constant2_quantize(x, k: int) -> QTensor:
    return QTensor(2.0 * _uq(np.asarray(x, dtype=np.float64) / 2.0, k), int(k), 2.0)


@dataclass(frozen=True)
class FailureModeReport:
    mode: str
    fraction_below_step: float
    fraction_clipped: float


def classify_distribution(x, k: int, concentrated: float = 0.99,
                          clipped: float = 0.01) -> FailureModeReport:
    """Check a raw tensor against the two failure modes of plain uniform quantization."""
    a = np.abs(np.asarray(x, dtype=np.float64)).ravel()
    if a.size == 0:
        raise ValueError("classify_distribution: empty tensor")
    d = quant_step(k)
    below = float(np.mean(a < d))
    over = float(np.mean(a > 1.0 - d))
    is_conc = below > concentrated
    is_clip = over > clipped
    mode = {(False, False): "none", (True, False): "concentrated",
            (False, True): "clipped", (True, True): "both"}[(is_conc, is_clip)]
    return FailureModeReport(mode, below, over)


@dataclass(frozen=True)
class BitConfig:
    """Bit-widths of every quantized object plus the quantizer used for each.

    ``modes`` maps an object name (W, A, E1, E2, G, U, mu, sigma, xhat,
    gamma, beta) to one of ``MODES``; "off" leaves the object at full
    precision.
    """

    k_W: int = 8
    k_A: int = 8
    k_E1: int = 8
    k_E2: int = 16
    k_G: int = 8
    k_U: int = 24
    k_mu: int = 16
    k_sigma: int = 16
    k_xhat: int = 16
    k_gamma: int = 8
    k_beta: int = 8
    modes: dict = field(default_factory=lambda: dict(DEFAULT_MODES))

    def __post_init__(self):
        for f in fields(self):
            if f.name.startswith("k_"):
                v = getattr(self, f.name)
                if int(v) != v or not 2 <= v <= 32:
                    raise ValueError(f"{f.name}={v} outside [2, 32]")
        unknown = set(self.modes) - set(DEFAULT_MODES)
        if unknown:
            raise ValueError(f"unknown quantization objects: {sorted(unknown)}")
        for obj, m in self.modes.items():
            if m not in MODES:
                raise ValueError(f"mode for {obj} must be one of {MODES}, got {m!r}")
        if self.on("W") and self.on("U") and self.k_U <= self.k_W:
            raise ValueError(f"k_U ({self.k_U}) must exceed k_W ({self.k_W})")

    def mode(self, obj: str) -> str:
        return self.modes.get(obj, DEFAULT_MODES[obj])

    def on(self, obj: str) -> bool:
        return self.mode(obj) != "off"

    def bits(self, obj: str) -> int:
        return getattr(self, "k_" + obj)

    @classmethod
    def full_precision(cls, **widths) -> "BitConfig":
        return cls(modes={o: "off" for o in DEFAULT_MODES}, **widths)

    def with_modes(self, **modes) -> "BitConfig":
        m = dict(self.modes)
        m.update(modes)
        return replace(self, modes=m)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name.startswith("k_")}
        d["modes"] = {o: self.mode(o) for o in DEFAULT_MODES}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BitConfig":
        return cls(**d)


def quantize(x, obj: str, cfg: BitConfig, rng=None) -> QTensor:
    """Apply the configured quantizer for object ``obj`` to ``x``."""
    mode = cfg.mode(obj)
    k = cfg.bits(obj)
    if mode == "off":
        return QTensor(np.asarray(x, dtype=np.float64), k, 1.0)
    if mode == "uniform":
        return uniform_quantize(x, k)
    if mode == "scale":
        return scale_quantize(x, k)
    if mode == "constant2":
        return constant2_quantize(x, k)
    if mode == "stochastic":
        if rng is None:
            raise ValueError(f"stochastic quantization of {obj} needs an rng")
        return stochastic_quantize(x, k, rng)
    raise ValueError(mode)
