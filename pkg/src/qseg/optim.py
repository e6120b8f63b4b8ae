"""Plain SGD with a quantized learning rate and grid-valued updates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quant import _uq, quant_step


@dataclass(frozen=True)
class Schedule:
    lr0: float
    halving_period: int = 2000
    k_U: int | None = 24  # None: lr kept at full precision

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")
        if self.halving_period < 1:
            raise ValueError(f"halving_period must be >= 1, got {self.halving_period}")


def quantized_lr(schedule: Schedule, step: int) -> float:
    if step < 0:
        raise ValueError("step must be >= 0")
    lr = schedule.lr0 if schedule.k_U is None else float(_uq(schedule.lr0, schedule.k_U))
    if lr <= 0:
        raise ValueError(f"lr0={schedule.lr0} quantizes to zero at k_U={schedule.k_U}")
    # power-of-two halving is exact in binary floating point
    return float(np.ldexp(lr, -(step // schedule.halving_period)))


def apply_update(master, grad_q, lr: float, k_U: int | None, scale: float = 1.0):
    """Return ``master - UQ(grad_q * lr)``, clipped to the update grid range.

    ``scale`` selects the grid: 1 for weights, 2 for the constant-2 grid
    holding BN's gamma/beta. ``k_U=None`` performs an unquantized SGD step.
    """
    g = np.asarray(grad_q, dtype=np.float64)
    if k_U is None:
        return master - lr * g
    delta = scale * _uq(g * lr / scale, k_U)
    bound = scale * (1.0 - quant_step(k_U))
    return np.clip(master - delta, -bound, bound)


def weight_decay(grad, w_q, lam: float):
    """Fold an L2 penalty into the raw gradient, before gradient quantization."""
    if lam < 0:
        raise ValueError("weight decay must be >= 0")
    if lam == 0:
        return grad
    return grad + lam * w_q
