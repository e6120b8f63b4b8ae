"""Batch normalization with an L1 (mean absolute deviation) variance.

Normalizes with ``(x - mu) / (sigma + eps)`` where ``sigma`` is the mean of
``|x - mu|`` per channel, so no square or square root is ever taken. The
statistics, the affine terms and the normalized output are each quantized
according to the ``BitConfig`` passed in.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .quant import BitConfig, quant_step, quantize

_AXES = (0, 2, 3)


def _bc(v):
    return v[None, :, None, None]


@dataclass
class BNBatchStats:
    mu: np.ndarray
    sigma: np.ndarray
    m: int


@dataclass
class BNState:
    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.9
    running_mu: np.ndarray | None = None
    running_sigma: np.ndarray | None = None
    stop_stats_grad: bool = False
    cache: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not 0 < self.momentum < 1:
            raise ValueError("momentum must be in (0, 1)")
        c = self.gamma.shape[0]
        if self.running_mu is None:
            self.running_mu = np.zeros(c)
        if self.running_sigma is None:
            self.running_sigma = np.ones(c)

    @classmethod
    def create(cls, channels: int, **kw) -> "BNState":
        return cls(gamma=np.ones(channels), beta=np.zeros(channels), **kw)

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


def batch_stats(x) -> BNBatchStats:
    n, c, h, w = x.shape
    m = n * h * w
    if m == 0:
        raise ValueError("L1BN: empty batch")
    mu = x.mean(axis=_AXES)
    sigma = np.abs(x - _bc(mu)).mean(axis=_AXES)
    return BNBatchStats(mu, sigma, m)


def l1bn_forward(x, state: BNState, cfg: BitConfig, training: bool = True, probe=None):
    if x.ndim != 4 or x.shape[1] != state.channels:
        raise ValueError(f"L1BN: input shape {x.shape} does not match {state.channels} channels")
    if training:
        st = batch_stats(x)
        mu_raw, sigma_raw = st.mu, st.sigma
        a = 1.0 - state.momentum
        state.running_mu = state.momentum * state.running_mu + a * mu_raw
        state.running_sigma = state.momentum * state.running_sigma + a * sigma_raw
    else:
        if x.size == 0:
            raise ValueError("L1BN: empty batch")
        mu_raw, sigma_raw = state.running_mu, state.running_sigma
    mu_q = quantize(mu_raw, "mu", cfg).values
    sigma_q = quantize(sigma_raw, "sigma", cfg).values
    gamma_q = quantize(state.gamma, "gamma", cfg).values
    beta_q = quantize(state.beta, "beta", cfg).values

    centered = x - _bc(mu_q)
    denom = sigma_q + state.eps
    xhat = centered / _bc(denom)
    xhat_q = quantize(xhat, "xhat", cfg).values
    y = _bc(gamma_q) * xhat_q + _bc(beta_q)
    if probe is not None:
        probe.update(mu=mu_raw, sigma=sigma_raw, gamma=state.gamma, beta=state.beta, xhat=xhat)
    if training:
        # sign is taken against the unquantized batch mean that defined sigma
        sign = np.sign(x - _bc(mu_raw))
        state.cache = (centered, sign, denom, xhat_q, gamma_q)
    return y


def l1bn_backward(grad_y, state: BNState, cfg: BitConfig, probe=None):
    """Return (grad_x, grad_gamma, grad_beta), all unquantized except E2 at entry.

    The incoming error is quantized (E2) first; quantizers on the forward
    path are passed straight through.
    """
    if state.cache is None:
        raise ValueError("l1bn_backward: no forward cache")
    centered, sign, denom, xhat_q, gamma_q = state.cache
    if probe is not None:
        probe["E2"] = grad_y
    g = quantize(grad_y, "E2", cfg).values
    grad_gamma = (g * xhat_q).sum(axis=_AXES)
    grad_beta = g.sum(axis=_AXES)
    g_xhat = g * _bc(gamma_q)
    inv = 1.0 / _bc(denom)
    if state.stop_stats_grad:
        return g_xhat * inv, grad_gamma, grad_beta
    m = g.shape[0] * g.shape[2] * g.shape[3]
    # d loss / d sigma, then d loss / d mu including the path through sigma
    d_sigma = -(g_xhat * centered).sum(axis=_AXES) / denom ** 2
    d_mu = -(g_xhat.sum(axis=_AXES)) / denom - d_sigma * sign.mean(axis=_AXES)
    grad_x = g_xhat * inv + _bc(d_sigma) * sign / m + _bc(d_mu) / m
    return grad_x, grad_gamma, grad_beta


def affine_bound(k: int) -> float:
    """Largest magnitude gamma/beta may take on the constant-2 grid."""
    return 2.0 * (1.0 - quant_step(k))
