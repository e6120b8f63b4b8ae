"""Quantized convolution and transposed-convolution layers.

Forward:  W_q = Q_W(master) -> conv -> [L1BN] -> [relu] -> A_out = Q_A(.)
Backward: E_in -> relu mask -> [L1BN, E2 quantized at entry] -> conv backward
          -> error_out = Q_E1(grad_input), weight_grad = Q_G(grad_kernel)
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .l1bn import BNState, l1bn_backward, l1bn_forward
from .optim import weight_decay as _weight_decay
from .quant import BitConfig, QTensor, _uq, quantize, scale_factor

GRAD_MODES = ("preserve_scale", "abandon_scale")


def init_msra(shape, rng: T.Rng, k_U: int | None) -> np.ndarray:
    """He-normal init (std = sqrt(2 / fan_in)) snapped onto the k_U grid.

    fan_in is ``shape[1] * kh * kw``, i.e. input channels of a conv kernel
    (OIHW) or output channels of a transposed-conv kernel.
    """
    fan_in = int(np.prod(shape[1:]))
    w = T.normal_rand(rng, shape, 0.0, math.sqrt(2.0 / fan_in))
    return w if k_U is None else _uq(w, k_U)


def bilinear_kernel(kernel_size: int) -> np.ndarray:
    if kernel_size < 2:
        raise ValueError("bilinear kernel needs kernel_size >= 2")
    f = (kernel_size + 1) // 2
    center = f - 1 if kernel_size % 2 == 1 else f - 0.5
    og = np.arange(kernel_size)
    row = 1.0 - np.abs(og - center) / f
    return np.outer(row, row)


def init_bilinear(kernel_size: int, channels: int, k_U: int | None) -> np.ndarray:
    """Channel-diagonal bilinear upsampling kernel, shape (C, C, k, k)."""
    w = np.zeros((channels, channels, kernel_size, kernel_size))
    w[range(channels), range(channels)] = bilinear_kernel(kernel_size)
    return w if k_U is None else _uq(w, k_U)


@dataclass
class LayerGrads:
    error_out: QTensor | None
    weight_grad: QTensor
    raw_scale: float  # Scale(G) of the raw weight gradient
    raw_grad: np.ndarray | None = None
    grad_gamma: np.ndarray | None = None
    grad_beta: np.ndarray | None = None


@dataclass
class QLayer:
    name: str
    kind: str  # "conv" | "deconv"
    weights: np.ndarray  # master weights, on the k_U grid when updates are quantized
    stride: int = 1
    padding: int = 0
    grad_mode: str = "preserve_scale"
    relu: bool = True
    bn: BNState | None = None
    part: str = "encoder"
    quantized: bool = True
    cache: dict | None = field(default=None, repr=False)
    probe: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("conv", "deconv"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.grad_mode not in GRAD_MODES:
            raise ValueError(f"grad_mode must be one of {GRAD_MODES}")
        if self.weights.ndim != 4:
            raise ValueError("weights must be 4-D")

    @property
    def has_bn(self) -> bool:
        return self.bn is not None

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1] if self.kind == "conv" else self.weights.shape[0]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0] if self.kind == "conv" else self.weights.shape[1]

    def n_params(self) -> int:
        n = self.weights.size
        if self.bn is not None:
            n += 2 * self.bn.channels
        return n


def effective_cfg(layer: QLayer, cfg: BitConfig) -> BitConfig:
    return cfg if layer.quantized else BitConfig.full_precision()


def qlayer_forward(layer: QLayer, a_in, cfg: BitConfig, training: bool = True) -> QTensor:
    cfg = effective_cfg(layer, cfg)
    x = a_in.values if isinstance(a_in, QTensor) else np.asarray(a_in, dtype=np.float64)
    if x.ndim != 4 or x.shape[1] != layer.in_channels:
        raise ValueError(f"{layer.name}: input shape {x.shape} does not match "
                         f"{layer.in_channels} input channels")
    w_q = quantize(layer.weights, "W", cfg).values
    if layer.kind == "conv":
        z = T.conv2d(x, w_q, layer.stride, layer.padding)
    else:
        z = T.deconv2d(x, w_q, layer.stride, layer.padding)
    pre_bn = z
    if layer.bn is not None:
        z = l1bn_forward(z, layer.bn, cfg, training, probe=layer.probe)
    pre_relu = z
    if layer.relu:
        z = T.relu(z)
    out = quantize(z, "A", cfg)
    if layer.probe is not None:
        layer.probe.update(W=layer.weights, A=z)
    if training:
        layer.cache = {"x": x, "w_q": w_q, "pre_bn": pre_bn, "pre_relu": pre_relu}
    return out


def quantize_grad(g, mode: str, cfg: BitConfig, rng) -> QTensor:
    """Gradient quantizer: stochastic rounding after per-layer scaling.

    preserve_scale multiplies the scale back in; abandon_scale keeps only
    the normalized direction. The normalization applies even when G
    rounding is off, since it is a property of the update rule.
    """
    s = scale_factor(g)
    if not cfg.on("G"):
        if mode == "preserve_scale":
            return QTensor(np.asarray(g, dtype=np.float64), cfg.k_G, s)
        return QTensor(g / s, cfg.k_G, 1.0)
    q = quantize(g / s, "G", cfg, rng)
    if mode == "preserve_scale":
        return QTensor(s * q.values, q.k, s)
    return q


def qlayer_backward(layer: QLayer, e_in, cfg: BitConfig, rng, need_input_grad: bool = True,
                    weight_decay: float = 0.0) -> LayerGrads:
    if layer.cache is None:
        raise ValueError(f"{layer.name}: backward called without a forward cache")
    cfg = effective_cfg(layer, cfg)
    c = layer.cache
    g = e_in.values if isinstance(e_in, QTensor) else np.asarray(e_in, dtype=np.float64)
    if layer.relu:
        g = T.relu_backward(g, c["pre_relu"])
    grad_gamma = grad_beta = None
    if layer.bn is not None:
        g, grad_gamma, grad_beta = l1bn_backward(g, layer.bn, cfg, probe=layer.probe)
    cache = (c["x"], c["w_q"], layer.stride, layer.padding)
    if layer.kind == "conv":
        grad_in, grad_w = T.conv2d_backward(g, cache, need_input_grad)
    else:
        grad_in, grad_w = T.deconv2d_backward(g, cache, need_input_grad)
    grad_w = _weight_decay(grad_w, c["w_q"], weight_decay)
    if layer.probe is not None:
        layer.probe["G"] = grad_w
        if grad_in is not None:
            layer.probe["E1"] = grad_in
    error_out = quantize(grad_in, "E1", cfg) if need_input_grad else None
    wg = quantize_grad(grad_w, layer.grad_mode, cfg, rng)
    return LayerGrads(error_out, wg, scale_factor(grad_w), grad_w, grad_gamma, grad_beta)
