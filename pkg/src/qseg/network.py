"""Toy encoder-decoder segmentation networks built from quantized layers.

Both architectures share one topology (input H must be divisible by 16)::

    enc1..enc4   3x3 conv [+ L1BN] + relu, each followed by 2x2 max-pool
    score        1x1 conv on enc4 output              -> C maps at H/16
    score_skip   1x1 conv on enc3 output              -> C maps at H/8
    up2          4x4 stride-2 deconv of score         -> H/8
    fuse         up2 + score_skip (re-quantized)
    up8          16x16 stride-8 deconv of fuse        -> C logits at H

``toy_fcn`` has no BN, MSRA encoder/score init and bilinear decoders;
``toy_bn_net`` adds L1BN after every encoder conv and uses MSRA everywhere.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .l1bn import BNState
from .layers import QLayer, init_bilinear, init_msra, qlayer_backward, qlayer_forward
from .optim import apply_update
from .quant import BitConfig, QTensor, quantize

ARCHITECTURES = ("toy_fcn", "toy_bn_net")
DEFAULT_GRAD_MODE = {"toy_fcn": "abandon_scale", "toy_bn_net": "preserve_scale"}
DEFAULT_LOSS = {"toy_fcn": "mse", "toy_bn_net": "xent"}
DEFAULT_CHANNELS = (8, 16, 32, 32)

ENCODER = ("enc1", "enc2", "enc3", "enc4")
DECODER = ("score", "score_skip", "up2", "up8")


@dataclass
class Network:
    arch: str
    n_classes: int
    layers: dict  # name -> QLayer, in forward order
    loss: str
    quantize_skip: bool = True
    cache: dict = field(default_factory=dict, repr=False)

    def n_params(self) -> int:
        return sum(l.n_params() for l in self.layers.values())

    def probes(self, on: bool = True):
        for l in self.layers.values():
            l.probe = {} if on else None


def build_network(arch: str, n_classes: int = 4, in_channels: int = 3, seed: int = 0,
                  grad_mode: str | None = None, k_U: int | None = 24,
                  channels=DEFAULT_CHANNELS, loss: str | None = None,
                  quantize_skip: bool = True) -> Network:
    if arch not in ARCHITECTURES:
        raise ValueError(f"unknown network {arch!r}; choose from {ARCHITECTURES}")
    grad_mode = grad_mode or DEFAULT_GRAD_MODE[arch]
    rng = T.Rng(seed).split(0xC0FFEE)
    with_bn = arch == "toy_bn_net"
    c = n_classes
    layers = {}
    prev = in_channels
    for i, (name, width) in enumerate(zip(ENCODER, channels)):
        w = init_msra((width, prev, 3, 3), rng.split(i), k_U)
        bn = BNState.create(width) if with_bn else None
        layers[name] = QLayer(name, "conv", w, 1, 1, grad_mode, relu=True, bn=bn, part="encoder")
        prev = width
    layers["score"] = QLayer("score", "conv", init_msra((c, channels[3], 1, 1), rng.split(10), k_U),
                             grad_mode=grad_mode, relu=False, part="decoder")
    layers["score_skip"] = QLayer("score_skip", "conv",
                                  init_msra((c, channels[2], 1, 1), rng.split(11), k_U),
                                  grad_mode=grad_mode, relu=False, part="decoder")
    for j, (name, k, s, p) in enumerate((("up2", 4, 2, 1), ("up8", 16, 8, 4))):
        if with_bn:
            w = init_msra((c, c, k, k), rng.split(20 + j), k_U)
        else:
            w = init_bilinear(k, c, k_U)
        layers[name] = QLayer(name, "deconv", w, s, p, grad_mode, relu=False, part="decoder")
    return Network(arch, n_classes, layers, loss or DEFAULT_LOSS[arch], quantize_skip)


def forward(net: Network, images, cfg: BitConfig, training: bool = True) -> np.ndarray:
    """Return logits (N, C, H, W) at full resolution."""
    x = np.asarray(images, dtype=np.float64)
    if x.ndim != 4 or x.shape[2] % 16 or x.shape[3] % 16:
        raise ValueError(f"input must be NCHW with H, W divisible by 16, got {x.shape}")
    L = net.layers
    pools = []
    a = x
    skip = None
    for name in ENCODER:
        a = qlayer_forward(L[name], a, cfg, training)
        pooled, pc = T.maxpool2d(a.values)
        pools.append(pc)
        a = QTensor(pooled, a.k, a.scale)
        if name == "enc3":
            skip = a
    s = qlayer_forward(L["score"], a, cfg, training)
    up = qlayer_forward(L["up2"], s, cfg, training)
    sk = qlayer_forward(L["score_skip"], skip, cfg, training)
    fused = T.add(up.values, sk.values)
    if net.quantize_skip and L["up8"].quantized:
        fused = quantize(fused, "A", cfg).values
    logits = qlayer_forward(L["up8"], fused, cfg, training).values
    if training:
        net.cache = {"pools": pools}
    return logits


def loss_and_grad(net: Network, logits, masks, ignore_label: int = 255):
    """Mean loss over valid pixels and its gradient w.r.t. the logits."""
    n, c, h, w = logits.shape
    valid = masks != ignore_label
    nvalid = max(int(valid.sum()), 1)
    safe = np.where(valid, masks, 0)
    onehot = np.zeros_like(logits)
    np.put_along_axis(onehot, safe[:, None], 1.0, axis=1)
    vm = valid[:, None].astype(np.float64)
    if net.loss == "mse":
        diff = (logits - onehot) * vm
        loss = float((diff ** 2).sum() / (nvalid * c))
        grad = 2.0 * diff / (nvalid * c)
    elif net.loss == "xent":
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        loss = float(-(logp * onehot * vm).sum() / nvalid)
        grad = (np.exp(logp) - onehot) * vm / nvalid
    else:
        raise ValueError(f"unknown loss {net.loss!r}")
    return loss, grad


def backward(net: Network, grad_logits, cfg: BitConfig, rng: T.Rng, weight_decay: float = 0.0):
    """Backpropagate a loss gradient; returns {layer name: LayerGrads}."""
    L = net.layers
    order = list(L)
    keys = {name: i for i, name in enumerate(order)}

    def bw(name, e, need=True):
        return qlayer_backward(L[name], e, cfg, rng.split(keys[name]), need, weight_decay)

    grads = {}
    e = quantize(grad_logits, "E1", cfg if L["up8"].quantized else BitConfig.full_precision())
    grads["up8"] = bw("up8", e)
    e_fused = grads["up8"].error_out
    grads["up2"] = bw("up2", e_fused)
    grads["score_skip"] = bw("score_skip", e_fused)
    grads["score"] = bw("score", grads["up2"].error_out)
    pools = net.cache["pools"]
    e_pool = grads["score"].error_out.values
    for i in range(len(ENCODER) - 1, -1, -1):
        name = ENCODER[i]
        if name == "enc3":
            e_pool = e_pool + grads["score_skip"].error_out.values
        e_act = T.maxpool2d_backward(e_pool, pools[i])
        grads[name] = bw(name, e_act, need=i > 0)
        if i > 0:
            e_pool = grads[name].error_out.values
    return grads


def apply_grads(net: Network, grads: dict, lr: float, cfg: BitConfig) -> None:
    for name, g in grads.items():
        layer = net.layers[name]
        k_U = cfg.k_U if (layer.quantized and cfg.on("U")) else None
        layer.weights = apply_update(layer.weights, g.weight_grad.values, lr, k_U)
        if layer.bn is not None:
            layer.bn.gamma = apply_update(layer.bn.gamma, g.grad_gamma, lr, k_U, scale=2.0)
            layer.bn.beta = apply_update(layer.bn.beta, g.grad_beta, lr, k_U, scale=2.0)


def predict(net: Network, images, cfg: BitConfig, batch: int = 16) -> np.ndarray:
    out = []
    for i in range(0, len(images), batch):
        logits = forward(net, images[i:i + batch], cfg, training=False)
        out.append(logits.argmax(axis=1))
    return np.concatenate(out)
