"""Dense NCHW tensor primitives on top of numpy.

Tensors are plain float64 ``numpy.ndarray`` objects in row-major NCHW
layout. Every op returns a new array; nothing here mutates its inputs.
Convolution kernels use the OIHW layout, and the transposed convolution
takes the *same* kernel as the forward convolution it is the adjoint of,
so ``deconv2d(y, k)`` maps O channels back to I channels.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


class Rng:
    """Counter-based, splittable random stream.

    Backed by the Philox bit generator. ``split(*keys)`` derives an
    independent child stream addressed by integer keys, so a stream for
    (layer, step) can be rebuilt without replaying anything else.
    """

    def __init__(self, seed: int, _keys: tuple[int, ...] = ()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.keys = tuple(int(k) for k in _keys)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.keys)
        self.gen = np.random.Generator(np.random.Philox(ss))

    def split(self, *keys: int) -> "Rng":
        return Rng(self.seed, self.keys + tuple(keys))

    def uniform(self, shape, lo=0.0, hi=1.0) -> np.ndarray:
        return self.gen.uniform(lo, hi, size=shape)

    def normal(self, shape, mean=0.0, std=1.0) -> np.ndarray:
        return self.gen.normal(mean, std, size=shape)

    def integers(self, lo, hi, size=None):
        return self.gen.integers(lo, hi, size=size)


def uniform_rand(rng: Rng, shape, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    if not lo < hi:
        raise ValueError(f"uniform_rand needs lo < hi, got [{lo}, {hi})")
    return rng.uniform(tuple(shape), lo, hi)


def normal_rand(rng: Rng, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    if not std > 0:
        raise ValueError(f"normal_rand needs std > 0, got {std}")
    return rng.normal(tuple(shape), mean, std)


def _check4(name, a):
    if a.ndim != 4:
        raise ShapeError(f"{name} must be 4-D (NCHW/OIHW), got shape {a.shape}")


def conv_out_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def deconv_out_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n - 1) * stride - 2 * padding + k


def _windows(x, kh, kw, stride, padding):
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d(x: np.ndarray, kernel: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Cross-correlation, no bias. x: NCHW, kernel: OIHW."""
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    _check4("input", x)
    _check4("kernel", kernel)
    if x.shape[1] != kernel.shape[1]:
        raise ShapeError(
            f"conv2d: input has {x.shape[1]} channels but kernel expects {kernel.shape[1]}"
        )
    kh, kw = kernel.shape[2:]
    if x.shape[2] + 2 * padding < kh or x.shape[3] + 2 * padding < kw:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {x.shape[2:]}")
    win = _windows(x, kh, kw, stride, padding)
    out = np.tensordot(win, kernel, axes=([1, 4, 5], [1, 2, 3]))  # N, Ho, Wo, O
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _scatter_taps(cols, out_hw, stride, padding):
    """Sum per-tap contributions cols[N, C, Hi, Wi, kh, kw] into an N,C,H,W image."""
    n, c, hi, wi, kh, kw = cols.shape
    h, w = out_hw
    # large enough to hold every tap before cropping the padding
    ph = max(h + 2 * padding, (hi - 1) * stride + kh)
    pw = max(w + 2 * padding, (wi - 1) * stride + kw)
    out = np.zeros((n, c, ph, pw))
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * (hi - 1) + 1:stride, j:j + stride * (wi - 1) + 1:stride] += cols[..., i, j]
    return out[:, :, padding:padding + h, padding:padding + w]


def deconv2d(y: np.ndarray, kernel: np.ndarray, stride: int = 1, padding: int = 0,
             out_hw: tuple[int, int] | None = None) -> np.ndarray:
    """Transposed convolution; the adjoint of ``conv2d`` with the same kernel.

    y: N x O x Hi x Wi, kernel: O x I x kh x kw -> N x I x H x W with
    H = (Hi-1)*stride - 2*padding + kh unless ``out_hw`` overrides it.
    """
    y = np.asarray(y, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    _check4("input", y)
    _check4("kernel", kernel)
    if y.shape[1] != kernel.shape[0]:
        raise ShapeError(
            f"deconv2d: input has {y.shape[1]} channels but kernel expects {kernel.shape[0]}"
        )
    kh, kw = kernel.shape[2:]
    if out_hw is None:
        out_hw = (deconv_out_size(y.shape[2], kh, stride, padding),
                  deconv_out_size(y.shape[3], kw, stride, padding))
    if out_hw[0] <= 0 or out_hw[1] <= 0:
        raise ShapeError(f"deconv2d: non-positive output size {out_hw}")
    cols = np.tensordot(y, kernel, axes=([1], [0]))  # N, Hi, Wi, I, kh, kw
    cols = cols.transpose(0, 3, 1, 2, 4, 5)
    return _scatter_taps(cols, out_hw, stride, padding)


def _kernel_grad(x, grad_out, kh, kw, stride, padding):
    # d<conv2d(x, k), g>/dk for a kernel of spatial size kh x kw
    win = _windows(x, kh, kw, stride, padding)
    ho, wo = grad_out.shape[2:]
    win = win[:, :, :ho, :wo]
    return np.tensordot(grad_out, win, axes=([0, 2, 3], [0, 2, 3]))  # O, I, kh, kw


def conv2d_backward(grad_out, cache, need_input_grad: bool = True):
    """Gradients of ``conv2d``. ``cache`` is (input, kernel, stride, padding).

    With ``need_input_grad=False`` the input gradient is skipped and None returned.
    """
    if cache is None:
        raise ValueError("conv2d_backward: no forward cache")
    x, kernel, stride, padding = cache
    kh, kw = kernel.shape[2:]
    expect = (x.shape[0], kernel.shape[0],
              conv_out_size(x.shape[2], kh, stride, padding),
              conv_out_size(x.shape[3], kw, stride, padding))
    if grad_out.shape != expect:
        raise ShapeError(f"conv2d_backward: grad_out shape {grad_out.shape}, expected {expect}")
    grad_in = deconv2d(grad_out, kernel, stride, padding, out_hw=x.shape[2:]) if need_input_grad else None
    grad_k = _kernel_grad(x, grad_out, kh, kw, stride, padding)
    return grad_in, grad_k


def deconv2d_backward(grad_out, cache, need_input_grad: bool = True):
    """Gradients of ``deconv2d``. ``cache`` is (input, kernel, stride, padding)."""
    if cache is None:
        raise ValueError("deconv2d_backward: no forward cache")
    y, kernel, stride, padding = cache
    kh, kw = kernel.shape[2:]
    if grad_out.shape[:2] != (y.shape[0], kernel.shape[1]):
        raise ShapeError(f"deconv2d_backward: grad_out shape {grad_out.shape} does not match")
    grad_y = None
    if need_input_grad:
        grad_y = conv2d(grad_out, kernel, stride, padding)[:, :, :y.shape[2], :y.shape[3]]
    # deconv(y, k) = conv-adjoint, so dk pairs y (as conv output) with grad_out (as conv input)
    grad_k = _kernel_grad(grad_out, y, kh, kw, stride, padding)
    return grad_y, grad_k


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(grad_out, x):
    return grad_out * (x > 0)


def maxpool2d(x, size: int = 2):
    """Non-overlapping max pooling; returns (out, argmax cache)."""
    _check4("input", x)
    n, c, h, w = x.shape
    if h % size or w % size:
        raise ShapeError(f"maxpool2d: spatial size {h}x{w} not divisible by {size}")
    blocks = x.reshape(n, c, h // size, size, w // size, size).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, h // size, w // size, size * size)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, (x.shape, size, idx)


def maxpool2d_backward(grad_out, cache):
    shape, size, idx = cache
    n, c, h, w = shape
    if grad_out.shape != idx.shape:
        raise ShapeError(f"maxpool2d_backward: grad_out shape {grad_out.shape} != {idx.shape}")
    blocks = np.zeros(idx.shape + (size * size,))
    np.put_along_axis(blocks, idx[..., None], grad_out[..., None], axis=-1)
    blocks = blocks.reshape(n, c, h // size, w // size, size, size).transpose(0, 1, 2, 4, 3, 5)
    return blocks.reshape(shape)


def add(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return a + b


def add_backward(grad_out):
    return grad_out, grad_out


def scalar_mul(a, s: float):
    return a * s


def scalar_mul_backward(grad_out, s: float):
    return grad_out * s
