"""Synthetic shape-segmentation data and its binary file format.

Each image is a textured background with 1-4 filled shapes (circle,
rectangle, triangle). Class 0 is background; shape class ``c`` uses shape
kind ``(c - 1) % 3`` and a class-specific base colour with per-shape jitter.

File layout (little endian)::

    magic    8s   b"QSEGDATA"
    version  u16
    classes  u16
    count    u32
    seed     u64
    payload  u64  bytes that follow the header
    count x [id u32, C u16, H u16, W u16, image f32[C*H*W], mask u8[H*W]]
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import Rng

MAGIC = b"QSEGDATA"
VERSION = 1
_HEADER = struct.Struct("<8sHHIQQ")
_SAMPLE = struct.Struct("<IHHH")

SHAPE_KINDS = ("circle", "rectangle", "triangle")

# rough base hues per shape class; cycled when there are more classes
_BASE_COLOURS = np.array([
    [0.8, -0.3, -0.3],
    [-0.3, 0.7, -0.2],
    [-0.2, -0.2, 0.8],
    [0.7, 0.7, -0.4],
    [0.6, -0.4, 0.7],
    [-0.4, 0.6, 0.6],
])


class DatasetFormatError(ValueError):
    pass


@dataclass
class SegSample:
    image: np.ndarray  # C x H x W, float32 in [-1, 1]
    mask: np.ndarray  # H x W, uint8 class indices
    id: int
    shapes: list = field(default_factory=list)


@dataclass
class SegDataset:
    images: np.ndarray  # N x C x H x W float32
    masks: np.ndarray  # N x H x W uint8
    ids: np.ndarray
    n_classes: int
    seed: int = 0
    shapes: list | None = None  # per-sample shape parameters (generation only)

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, i) -> SegSample:
        return SegSample(self.images[i], self.masks[i], int(self.ids[i]),
                         self.shapes[i] if self.shapes else [])

    def subset(self, idx) -> "SegDataset":
        idx = np.asarray(idx)
        shapes = [self.shapes[i] for i in idx] if self.shapes else None
        return SegDataset(self.images[idx], self.masks[idx], self.ids[idx],
                          self.n_classes, self.seed, shapes)


def shape_membership(kind: str, params: dict, rows, cols):
    """Boolean membership of pixel coordinates in a shape."""
    if kind == "circle":
        return (rows - params["cy"]) ** 2 + (cols - params["cx"]) ** 2 <= params["r"] ** 2
    if kind == "rectangle":
        return ((rows >= params["y0"]) & (rows <= params["y1"])
                & (cols >= params["x0"]) & (cols <= params["x1"]))
    if kind == "triangle":
        (ay, ax), (by, bx), (cy, cx) = params["pts"]

        def edge(py, px, qy, qx):
            return (qx - px) * (rows - py) - (qy - py) * (cols - px)

        d1, d2, d3 = edge(ay, ax, by, bx), edge(by, bx, cy, cx), edge(cy, cx, ay, ax)
        neg = (d1 < 0) | (d2 < 0) | (d3 < 0)
        pos = (d1 > 0) | (d2 > 0) | (d3 > 0)
        return ~(neg & pos)
    raise ValueError(f"unknown shape kind {kind!r}")


def _random_shape(rng: Rng, kind: str, size: int) -> dict:
    lo, hi = size // 10, size // 4
    if kind == "circle":
        r = float(rng.integers(lo, hi + 1))
        return {"cy": float(rng.integers(0, size)), "cx": float(rng.integers(0, size)), "r": r}
    if kind == "rectangle":
        h, w = rng.integers(2 * lo, 2 * hi + 1, size=2)
        y0, x0 = rng.integers(-h // 2, size - h // 2, size=2)
        return {"y0": int(y0), "x0": int(x0), "y1": int(y0 + h), "x1": int(x0 + w)}
    # triangle: three vertices around a centre, rejecting slivers
    while True:
        cy, cx = rng.integers(0, size, size=2)
        rad = rng.integers(lo + 2, hi + 3)
        ang = np.sort(rng.uniform(3, 0.0, 2 * np.pi))
        pts = [(float(cy + rad * np.sin(a)), float(cx + rad * np.cos(a))) for a in ang]
        (ay, ax), (by, bx), (qy, qx) = pts
        area = 0.5 * abs((bx - ax) * (qy - ay) - (by - ay) * (qx - ax))
        if area >= 0.6 * rad * rad:
            return {"pts": pts}


def _texture(rng: Rng, size: int) -> np.ndarray:
    coarse = rng.uniform((3, size // 8 + 1, size // 8 + 1), -0.35, 0.35)
    up = np.kron(coarse, np.ones((8, 8)))[:, :size, :size]
    return up + rng.normal((3, size, size), 0.0, 0.12)


def make_sample(seed: int, sample_id: int, size: int, n_classes: int) -> SegSample:
    rng = Rng(seed).split(sample_id)
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    image = _texture(rng, size)
    mask = np.zeros((size, size), dtype=np.uint8)
    shapes = []
    for _ in range(int(rng.integers(1, 5))):
        cls = int(rng.integers(1, n_classes))
        kind = SHAPE_KINDS[(cls - 1) % len(SHAPE_KINDS)]
        params = _random_shape(rng, kind, size)
        inside = shape_membership(kind, params, rows, cols)
        if not inside.any():
            continue
        colour = _BASE_COLOURS[(cls - 1) % len(_BASE_COLOURS)] + rng.uniform(3, -0.25, 0.25)
        shade = colour[:, None, None] + rng.normal((3, size, size), 0.0, 0.08)
        image = np.where(inside[None], shade, image)
        mask[inside] = cls
        shapes.append({"kind": kind, "cls": cls, **params})
    image = np.clip(image, -1.0, 1.0).astype(np.float32)
    return SegSample(image, mask, sample_id, shapes)


def generate_shapes(seed: int, n_samples: int, size: int = 64, n_classes: int = 4) -> SegDataset:
    if size < 32:
        raise ValueError(f"image size must be >= 32, got {size}")
    if n_classes < 2:
        raise ValueError("need at least 2 classes (background + one shape)")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    samples = [make_sample(seed, i, size, n_classes) for i in range(n_samples)]
    return SegDataset(
        images=np.stack([s.image for s in samples]),
        masks=np.stack([s.mask for s in samples]),
        ids=np.arange(n_samples, dtype=np.int64),
        n_classes=n_classes,
        seed=seed,
        shapes=[s.shapes for s in samples],
    )


def save_dataset(ds: SegDataset, path) -> None:
    path = Path(path)
    n, c, h, w = ds.images.shape
    per = _SAMPLE.size + 4 * c * h * w + h * w
    chunks = [_HEADER.pack(MAGIC, VERSION, ds.n_classes, n, ds.seed, n * per)]
    for i in range(n):
        chunks.append(_SAMPLE.pack(int(ds.ids[i]), c, h, w))
        chunks.append(ds.images[i].astype("<f4").tobytes())
        chunks.append(ds.masks[i].astype(np.uint8).tobytes())
    path.write_bytes(b"".join(chunks))
    manifest = path.with_name(path.name + ".manifest")
    manifest.write_text(
        f"format=qseg-dataset\nversion={VERSION}\nseed={ds.seed}\nsamples={n}\n"
        f"channels={c}\nheight={h}\nwidth={w}\nclasses={ds.n_classes}\n"
    )


def load_dataset(path) -> SegDataset:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise DatasetFormatError(f"{path}: truncated header")
    magic, version, n_classes, n, seed, payload = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    if len(buf) - _HEADER.size != payload:
        raise DatasetFormatError(
            f"{path}: payload is {len(buf) - _HEADER.size} bytes, header declares {payload}")
    off = _HEADER.size
    images, masks, ids = [], [], []
    for _ in range(n):
        if off + _SAMPLE.size > len(buf):
            raise DatasetFormatError(f"{path}: truncated sample header")
        sid, c, h, w = _SAMPLE.unpack_from(buf, off)
        off += _SAMPLE.size
        nb = 4 * c * h * w + h * w
        if off + nb > len(buf):
            raise DatasetFormatError(f"{path}: truncated sample {sid}")
        images.append(np.frombuffer(buf, "<f4", c * h * w, off).reshape(c, h, w).astype(np.float32))
        masks.append(np.frombuffer(buf, np.uint8, h * w, off + 4 * c * h * w).reshape(h, w).copy())
        ids.append(sid)
        off += nb
    if off != len(buf):
        raise DatasetFormatError(f"{path}: {len(buf) - off} trailing bytes")
    return SegDataset(np.stack(images), np.stack(masks), np.array(ids, dtype=np.int64),
                      n_classes, seed)


def crop_batch(ds: SegDataset, batch_size: int, crop: int, rng: Rng):
    """Random aligned crops; returns float64 images (B,C,crop,crop) and int64 masks."""
    n, c, h, w = ds.images.shape
    if crop > h or crop > w:
        raise ValueError(f"crop {crop} larger than samples {h}x{w}")
    idx = rng.integers(0, n, size=batch_size)
    ys = rng.integers(0, h - crop + 1, size=batch_size)
    xs = rng.integers(0, w - crop + 1, size=batch_size)
    images = np.empty((batch_size, c, crop, crop))
    masks = np.empty((batch_size, crop, crop), dtype=np.int64)
    for b, (i, y, x) in enumerate(zip(idx, ys, xs)):
        images[b] = ds.images[i, :, y:y + crop, x:x + crop]
        masks[b] = ds.masks[i, y:y + crop, x:x + crop]
    return images, masks
