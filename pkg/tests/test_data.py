import numpy as np
import pytest

from qseg.data import (DatasetFormatError, SegDataset, crop_batch, generate_shapes, load_dataset,
                       save_dataset, shape_membership)
from qseg.tensor import Rng


@pytest.fixture(scope="module")
def small():
    return generate_shapes(3, 40, 64, 4)


def test_determinism(small):
    again = generate_shapes(3, 40, 64, 4)
    np.testing.assert_array_equal(small.images, again.images)
    np.testing.assert_array_equal(small.masks, again.masks)
    other = generate_shapes(4, 40, 64, 4)
    assert not np.array_equal(small.masks, other.masks)


def test_value_ranges(small):
    assert small.images.dtype == np.float32 and small.masks.dtype == np.uint8
    assert small.images.min() >= -1 and small.images.max() <= 1
    assert small.masks.max() < 4
    for s in small.shapes:
        assert 1 <= len(s) <= 4


def test_class_coverage():
    ds = generate_shapes(0, 1000, 32, 4)
    for c in range(4):
        present = np.mean([(m == c).any() for m in ds.masks])
        assert present >= 0.2, (c, present)


def test_masks_match_geometry(small):
    rows, cols = np.mgrid[0:64, 0:64].astype(np.float64)
    for mask, shapes in zip(small.masks, small.shapes):
        ref = np.zeros((64, 64), dtype=np.uint8)
        for s in shapes:
            params = {k: v for k, v in s.items() if k not in ("kind", "cls")}
            ref[shape_membership(s["kind"], params, rows, cols)] = s["cls"]
        np.testing.assert_array_equal(mask, ref)


def test_membership_hand_cases():
    r, c = np.array([5.0, 5.0, 0.0]), np.array([5.0, 8.0, 0.0])
    assert shape_membership("circle", {"cy": 5, "cx": 5, "r": 3}, r, c).tolist() == [True, True, False]
    tri = {"pts": [(0.0, 0.0), (0.0, 10.0), (10.0, 0.0)]}
    assert shape_membership("triangle", tri, np.array([1.0, 9.0]), np.array([1.0, 9.0])).tolist() == [True, False]
    with pytest.raises(ValueError):
        shape_membership("hexagon", {}, r, c)


def test_invalid_arguments():
    with pytest.raises(ValueError):
        generate_shapes(0, 2, size=16)
    with pytest.raises(ValueError):
        generate_shapes(0, 2, n_classes=1)


def test_round_trip_and_file_size(small, tmp_path):
    p = tmp_path / "d.qsd"
    save_dataset(small, p)
    back = load_dataset(p)
    np.testing.assert_array_equal(back.images, small.images)
    np.testing.assert_array_equal(back.masks, small.masks)
    np.testing.assert_array_equal(back.ids, small.ids)
    assert back.n_classes == 4 and back.seed == 3
    n, c, h, w = small.images.shape
    assert p.stat().st_size == 32 + n * (10 + 4 * c * h * w + h * w)
    assert (tmp_path / "d.qsd.manifest").read_text().startswith("format=qseg-dataset")


def test_corrupt_files(small, tmp_path):
    p = tmp_path / "d.qsd"
    save_dataset(small.subset([0, 1]), p)
    raw = p.read_bytes()
    bad = tmp_path / "bad"
    bad.write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(DatasetFormatError, match="magic"):
        load_dataset(bad)
    bad.write_bytes(raw[:-5])
    with pytest.raises(DatasetFormatError):
        load_dataset(bad)
    bad.write_bytes(raw[:10])
    with pytest.raises(DatasetFormatError, match="truncated"):
        load_dataset(bad)


def test_crop_identity(small):
    imgs, masks = crop_batch(small.subset([5]), 3, 64, Rng(0))
    for b in range(3):
        np.testing.assert_array_equal(imgs[b], small.images[5])
        np.testing.assert_array_equal(masks[b], small.masks[5])


def test_crop_alignment_probe():
    size = 64
    rows, cols = np.mgrid[0:size, 0:size]
    code = rows * size + cols
    images = np.stack([np.stack([rows, cols, code]).astype(np.float32)] * 3)
    masks = np.stack([(code % 251).astype(np.uint8)] * 3)
    ds = SegDataset(images, masks, np.arange(3), 251)
    imgs, m = crop_batch(ds, 16, 32, Rng(1))
    np.testing.assert_array_equal(imgs[:, 2].astype(np.int64) % 251, m)
    # crops are contiguous windows
    np.testing.assert_array_equal(np.diff(imgs[:, 0], axis=1), 1)
    np.testing.assert_array_equal(np.diff(imgs[:, 1], axis=2), 1)


def test_crop_determinism(small):
    a = crop_batch(small, 4, 32, Rng(9))
    b = crop_batch(small, 4, 32, Rng(9))
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
    with pytest.raises(ValueError):
        crop_batch(small, 1, 80, Rng(0))
