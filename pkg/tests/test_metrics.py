import numpy as np
import pytest

from qseg.metrics import (ConfusionMatrix, accumulate, iou_per_class, mean_iou, per_image_mean_iou,
                          pixel_accuracy)


def loop_confusion(pred, gt, c, ignore=255):
    cm = np.zeros((c, c), dtype=np.int64)
    for p, g in zip(pred.ravel(), gt.ravel()):
        if g != ignore:
            cm[g, p] += 1
    return cm


def test_identity_is_diagonal():
    gt = np.random.default_rng(0).integers(0, 3, (8, 8))
    cm = accumulate(ConfusionMatrix(3), gt, gt)
    assert np.count_nonzero(cm.counts - np.diag(np.diag(cm.counts))) == 0
    assert pixel_accuracy(cm) == 1.0 and mean_iou(cm) == 1.0


def test_all_ignored_unchanged():
    cm = accumulate(ConfusionMatrix(3), np.zeros((4, 4), int), np.full((4, 4), 255))
    assert cm.total == 0


def test_hand_example():
    pred = np.zeros(100, int)
    gt = np.array([0] * 50 + [1] * 50)
    cm = accumulate(ConfusionMatrix(3), pred, gt)
    iou = iou_per_class(cm)
    assert iou[0] == 0.5 and iou[1] == 0.0 and np.isnan(iou[2])
    assert mean_iou(cm) == 0.25
    assert pixel_accuracy(cm) == 0.5


def test_all_wrong_and_single_class():
    cm = accumulate(ConfusionMatrix(2), np.ones(10, int), np.zeros(10, int))
    assert pixel_accuracy(cm) == 0.0
    cm = accumulate(ConfusionMatrix(4), np.full(9, 2), np.full(9, 2))
    assert mean_iou(cm) == iou_per_class(cm)[2] == 1.0


@pytest.mark.parametrize("seed", range(5))
def test_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    pred = rng.integers(0, 3, (8, 8))
    gt = rng.integers(0, 3, (8, 8))
    gt[rng.random((8, 8)) < 0.1] = 255
    cm = accumulate(ConfusionMatrix(3), pred, gt)
    np.testing.assert_array_equal(cm.counts, loop_confusion(pred, gt, 3))


def test_errors():
    with pytest.raises(ValueError):
        accumulate(ConfusionMatrix(2), np.array([2]), np.array([0]))
    with pytest.raises(ValueError):
        accumulate(ConfusionMatrix(2), np.array([0, 1]), np.array([0]))
    with pytest.raises(ValueError):
        mean_iou(ConfusionMatrix(2))
    with pytest.raises(ValueError):
        pixel_accuracy(ConfusionMatrix(2))
    with pytest.raises(ValueError):
        ConfusionMatrix(2).merge(ConfusionMatrix(3))


def test_merge_equals_joint_accumulation():
    rng = np.random.default_rng(9)
    a, b = rng.integers(0, 4, (2, 2, 6, 6))
    ga, gb = rng.integers(0, 4, (2, 2, 6, 6))
    joint = accumulate(ConfusionMatrix(4), np.stack([a, b]), np.stack([ga, gb]))
    split = accumulate(ConfusionMatrix(4), a, ga).merge(accumulate(ConfusionMatrix(4), b, gb))
    np.testing.assert_array_equal(joint.counts, split.counts)


def test_per_image_mean():
    preds = np.array([[0, 0], [1, 1]])
    gts = np.array([[0, 0], [1, 0]])
    # image 0: perfect -> 1.0; image 1: iou0 = 0/1, iou1 = 1/2 -> 0.25
    assert per_image_mean_iou(preds, gts, 2) == pytest.approx(0.625)
