import numpy as np
import pytest

from exhaustdet import metrics
from exhaustdet.metrics import ConfusionCounts, confusion
from oracles import direct_counts, direct_metrics

GAS, OTHER, ROAD = 1, 0, 2


def test_perfect():
    assert confusion([GAS, OTHER], [GAS, OTHER]) == ConfusionCounts(1, 0, 0, 1)


def test_hand_counted():
    c = confusion([GAS, GAS, OTHER, OTHER, GAS], [GAS, OTHER, GAS, OTHER, GAS])
    assert c == ConfusionCounts(tp=2, fp=1, fn=1, tn=1)


def test_road_ignored():
    assert confusion([GAS, OTHER, GAS], [ROAD] * 3) == ConfusionCounts()
    assert confusion([GAS, OTHER, GAS], [ROAD] * 3, ignore_road=False).total == 3


def test_length_mismatch():
    with pytest.raises(ValueError):
        confusion([GAS], [GAS, OTHER])


def test_arithmetic():
    c = ConfusionCounts(tp=3, fp=1, fn=1, tn=0)
    assert metrics.precision(c) == 0.75
    assert metrics.recall(c) == 0.75
    assert metrics.iou_gas(c) == 0.6


def test_empty_class_convention():
    c = ConfusionCounts(0, 0, 0, 5)
    assert metrics.summary(c) == {"precision": 1.0, "recall": 1.0, "iou_other": 1.0,
                                  "iou_gas": 1.0, "miou": 1.0}


@pytest.mark.parametrize("seed", range(10))
def test_against_direct_count(seed):
    rng = np.random.default_rng(seed)
    pred = rng.integers(0, 3, 1000)
    gt = rng.integers(0, 3, 1000)
    c = confusion(pred, gt)
    assert (c.tp, c.fp, c.fn, c.tn) == direct_counts(pred, gt)
    for k, v in direct_metrics(pred, gt).items():
        assert metrics.summary(c)[k] == pytest.approx(v, abs=1e-12)


def test_swap_symmetry_and_permutation():
    rng = np.random.default_rng(3)
    pred, gt = rng.integers(0, 2, 500), rng.integers(0, 2, 500)
    a, b = confusion(pred, gt), confusion(gt, pred)
    assert (a.tp, a.tn, a.fp, a.fn) == (b.tp, b.tn, b.fn, b.fp)
    assert metrics.iou_gas(a) == metrics.iou_gas(b)
    perm = rng.permutation(500)
    assert confusion(pred[perm], gt[perm]) == a


def test_miou_one_iff_equal():
    rng = np.random.default_rng(4)
    gt = rng.integers(0, 2, 100)
    assert metrics.miou(confusion(gt, gt)) == 1.0
    pred = gt.copy()
    pred[0] = 1 - pred[0]
    assert metrics.miou(confusion(pred, gt)) < 1.0


def test_counts_merge():
    a, b = ConfusionCounts(1, 2, 3, 4), ConfusionCounts(10, 20, 30, 40)
    assert a + b == ConfusionCounts(11, 22, 33, 44)


def test_table_format():
    table = metrics.format_table([("seq", ConfusionCounts(3, 1, 1, 5))])
    head, rule, row = table.splitlines()
    assert head.split() == ["Sequence", "Precision", "Recall", "IoU_Other", "IoU_Gas", "mIoU"]
    assert row.split() == ["seq", "75.00", "75.00", "71.43", "60.00", "65.71"]
