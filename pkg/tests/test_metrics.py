import numpy as np
import pytest
import torch

from scsd.pipeline.metrics import confusion_matrix, miou_report, semantic_inference


def test_perfect_prediction():
    y = np.random.default_rng(0).integers(0, 3, (2, 8, 8))
    assert miou_report(y, y, 3)["mIoU"] == pytest.approx(100)


def test_half_coverage_with_equal_false_positive_is_one_third():
    y = np.zeros((1, 4, 4), dtype=np.int64)
    y[0, :, :2] = 1  # 8 pixels of class 1
    p = np.zeros_like(y)
    p[0, :2, :2] = 1  # half of them
    p[0, :2, 2:] = 1  # 4 false positives
    assert miou_report(p, y, 2)["per_class"]["1"] == pytest.approx(100 / 3)


def test_all_background():
    y = np.zeros((1, 4, 4), dtype=np.int64)
    y[0, 0] = 1
    rep = miou_report(np.zeros_like(y), y, 2)
    assert rep["per_class"]["0"] < 100 and rep["per_class"]["1"] == 0


def test_ignore_and_absent_classes():
    y = np.array([[[0, 255], [0, 0]]])
    p = np.array([[[0, 1], [0, 0]]])
    rep = miou_report(p, y, 3, ["a", "b", "c"])
    assert rep["per_class"] == {"a": 100.0, "b": None, "c": None}
    assert rep["mIoU"] == 100.0
    assert confusion_matrix(p, y, 3).sum() == 3


def test_empty_set_rejected():
    with pytest.raises(ValueError):
        miou_report([], [], 2)


def test_semantic_inference_drops_no_object():
    cls = torch.tensor([[[0.0, 10.0, 20.0]]])  # no-object most likely, then class 1
    msk = torch.full((1, 1, 2, 2), 5.0)
    assert semantic_inference(cls, msk).eq(1).all()
