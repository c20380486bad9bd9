import math

import numpy as np
import pytest

from objdiscover.evaluation import (EvalReport, SceneMatches, aligned_iou_3d, assign_class, average_precision,
                                    evaluate, match_boxes, scale_factor_histogram, tp_errors, yaw_error)
from objdiscover.geometry import OrientedBox, bev_iou
from objdiscover.persistence import ScenePointSet

G = OrientedBox(10, 0, 0.8, 2, 4, 1.6, 0.3)


def shifted(b, dx=0.0, dy=0.0):
    return OrientedBox(b.x + dx, b.y + dy, b.z, b.w, b.l, b.h, b.yaw)


def test_match_single_exact():
    m = match_boxes([G], [1.0], [G], "iou", 0.5)
    assert (m.tp, m.fp, m.fn) == (1, 0, 0)


def test_match_two_preds_one_gt():
    m = match_boxes([shifted(G, 0.1), G], [0.8, 0.9], [G], "iou", 0.5)
    assert list(m.pred_gt) == [-1, 0]


def greedy_oracle(preds, scores, gts, thr):
    """Reference greedy matching from a precomputed IoU matrix."""
    iou = np.array([[bev_iou(p, g) for g in gts] for p in preds]).reshape(len(preds), len(gts))
    order = sorted(range(len(preds)), key=lambda i: (-scores[i], i))
    free = set(range(len(gts)))
    tp = 0
    for i in order:
        cands = [j for j in sorted(free) if iou[i, j] >= thr]
        if cands:
            free.remove(max(cands, key=lambda j: (iou[i, j], -j)))
            tp += 1
    return tp, len(preds) - tp, len(gts) - tp


@pytest.mark.parametrize("seed", range(5))
def test_match_random_vs_oracle(seed):
    rng = np.random.default_rng(seed)
    gts = [OrientedBox(*rng.uniform(0, 8, 2), 0.8, *rng.uniform(1, 3, 3), rng.uniform(-3, 3)) for _ in range(10)]
    preds = [shifted(gts[rng.integers(10)], *rng.normal(0, 0.6, 2)) for _ in range(10)]
    scores = list(rng.uniform(0, 1, 10))
    m = match_boxes(preds, scores, gts, "iou", 0.5)
    assert (m.tp, m.fp, m.fn) == greedy_oracle(preds, scores, gts, 0.5)


def test_match_distance_criterion():
    m = match_boxes([shifted(G, 1.5), shifted(G, 0.4)], [0.9, 0.5], [G], "distance", 2.0)
    assert list(m.pred_gt) == [0, -1]
    with pytest.raises(ValueError):
        match_boxes([G], [1.0], [G], "volume", 0.5)


def _matches(flags, n_gt):
    flags = np.asarray(flags)
    scores = np.linspace(1.0, 0.1, len(flags))
    pred_gt = np.where(flags, np.cumsum(flags) - 1, -1)
    return SceneMatches(scores, pred_gt, np.arange(len(flags)), n_gt)


def test_ap_fixtures():
    assert average_precision([_matches([1, 1, 1], 3)]) == 1.0
    assert average_precision([_matches([], 3)]) == 0.0
    assert average_precision([_matches([], 0)]) is None
    # TP FP TP FP TP over 3 GT: recall 1/3 at precision 1, 2/3 at 2/3, 1 at 3/5
    expected = (13 * 1.0 + 13 * (2 / 3) + 14 * (3 / 5)) / 40
    assert average_precision([_matches([1, 0, 1, 0, 1], 3)]) == pytest.approx(expected, abs=1e-15)


def test_ap_score_scale_invariant():
    m = _matches([1, 0, 1, 1, 0], 4)
    scaled = SceneMatches(m.scores * 7.5, m.pred_gt, m.order, m.n_gt)
    assert average_precision([m]) == average_precision([scaled])


def test_tp_errors_examples():
    assert tp_errors([(G, G)]) == (0.0, 0.0, 0.0)
    ate, ase, aoe = tp_errors([(shifted(G, 0.5), G)])
    assert (ate, ase, aoe) == pytest.approx((0.5, 0.0, 0.0), abs=1e-12)
    big = OrientedBox(G.x, G.y, G.z, 1.1 * G.w, 1.1 * G.l, 1.1 * G.h, G.yaw)
    assert tp_errors([(big, G)])[1] == pytest.approx(1 - 1 / 1.331, abs=1e-6)
    # same value through the geometric IoU routine: BEV IoU times the height overlap ratio
    inter = bev_iou(big, G) * (big.w * big.l + G.w * G.l) / (1 + bev_iou(big, G)) * G.h
    union = big.w * big.l * big.h + G.w * G.l * G.h - inter
    assert 1 - inter / union == pytest.approx(1 - aligned_iou_3d(big, G), abs=1e-6)
    assert tp_errors([]) is None


def test_yaw_error_modulo_pi():
    assert yaw_error(0.1, 0.1 + math.pi) == pytest.approx(0.0, abs=1e-12)
    assert yaw_error(0.0, 2.0) == pytest.approx(math.pi - 2.0)


@pytest.mark.parametrize("size, name", [((1.911, 4.745, 1.711), "Car"), ((0.780, 0.797, 1.745), "Pedestrian"),
                                        ((2.832, 9.403, 3.299), "Truck"), ((0.613, 1.752, 1.364), "Cyclist")])
def test_assign_class_at_means(size, name):
    assert assign_class(OrientedBox(0, 0, 1, *size)) == name


def test_histogram_examples():
    g = OrientedBox(0, 0, 1, 2, 4, 2, 0)
    scene = ScenePointSet([[0, 0, 1]], [0.0])
    counts, edges = scale_factor_histogram([scene], [[g]])
    assert len(counts) == 40 and edges[1] == pytest.approx(0.05)
    assert counts[0] == 1 and counts.sum() == 1
    empty = ScenePointSet([[0, 0, 1]], [1.0])
    assert scale_factor_histogram([empty], [[g]])[0].sum() == 0


def test_evaluate_report():
    gts = [[G, OrientedBox(40, 0, 0.8, 2, 4, 1.6, 0)]]
    preds = [[G, shifted(G, 30, 10)]]
    rep = evaluate(preds, [[0.9, 0.5]], gts)
    assert rep.ap[(0.5, (0.0, 30.0))] == 1.0
    assert rep.ap[(0.5, (50.0, 80.0))] is None
    assert rep.counts["iou0.5"] == (1, 1, 1)
    assert rep.ate == 0.0
    kv = rep.to_kv()
    assert "ap_iou0.5_50-80m=absent" in kv
    assert "TP errors" in rep.to_text()
    assert EvalReport().to_kv().endswith("aoe=absent\n")
