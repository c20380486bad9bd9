import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from objdiscover.geometry import (OrientedBox, bev_iou, box_corners_bev, neighborhood_points, nms,
                                  scale_factor, scale_factors, to_box_frame, wrap_angle)

BOX = OrientedBox(0, 0, 0, w=2, l=4, h=2, yaw=0)


def random_box(rng, spread=3.0):
    return OrientedBox(*rng.uniform(-spread, spread, 2), rng.uniform(-1, 1),
                       *rng.uniform(0.3, 4.0, 3), rng.uniform(-math.pi, math.pi))


def mc_iou(a, b, rng, n=1_000_000):
    """Monte-Carlo BEV IoU from uniform samples over a joint bounding square."""
    ca, cb = np.array(box_corners_bev(a)), np.array(box_corners_bev(b))
    allc = np.vstack([ca, cb])
    lo, hi = allc.min(0), allc.max(0)
    pts = rng.uniform(lo, hi, size=(n, 2))
    pts3 = np.column_stack([pts, np.zeros(n)])
    ina = scale_factors(pts3, np.array([[a.x, a.y, 0, a.w, a.l, 1, a.yaw]]))[0] <= 1
    inb = scale_factors(pts3, np.array([[b.x, b.y, 0, b.w, b.l, 1, b.yaw]]))[0] <= 1
    union = np.sum(ina | inb)
    return np.sum(ina & inb) / union if union else 0.0


def bisect_scale(p, box, iters=200):
    """Scale factor by bisection on containment of the uniformly scaled box."""
    def inside(scale):
        d = to_box_frame(np.asarray(p, dtype=float)[None], box)[0]
        return (abs(d[0]) <= scale * box.l / 2 and abs(d[1]) <= scale * box.w / 2
                and abs(d[2]) <= scale * box.h / 2)

    lo, hi = 0.0, 1.0
    while not inside(hi):
        hi *= 2
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if inside(mid):
            hi = mid
        else:
            lo = mid
    return hi


def nms_oracle(boxes, rewards, thr):
    """Quadratic reference: scan in (reward desc, index asc) order against every kept box."""
    order = sorted(range(len(boxes)), key=lambda i: (-rewards[i], i))
    kept = []
    for i in order:
        if all(bev_iou(boxes[i], boxes[j]) <= thr for j in kept):
            kept.append(i)
    return kept


@pytest.mark.parametrize("p, box, expected", [
    ((1, 0, 0), OrientedBox(0, 0, 0, 2, 4, 2, 0), (1, 0, 0)),
    ((0, 1, 0), OrientedBox(0, 0, 0, 2, 4, 2, math.pi / 2), (1, 0, 0)),
    ((3, 4, 1), OrientedBox(3, 4, 1, 1, 1, 1, 0.7), (0, 0, 0)),
])
def test_to_box_frame(p, box, expected):
    np.testing.assert_allclose(to_box_frame(np.array([p], float), box)[0], expected, atol=1e-12)


@pytest.mark.parametrize("p, expected", [((1, 0, 0), 0.5), ((2, 1, 1), 1.0), ((0, 2, 0), 2.0)])
def test_scale_factor_examples(p, expected):
    assert scale_factor(p, BOX) == pytest.approx(expected, abs=1e-12)
    assert bisect_scale(p, BOX) == pytest.approx(expected, abs=1e-9)


def test_scale_factor_matches_bisection():
    rng = np.random.default_rng(1)
    for _ in range(300):
        box = random_box(rng)
        p = rng.uniform(-5, 5, 3)
        assert scale_factor(p, box) == pytest.approx(bisect_scale(p, box), abs=1e-6)


def test_scale_factor_containment_and_rigid_invariance():
    rng = np.random.default_rng(2)
    for _ in range(200):
        box = random_box(rng)
        p = rng.uniform(-4, 4, 3)
        d = to_box_frame(p[None], box)[0]
        inside = abs(d[0]) <= box.l / 2 and abs(d[1]) <= box.w / 2 and abs(d[2]) <= box.h / 2
        assert (scale_factor(p, box) <= 1) == inside
        # joint rotation about the origin plus translation
        a, t = rng.uniform(-math.pi, math.pi), rng.uniform(-10, 10, 3)
        c, s = math.cos(a), math.sin(a)
        rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
        p2 = rot @ p + t
        c2 = rot @ box.center + t
        box2 = OrientedBox(*c2, box.w, box.l, box.h, box.yaw + a)
        assert scale_factor(p2, box2) == pytest.approx(scale_factor(p, box), abs=1e-9)


def test_scale_factors_vectorized_agrees():
    rng = np.random.default_rng(3)
    boxes = [random_box(rng) for _ in range(5)]
    pts = rng.uniform(-5, 5, (40, 3))
    s = scale_factors(pts, np.stack([b.as_array() for b in boxes]))
    for k, b in enumerate(boxes):
        for m in range(len(pts)):
            assert s[k, m] == pytest.approx(scale_factor(pts[m], b), abs=1e-12)


def test_neighborhood_points_examples():
    pts = np.array([[2.0, 0, 0], [4.01, 0, 0]])
    assert list(neighborhood_points(pts, BOX)) == [0]


def test_neighborhood_points_vs_doubled_box():
    rng = np.random.default_rng(4)
    box = random_box(rng)
    pts = rng.uniform(-8, 8, (1000, 3))
    doubled = OrientedBox(box.x, box.y, box.z, 2 * box.w, 2 * box.l, 2 * box.h, box.yaw)
    d = to_box_frame(pts, doubled)
    brute = np.flatnonzero((np.abs(d[:, 0]) <= doubled.l / 2) & (np.abs(d[:, 1]) <= doubled.w / 2)
                           & (np.abs(d[:, 2]) <= doubled.h / 2))
    np.testing.assert_array_equal(np.sort(neighborhood_points(pts, box)), brute)


def test_bev_iou_examples():
    a = OrientedBox(0, 0, 0, 2, 2, 1, 0)
    assert bev_iou(a, a) == pytest.approx(1.0)
    assert bev_iou(a, OrientedBox(1, 0, 5, 2, 2, 1, 0)) == pytest.approx(1 / 3)
    assert bev_iou(a, OrientedBox(10, 0, 0, 2, 2, 1, 0)) == 0.0


def test_bev_iou_monte_carlo():
    rng = np.random.default_rng(5)
    for _ in range(5):
        a, b = random_box(rng, 1.5), random_box(rng, 1.5)
        assert bev_iou(a, b) == pytest.approx(mc_iou(a, b, rng), abs=0.01)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4),
       st.lists(st.floats(0.2, 4), min_size=4, max_size=4),
       st.floats(-4, 4), st.floats(-4, 4), st.floats(-20, 20), st.floats(-20, 20))
def test_bev_iou_properties(c, dims, ya, yb, tx, ty):
    a = OrientedBox(c[0], c[1], 0, dims[0], dims[1], 1, ya)
    b = OrientedBox(c[2], c[3], 0, dims[2], dims[3], 1, yb)
    v = bev_iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(bev_iou(b, a), abs=1e-9)
    assert bev_iou(a, a) == pytest.approx(1.0, abs=1e-9)
    a2 = OrientedBox(a.x + tx, a.y + ty, 0, a.w, a.l, 1, a.yaw)
    b2 = OrientedBox(b.x + tx, b.y + ty, 0, b.w, b.l, 1, b.yaw)
    assert bev_iou(a2, b2) == pytest.approx(v, abs=1e-9)


def test_nms_examples():
    assert nms([BOX, BOX], [1.0, 0.5], 0.1) == [0]
    far = OrientedBox(50, 0, 0, 2, 4, 2, 0)
    assert nms([BOX, far], [0.2, 0.5], 0.1) == [1, 0]
    # equal rewards: lower index wins
    assert nms([BOX, BOX], [1.0, 1.0], 0.1) == [0]


def test_nms_errors():
    with pytest.raises(ValueError):
        nms([BOX], [1.0, 2.0], 0.1)
    with pytest.raises(ValueError):
        nms([BOX], [1.0], 1.5)


@pytest.mark.parametrize("seed", range(10))
def test_nms_matches_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    boxes = [random_box(rng, 4) for _ in range(30)]
    rewards = list(rng.integers(0, 5, 30).astype(float))  # coarse values exercise ties
    thr = float(rng.uniform(0, 0.6))
    kept = nms(boxes, rewards, thr)
    assert kept == nms_oracle(boxes, rewards, thr)
    for i in kept:
        for j in kept:
            if i < j:
                assert bev_iou(boxes[i], boxes[j]) <= thr


def test_box_validation():
    with pytest.raises(ValueError):
        OrientedBox(0, 0, 0, 0, 1, 1)
    with pytest.raises(ValueError):
        OrientedBox(0, 0, float("nan"), 1, 1, 1)


def test_wrap_angle():
    assert wrap_angle(math.pi) == pytest.approx(-math.pi)
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
