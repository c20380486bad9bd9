import math

import numpy as np
import pytest

from objdiscover.persistence import (BACKGROUND, DYNAMIC, UNCERTAIN, ScenePointSet, TraversalSet,
                                     classify_points, normalized_entropy, pp_score)


@pytest.mark.parametrize("counts, expected", [
    ((3, 3, 3, 3), 1.0),
    ((12, 0, 0, 0), 0.0),
    ((2, 2, 0, 0), math.log(2) / math.log(4)),
    ((0, 0, 0, 0), 0.0),
])
def test_normalized_entropy_closed_form(counts, expected):
    assert normalized_entropy([counts])[0] == pytest.approx(expected, abs=1e-15)


def test_normalized_entropy_needs_two_traversals():
    with pytest.raises(ValueError, match="T >= 2"):
        normalized_entropy([[3]])


def _cloud(rng, n=400):
    return rng.uniform(-5, 5, (n, 3))


def _brute_counts(current, history, radius):
    out = np.zeros((len(current), len(history)))
    for t, cloud in enumerate(history):
        d = np.linalg.norm(current[:, None, :] - cloud[None, :, :], axis=2)
        out[:, t] = (d <= radius).sum(axis=1)
    return out


def test_pp_score_matches_brute_force():
    rng = np.random.default_rng(0)
    history = [_cloud(rng) for _ in range(4)]
    current = _cloud(rng, 100)
    ts = TraversalSet(current, history)
    expected = normalized_entropy(_brute_counts(current, history, 1.0))
    np.testing.assert_allclose(pp_score(ts, 1.0), expected, atol=1e-12)


def test_pp_score_permutation_and_duplication_invariance():
    rng = np.random.default_rng(1)
    history = [_cloud(rng) for _ in range(4)]
    current = _cloud(rng, 200)
    base = pp_score(TraversalSet(current, history), 1.0)
    perm = pp_score(TraversalSet(current, history[::-1]), 1.0)
    np.testing.assert_allclose(perm, base, atol=1e-12)
    # duplicating each traversal scales every count by two
    doubled = [np.vstack([h, h]) for h in history]
    np.testing.assert_allclose(pp_score(TraversalSet(current, doubled), 1.0), base, atol=1e-9)


def test_pp_score_range_and_empty_neighborhood():
    rng = np.random.default_rng(2)
    history = [_cloud(rng) for _ in range(3)]
    current = np.vstack([_cloud(rng, 50), [[100.0, 100.0, 0.0]]])
    tau = pp_score(TraversalSet(current, history), 0.5)
    assert np.all((tau >= 0) & (tau <= 1))
    assert tau[-1] == 0.0


@pytest.mark.parametrize("kwargs, match", [
    (dict(n_hist=1), "T >= 2"),
    (dict(radius=0.0), "radius"),
    (dict(empty=True), "empty"),
])
def test_pp_score_errors(kwargs, match):
    rng = np.random.default_rng(3)
    history = [_cloud(rng) for _ in range(kwargs.get("n_hist", 3))]
    current = np.zeros((0, 3)) if kwargs.get("empty") else _cloud(rng, 10)
    with pytest.raises(ValueError, match=match):
        pp_score(TraversalSet(current, history), kwargs.get("radius", 0.3))


@pytest.mark.parametrize("tau, label", [(0.59, DYNAMIC), (0.9, BACKGROUND), (0.75, UNCERTAIN),
                                        (0.6, UNCERTAIN), (0.0, DYNAMIC), (1.0, BACKGROUND)])
def test_classify_points(tau, label):
    assert classify_points([tau])[0] == label


def test_scene_point_set_ground_estimate():
    rng = np.random.default_rng(4)
    pts = np.column_stack([rng.uniform(-5, 5, (500, 2)), rng.uniform(2.0, 3.0, 500)])
    scene = ScenePointSet(pts, np.ones(500), ground_z=None)
    z = scene.ground_height_near([0.0, 0.0])
    assert z == pytest.approx(np.percentile(pts[:, 2], 5))
    assert ScenePointSet(pts, np.ones(500), ground_z=1.5).ground_height_near([0, 0]) == 1.5


def test_scene_point_set_length_mismatch():
    with pytest.raises(ValueError):
        ScenePointSet(np.zeros((3, 3)), np.zeros(2))
