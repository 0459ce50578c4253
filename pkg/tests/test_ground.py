import numpy as np
import pytest
from scipy.cluster.vq import kmeans2

from worldtraj import ground
from worldtraj.ground import GroundPlane

RNG = np.random.default_rng(5)


def test_point_on_plane_distance_zero():
    g = GroundPlane([0.2, -0.1, 0.7])
    x, y = 1.3, -2.2
    p = np.array([x, y, 0.2 * x - 0.1 * y + 0.7])
    assert abs(ground.point_plane_distance(p, g)) < 1e-12


def test_horizontal_plane_distance():
    g = GroundPlane([0.0, 0.0, 0.0])
    assert np.isclose(ground.point_plane_distance(np.array([5.0, -2.0, 1.3]), g), 1.3)


def test_sloped_plane_hand_value():
    g = GroundPlane([1.0, 0.0, 0.0])
    d = ground.point_plane_distance(np.array([1.0, 0.0, 2.0]), g)
    assert np.isclose(d, 1.0 / np.sqrt(2.0))


def test_distance_invariant_within_plane():
    g = GroundPlane([0.3, -0.2, 1.1])
    p = np.array([0.5, 0.4, 0.3 * 0.5 - 0.2 * 0.4 + 1.1 + 0.77])
    # in-plane directions (1, 0, a) and (0, 1, b)
    for step in (np.array([1.0, 0.0, 0.3]), np.array([0.0, 1.0, -0.2])):
        d0 = ground.point_plane_distance(p, g)
        d1 = ground.point_plane_distance(p + 3.3 * step, g)
        assert abs(d0 - d1) < 1e-12


def test_distance_gradients():
    from fd import numeric_grad, max_rel_error

    g = GroundPlane([0.2, -0.3, 0.5])
    p = RNG.normal(size=3)
    dp, dg = ground.point_plane_distance_grad(p, g)
    num_p = numeric_grad(lambda q: float(ground.point_plane_distance(q, g)), p)
    num_g = numeric_grad(
        lambda c: float(ground.point_plane_distance(p, GroundPlane(c))), g.coeffs.copy())
    assert max_rel_error(dp, num_p) < 1e-7
    assert max_rel_error(dg, num_g) < 1e-7


def test_fit_exact_horizontal():
    pts = np.column_stack([RNG.normal(size=20), RNG.normal(size=20), np.ones(20)])
    g = ground.fit_ground(pts)
    assert np.allclose(g.coeffs, [0, 0, 1], atol=1e-12)


def test_fit_exact_slope():
    x = RNG.normal(size=30)
    y = RNG.normal(size=30)
    pts = np.column_stack([x, y, 0.1 * x + 0.5])
    g = ground.fit_ground(pts)
    assert np.allclose(g.coeffs, [0.1, 0.0, 0.5], atol=1e-10)


def test_fit_noisy_recovers_plane():
    rng = np.random.default_rng(42)
    x = rng.uniform(-3, 3, size=400)
    y = rng.uniform(-3, 3, size=400)
    z = 0.05 * x - 0.08 * y + 0.4 + rng.normal(scale=0.01, size=400)
    g = ground.fit_ground(np.column_stack([x, y, z]))
    assert np.allclose(g.coeffs, [0.05, -0.08, 0.4], atol=0.01)


def test_fit_beats_competitor_planes():
    rng = np.random.default_rng(1)
    pts = np.column_stack([rng.uniform(-2, 2, 50), rng.uniform(-2, 2, 50),
                           rng.normal(scale=0.3, size=50)])
    g = ground.fit_ground(pts)

    def residual(coeffs):
        a, b, c = coeffs
        return np.sum((pts[:, 2] - a * pts[:, 0] - b * pts[:, 1] - c) ** 2)

    best = residual(g.coeffs)
    for _ in range(50):
        other = g.coeffs + rng.normal(scale=0.1, size=3)
        assert residual(other) >= best - 1e-9


def test_fit_degenerate_falls_back():
    t = np.linspace(0, 1, 10)
    pts = np.column_stack([t, 2 * t, 0.3 * np.ones(10)])  # collinear in xy
    with pytest.warns(UserWarning):
        g = ground.fit_ground(pts)
    assert np.allclose(g.coeffs, [0, 0, 0.3])


def test_cluster_single_floor():
    heights = np.array([0.01, -0.02, 0.05, 0.0])
    fa = ground.cluster_floors(heights, max_clusters=3)
    assert fa.n_clusters == 1
    assert np.all(fa.labels == 0)


def test_cluster_two_floors_matches_kmeans():
    rng = np.random.default_rng(9)
    low = rng.normal(0.0, 0.05, size=4)
    high = rng.normal(3.0, 0.05, size=3)
    heights = np.concatenate([low, high])
    fa = ground.cluster_floors(heights, max_clusters=4)
    assert fa.n_clusters == 2

    _, km_labels = kmeans2(heights[:, None], 2, seed=7, minit="++")
    # same partition up to label permutation
    ours = fa.labels
    same = (ours == ours[0])
    km_same = (km_labels == km_labels[0])
    assert np.array_equal(same, km_same)
    # low cluster separated from high cluster
    assert len({tuple(sorted(np.flatnonzero(ours == c))) for c in np.unique(ours)}) == 2
    assert set(np.flatnonzero(ours == ours[0])) == {0, 1, 2, 3}


def test_cluster_single_person():
    fa = ground.cluster_floors(np.array([1.7]), max_clusters=5)
    assert fa.n_clusters == 1
    assert fa.labels.tolist() == [0]


def test_cluster_respects_cap():
    heights = np.array([0.0, 5.0, 10.0, 15.0])
    fa = ground.cluster_floors(heights, max_clusters=2)
    assert fa.n_clusters == 2


def test_cluster_plane_independence():
    # perturbing the other cluster's heights leaves this cluster's plane alone
    heights = np.array([0.0, 0.1, 3.0, 3.1])
    fa1 = ground.cluster_floors(heights)
    heights2 = heights.copy()
    heights2[2:] += 0.2
    fa2 = ground.cluster_floors(heights2)
    low1 = fa1.planes[fa1.labels[0]].coeffs
    low2 = fa2.planes[fa2.labels[0]].coeffs
    assert np.allclose(low1, low2)
