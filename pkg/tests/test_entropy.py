import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import assert_grad_close
from maxent_source.entropy import kole_backward, kole_entropy, kole_forward, knn_kth_distances
from maxent_source.errors import DegenerateSampleError
from maxent_source.numcore import RngStream, finite_diff_grad

GAUSS2 = math.log(2 * math.pi * math.e)


def test_kth_distances_by_hand():
    pts = np.array([[0.0], [1.0], [3.0]])
    assert np.array_equal(knn_kth_distances(pts, 1), [1, 1, 2])
    assert np.array_equal(knn_kth_distances(pts, 2), [3, 2, 3])


def test_duplicate_gets_zero_distance():
    pts = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 5.0]])
    assert knn_kth_distances(pts, 1)[:2].tolist() == [0.0, 0.0]


def test_kth_distances_match_brute_force():
    x = RngStream(0).standard_normal(1500, 3)
    full = np.linalg.norm(x[:, None] - x[None], axis=2)
    np.fill_diagonal(full, np.inf)
    for k in (1, 3, 5):
        assert np.allclose(knn_kth_distances(x, k), np.sort(full, axis=1)[:, k - 1], rtol=0, atol=1e-12)


def test_k_out_of_range():
    with pytest.raises(ValueError):
        knn_kth_distances(np.zeros((3, 1)), 3)
    with pytest.raises(ValueError):
        knn_kth_distances(np.zeros((3, 1)), 0)


def test_all_zero_distances_degenerate():
    with pytest.raises(DegenerateSampleError):
        kole_entropy(np.ones((10, 2)))


def test_uniform_interval():
    vals = [kole_entropy(RngStream(s).uniform(4096, 1)) for s in range(20)]
    assert abs(np.median(vals)) <= 0.1


def test_gaussian_2d():
    vals = [kole_entropy(RngStream(s).standard_normal(4096, 2)) for s in range(20)]
    assert abs(np.median(vals) - GAUSS2) <= 0.1


def test_consistency_trend():
    errs = [np.median([abs(kole_entropy(RngStream(s).standard_normal(n, 2)) - GAUSS2) for s in range(20)])
            for n in (256, 1024, 4096)]
    assert errs[0] >= errs[1] >= errs[2]


def test_affine_identity():
    x = RngStream(1).standard_normal(2048, 2)
    assert kole_entropy(2 * x + 7) - kole_entropy(x) == pytest.approx(2 * math.log(2), abs=0.02)
    D = np.array([[1.5, 0.3], [0.0, 0.4]])
    assert kole_entropy(x @ D.T + 1) - kole_entropy(x) == pytest.approx(math.log(abs(np.linalg.det(D))), abs=0.02)


def test_translation_and_permutation_invariance():
    x = RngStream(2).standard_normal(500, 3)
    h = kole_entropy(x)
    assert kole_entropy(x[RngStream(3).permutation(500)]) == h
    # shift by a power of two keeps the floating-point differences exact
    assert kole_entropy(x + 4.0) == pytest.approx(h, abs=1e-12)


def test_gradient_matches_finite_differences():
    x = RngStream(4).standard_normal(8, 2)
    _, cache = kole_forward(x, k=3)

    def frozen(xx):
        # same estimator with the cached neighbor assignment
        dist = np.linalg.norm(xx - xx[cache.neighbors], axis=1)
        n, d = xx.shape
        from maxent_source.numcore import digamma, log_unit_ball_volume

        return (d / n) * np.sum(np.log(dist)) - digamma(3) + digamma(n) + log_unit_ball_volume(d)

    assert frozen(x) == pytest.approx(kole_entropy(x), abs=1e-12)
    assert_grad_close(kole_backward(x, cache), finite_diff_grad(frozen, x))


def test_gradient_translation_sums_to_zero_and_expansion_positive():
    x = RngStream(5).standard_normal(64, 2)
    _, cache = kole_forward(x)
    g = kole_backward(x, cache)
    assert np.allclose(g.sum(axis=0), 0, atol=1e-12)
    radial = x - x.mean(axis=0)
    assert np.sum(g * radial) > 0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10.0))
def test_scaling_property(seed, c):
    x = RngStream(seed).standard_normal(64, 3)
    assert kole_entropy(c * x) - kole_entropy(x) == pytest.approx(3 * math.log(c), abs=1e-9)
