import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cgbounds.errors import GridMismatchError
from cgbounds.grids import Grid, GridDensity
from cgbounds.metrics import (
    fisher_information,
    gaussian_divergences,
    gaussian_fisher,
    gaussian_grid,
    histogram_pair,
    relative_entropy,
    wasserstein2,
    wasserstein2_detail,
)

LINE = Grid.uniform([(-10, 10)], 2000)


def _random_gaussian(rng, d=2):
    L = rng.normal(size=(d, d))
    return rng.normal(size=d), L @ L.T + 0.2 * np.eye(d)


def test_relative_entropy_two_cells():
    g = Grid((np.array([0.0, 1.0, 2.0]),))
    h = relative_entropy(GridDensity(g, [0.5, 0.5]), GridDensity(g, [0.25, 0.75]))
    assert h == pytest.approx(0.5 * np.log(2) + 0.5 * np.log(2 / 3), abs=1e-15)


def test_relative_entropy_infinite_without_absolute_continuity():
    g = Grid((np.array([0.0, 1.0, 2.0]),))
    assert relative_entropy(GridDensity(g, [0.5, 0.5]), GridDensity(g, [0.0, 1.0])) == np.inf


def test_wasserstein_of_point_masses():
    assert wasserstein2([0.0], [1.0]) == pytest.approx(1.0)
    assert wasserstein2([0.0, 2.0], [1.0, 3.0]) == pytest.approx(1.0)


def test_grid_estimators_match_gaussian_closed_forms():
    a, b = gaussian_grid(0.0, 1.0, LINE), gaussian_grid(1.0, 1.0, LINE)
    assert wasserstein2(a, b) == pytest.approx(1.0, abs=1e-3)
    assert relative_entropy(b, a) == pytest.approx(0.5, abs=1e-3)
    assert fisher_information(b, a) == pytest.approx(gaussian_fisher(1.0, 1.0, 0.0, 1.0), abs=1e-3)


def test_fisher_weight_scales_linearly():
    a, b = gaussian_grid(0.0, 1.0, LINE), gaussian_grid(1.0, 1.0, LINE)
    assert fisher_information(b, a, weight=3.0) == pytest.approx(3 * fisher_information(b, a))


def test_planar_fisher_matches_closed_form():
    G = Grid.uniform([(-6, 6), (-6, 6)], 200)
    zeta = gaussian_grid([1.0, 0.0], np.eye(2), G)
    nu = gaussian_grid([0.0, 0.0], np.diag([1.0, 2.0]), G)
    exact = gaussian_fisher([1.0, 0.0], np.eye(2), [0.0, 0.0], np.diag([1.0, 2.0]))
    assert fisher_information(zeta, nu) == pytest.approx(exact, rel=1e-3)


def test_gaussian_divergence_closed_forms():
    h, w = gaussian_divergences(1.0, 1.0, 0.0, 1.0)
    assert (h, w) == (pytest.approx(0.5), pytest.approx(1.0))
    # commuting covariances: W2^2 = |sqrt(S1) - sqrt(S2)|_F^2
    _, w = gaussian_divergences([0, 0], np.diag([1.0, 4.0]), [0, 0], np.diag([4.0, 1.0]))
    assert w ** 2 == pytest.approx(2.0)


def test_ensemble_estimators_within_two_percent():
    rng = np.random.default_rng(0)
    x = rng.normal(1.0, 1.0, 100_000)
    y = rng.normal(0.0, 1.0, 100_000)
    assert wasserstein2(x, y) == pytest.approx(1.0, rel=0.02)
    assert relative_entropy(x, gaussian_grid(0.0, 1.0, LINE)) == pytest.approx(0.5, rel=0.02)


def test_planar_ensembles_use_exact_or_sliced_transport():
    rng = np.random.default_rng(1)
    small = wasserstein2_detail(rng.normal(size=(400, 2)), rng.normal(size=(400, 2)) + [1, 0])
    big = wasserstein2_detail(rng.normal(size=(5000, 2)), rng.normal(size=(5000, 2)) + [1, 0])
    assert small.mode != big.mode
    assert big.distance == pytest.approx(1.0, rel=0.05)


def test_histogram_pair_shares_edges():
    rng = np.random.default_rng(2)
    a, b, info = histogram_pair(rng.normal(size=1000), rng.normal(size=800) + 0.5)
    assert a.grid.same_as(b.grid)


def test_mismatched_grids_rejected():
    a = gaussian_grid(0.0, 1.0, Grid.uniform([(-5, 5)], 50))
    b = gaussian_grid(0.0, 1.0, Grid.uniform([(-5, 5)], 60))
    with pytest.raises(GridMismatchError):
        relative_entropy(a, b)


def test_triangle_inequality_on_random_laws():
    rng = np.random.default_rng(3)
    for _ in range(20):
        a, b, c = (gaussian_grid(rng.normal(), rng.uniform(0.3, 2.0), LINE) for _ in range(3))
        assert wasserstein2(a, c) <= wasserstein2(a, b) + wasserstein2(b, c) + 1e-9


def test_talagrand_and_log_sobolev_witnesses():
    rng = np.random.default_rng(4)
    for _ in range(100):
        m1, S1 = _random_gaussian(rng)
        m2, S2 = _random_gaussian(rng)
        alpha = 1.0 / np.linalg.eigvalsh(S2).max()  # convexity of -log of the reference law
        h, w = gaussian_divergences(m1, S1, m2, S2)
        assert w ** 2 <= 2 * h / alpha * (1 + 1e-9)
        assert h <= gaussian_fisher(m1, S1, m2, S2) / (2 * alpha) * (1 + 1e-9)


@settings(max_examples=30, deadline=None)
@given(st.floats(-2, 2), st.floats(0.2, 3.0))
def test_divergences_vanish_only_on_equal_laws(m, s):
    h, w = gaussian_divergences(m, s, m, s)
    assert h == pytest.approx(0.0, abs=1e-12) and w == pytest.approx(0.0, abs=1e-6)
    h2, _ = gaussian_divergences(m + 0.5, s, m, s)
    assert h2 > 0
