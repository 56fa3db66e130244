import numpy as np
import pytest
from scipy import stats

from cgbounds.errors import InsufficientOccupancyError
from cgbounds.model import GibbsMeasure, coordinate_map, coupled_quadratic, expression_map, rotated_map
from cgbounds.sampling import ChainConfig, Ensemble, batch_means_stderr, rng_stream, sample_conditional, sample_gibbs

FAST = ChainConfig(burn_in=1000, seed=7)


@pytest.fixture(scope="module")
def coupled_samples():
    pot = coupled_quadratic(0.5, 0.2)
    return pot, sample_gibbs(GibbsMeasure(pot, 1.0), 20000, FAST)


def test_gibbs_moments_match_quadratic(coupled_samples):
    pot, ens = coupled_samples
    exact = np.linalg.inv(pot.hessian_matrix)
    assert np.abs(ens.mean()).max() < 0.05
    np.testing.assert_allclose(ens.covariance(), exact, rtol=0.08, atol=0.01)
    assert 0.1 <= ens.diagnostics["acceptance"] <= 0.9


def test_variance_scales_inversely_with_beta():
    pot = coupled_quadratic(0.0, 1.0)
    v1 = sample_gibbs(GibbsMeasure(pot, 1.0), 20000, FAST).covariance()
    v2 = sample_gibbs(GibbsMeasure(pot, 2.0), 20000, FAST).covariance()
    np.testing.assert_allclose(np.diag(v2) / np.diag(v1), 0.5, rtol=0.1)


def test_same_seed_same_samples():
    m = GibbsMeasure(coupled_quadratic(0.25, 0.1), 1.0)
    a = sample_gibbs(m, 500, FAST).points
    b = sample_gibbs(m, 500, FAST).points
    c = sample_gibbs(m, 500, ChainConfig(burn_in=1000, seed=8)).points
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_streams_are_independent():
    a = rng_stream(3, 0).standard_normal(1000)
    b = rng_stream(3, 1).standard_normal(1000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.1
    assert np.array_equal(a, rng_stream(3, 0).standard_normal(1000))


def test_conditional_on_fiber_matches_closed_form():
    c, eps, z = 0.5, 0.1, 1.2
    m = GibbsMeasure(coupled_quadratic(c, eps), 1.0)
    s = sample_conditional(m, coordinate_map(2, (0,)), z, 20000, FAST)
    assert s.method == "exact-fiber"
    np.testing.assert_allclose(s.points[:, 0], z)
    fast = s.points[:, 1]
    assert fast.mean() == pytest.approx(-c * eps * z, abs=0.01)
    assert fast.var() == pytest.approx(eps, rel=0.05)


def test_conditional_momenta_respect_constraint():
    m = GibbsMeasure(coupled_quadratic(0.25, 0.1), 1.0)
    cmap = rotated_map(0.3)
    s = sample_conditional(m, cmap, 0.4, 4000, FAST, v=0.7)
    np.testing.assert_allclose(s.momenta @ cmap.affine.T.T, 0.7, atol=1e-12)
    # momentum orthogonal to T has unit variance at beta = 1
    _, N = cmap.fiber_basis()
    assert np.var(s.momenta @ N) == pytest.approx(1.0, rel=0.08)


def test_fiber_law_independent_of_kernel_basis():
    m = GibbsMeasure(coupled_quadratic(0.5, 0.2), 1.0)
    cmap = coordinate_map(2, (0,))
    a = sample_conditional(m, cmap, 0.5, 5000, FAST).points[:, 1]
    b = sample_conditional(m, cmap, 0.5, 5000, ChainConfig(burn_in=1000, seed=11),
                           basis=np.array([[0.0], [-1.0]])).points[:, 1]
    assert stats.ks_2samp(a, b).pvalue > 1e-3


def test_conditionals_reassemble_marginal(coupled_samples):
    # averaging the fiber means over the marginal recovers the joint mean of the fast coordinate
    pot, ens = coupled_samples
    m = GibbsMeasure(pot, 1.0)
    cmap = coordinate_map(2, (0,))
    zs = ens.points[:200, 0]
    fiber_means = [sample_conditional(m, cmap, z, 200, ChainConfig(burn_in=300, seed=i, n_chains=16)).points[:, 1].mean()
                   for i, z in enumerate(zs[:40])]
    np.testing.assert_allclose(fiber_means, -0.5 * 0.2 * zs[:40], atol=0.12)


def test_binned_mode_for_nonlinear_map():
    m = GibbsMeasure(coupled_quadratic(0.25, 0.5), 1.0)
    cmap = expression_map(["q1 + 0.1*q2^2"], 2)
    pool = sample_gibbs(m, 50000, FAST)
    s = sample_conditional(m, cmap, 0.0, 500, FAST, bin_width=0.1, pool=pool)
    assert s.method == "binned"
    assert np.all(np.abs(cmap.xi(s.points)[:, 0]) <= 0.05)
    with pytest.raises(InsufficientOccupancyError):
        sample_conditional(m, cmap, 9.0, 500, FAST, bin_width=0.1, pool=pool)


def test_batch_means_stderr_shrinks_with_more_batches():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4000, 1))
    ids = np.repeat(np.arange(40), 100)
    se = batch_means_stderr(x, ids)
    assert se[0] == pytest.approx(1 / np.sqrt(4000), rel=0.3)


def test_ensemble_csv_roundtrip(tmp_path):
    e = Ensemble(np.arange(6.0).reshape(3, 2), momenta=np.ones((3, 2)), time=0.5)
    e.to_csv(tmp_path / "e.csv")
    back = Ensemble.from_csv(tmp_path / "e.csv")
    np.testing.assert_array_equal(back.state(), e.state())


def test_ensemble_rejects_nonfinite():
    with pytest.raises(ValueError):
        Ensemble(np.array([[0.0, np.nan]]))
