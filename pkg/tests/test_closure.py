import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from cgbounds.closure import (
    ClosureEstimator,
    cg_coefficients,
    effective_coefficients,
    fiber_integral,
    gradient_flow_residual,
    levelset_gradient_check,
    marginal_density,
)
from cgbounds.grids import Grid
from cgbounds.model import GibbsMeasure, coordinate_map, coupled_quadratic, double_well_fast, rotated_map
from cgbounds.sampling import ChainConfig, Ensemble, sample_gibbs

BOX = [(-8.0, 8.0), (-8.0, 8.0)]


def _gaussian(q):
    return np.exp(-0.5 * np.sum(q ** 2, axis=-1))


def _gaussian_grad(q):
    return -q * _gaussian(q)[..., None]


def test_effective_drift_of_coupled_quadratic():
    c, eps = 0.5, 0.1
    field = effective_coefficients(GibbsMeasure(coupled_quadratic(c, eps), 1.0), coordinate_map(2, (0,)),
                                   Grid.uniform([(-2, 2)], 8), method="quadrature", box=BOX)
    assert field.drift(np.array([[1.0]]))[0, 0] == pytest.approx(1 - c * c * eps, abs=1e-10)
    np.testing.assert_allclose(field.A_values, 1.0)


def test_sampling_estimator_agrees_with_quadrature():
    m = GibbsMeasure(coupled_quadratic(0.5, 0.1), 1.0)
    grid = Grid.uniform([(-2, 2)], 8)
    sampled = effective_coefficients(m, coordinate_map(2, (0,)), grid, n_per_cell=2000)
    slope = sampled.b_values[:, 0] / grid.centers[0]
    assert np.all(np.abs(slope - 0.975) < 5 * sampled.b_stderr[:, 0] / np.abs(grid.centers[0]) + 1e-3)


def test_separable_potential_has_unit_slope():
    field = effective_coefficients(GibbsMeasure(coupled_quadratic(0.0, 0.1), 1.0), coordinate_map(2, (0,)),
                                   Grid.uniform([(-2, 2)], 6), method="quadrature", box=BOX)
    np.testing.assert_allclose(field.b_values[:, 0], field.grid.centers[0], atol=1e-10)


def test_rotated_map_diffusion_is_unit():
    field = effective_coefficients(GibbsMeasure(coupled_quadratic(0.25, 0.1), 1.0), rotated_map(0.7),
                                   Grid.uniform([(-2, 2)], 6), method="quadrature", box=BOX)
    np.testing.assert_allclose(field.A_values, 1.0, atol=1e-12)


def test_time_dependent_coefficients_at_gibbs_equal_effective():
    pot = coupled_quadratic(0.5, 0.2)
    m = GibbsMeasure(pot, 1.0)
    cmap = coordinate_map(2, (0,))
    grid = Grid.uniform([(-2, 2)], 8)
    ens = sample_gibbs(m, 100000, ChainConfig(burn_in=1000, seed=3))
    cg = cg_coefficients(ens, pot, cmap, 1.0, grid)
    eff = effective_coefficients(m, cmap, grid, method="quadrature", box=BOX)
    np.testing.assert_allclose(cg.b_values, eff.b_values, atol=0.06)


def test_cg_coefficients_flag_empty_cells():
    pot = coupled_quadratic(0.25, 0.1)
    ens = Ensemble(np.random.default_rng(0).normal(size=(200, 2)) * 0.1)
    cg = cg_coefficients(ens, pot, coordinate_map(2, (0,)), 1.0, Grid.uniform([(-3, 3)], 12))
    assert not cg.valid.all() and cg.valid.any()


def test_marginal_density_of_gaussian():
    pot = coupled_quadratic(0.5, 0.1)
    H = pot.hessian_matrix
    md = marginal_density(lambda q: np.exp(-0.5 * np.einsum("...i,ij,...j", q, H, q)), coordinate_map(2, (0,)),
                          Grid.uniform([(-5, 5)], 100), box=[(-6, 6), (-6, 6)])
    z = md.grid.centers[0]
    exact = np.sqrt(0.975 / (2 * np.pi)) * np.exp(-0.975 * z ** 2 / 2)
    assert np.abs(md.density - exact).max() < 1e-5


@pytest.mark.parametrize("cmap", [coordinate_map(2, (0,)), rotated_map(0.4)], ids=["coordinate", "rotated"])
def test_levelset_gradient_identity(cmap):
    report = levelset_gradient_check(_gaussian, _gaussian_grad, cmap, Grid.uniform([(-3, 3)], 256),
                                     [(-6, 6), (-6, 6)])
    assert report["max_relative_error"] <= 1e-2
    assert report["n_cells"] > 200


def test_levelset_error_shrinks_with_resolution():
    errs = [levelset_gradient_check(_gaussian, _gaussian_grad, coordinate_map(2, (0,)), Grid.uniform([(-3, 3)], n),
                                    [(-6, 6), (-6, 6)])["max_relative_error"] for n in (32, 64)]
    assert errs[1] < errs[0] / 3


@pytest.mark.parametrize("pot", [coupled_quadratic(0.5, 0.1), double_well_fast(0.1, c=0.25)],
                         ids=["coupled", "double-well"])
@pytest.mark.parametrize("cmap", [coordinate_map(2, (0,)), rotated_map(0.4)], ids=["coordinate", "rotated"])
def test_effective_dynamics_is_gradient_flow(pot, cmap):
    box = [(-4, 4), (-4, 4)]
    field = effective_coefficients(GibbsMeasure(pot, 1.0), cmap, Grid.uniform([(-1.8, 1.8)], 64),
                                   method="quadrature", box=box)

    def grad_log_marginal(z, d=1e-4):
        def log_m(x):
            return np.log(fiber_integral(lambda q: np.exp(-pot.eval(q)), cmap, x, box))
        return (log_m(z + d) - log_m(z - d)) / (2 * d)

    assert gradient_flow_residual(field, grad_log_marginal, 1.0) <= 1e-2


def test_coefficient_csv_has_header(tmp_path):
    field = effective_coefficients(GibbsMeasure(coupled_quadratic(0.5, 0.1), 1.0), coordinate_map(2, (0,)),
                                   Grid.uniform([(-1, 1)], 4), method="quadrature", box=BOX)
    field.to_csv(tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0].startswith("# ")  # grid and provenance metadata
    assert len(lines) == 6 and "b" in lines[1]


class TestClosureEstimator:
    def test_fit_predict(self):
        est = ClosureEstimator(potential=coupled_quadratic(0.5, 0.1), coarse_map=coordinate_map(2, (0,)),
                               bounds=(-2, 2), n_bins=8, box=BOX).fit()
        assert est.predict(np.array([[1.0]]))[0] == pytest.approx(0.975)
        assert est.predict_diffusion(np.array([[1.0]]))[0] == pytest.approx(1.0)

    def test_unfitted_raises(self):
        est = ClosureEstimator(potential=coupled_quadratic(0.5, 0.1), coarse_map=coordinate_map(2, (0,)), box=BOX)
        with pytest.raises(NotFittedError):
            est.predict(np.array([[0.0]]))

    def test_clone_keeps_params(self):
        est = ClosureEstimator(potential=coupled_quadratic(0.5, 0.1), coarse_map=coordinate_map(2, (0,)),
                               n_bins=12, box=BOX)
        assert clone(est).get_params()["n_bins"] == 12

    def test_quadrature_needs_box(self):
        with pytest.raises(ValueError):
            ClosureEstimator(potential=coupled_quadratic(0.5, 0.1), coarse_map=coordinate_map(2, (0,))).fit()
