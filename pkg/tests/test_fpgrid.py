import numpy as np
import pytest

from cgbounds.errors import BoxTooSmallError
from cgbounds.fpgrid import (
    auto_box,
    bernoulli,
    discrete_gibbs,
    full_generator,
    initial_shifted_fast,
    solve_coarse,
    solve_full_overdamped,
)
from cgbounds.grids import Grid, GridDensity
from cgbounds.integrators import CoefficientField
from cgbounds.metrics import gaussian_grid
from cgbounds.model import catalog_potential, coupled_quadratic

from scenarios import coupled_run

HARMONIC = catalog_potential("quadratic", H=((1.0,),))


def _linear_field(grid, slope):
    z = grid.centers[0]
    n = z.size
    return CoefficientField(grid, (slope * z)[:, None], np.ones((n, 1, 1)), np.ones(n))


def test_bernoulli_function_limits():
    assert bernoulli(np.array([0.0]))[0] == pytest.approx(1.0)
    x = np.array([1e-9, 2.0, -3.0, 40.0])
    np.testing.assert_allclose(bernoulli(x), x / np.expm1(x), rtol=1e-6)


def test_generator_columns_conserve_mass():
    pot = coupled_quadratic(0.25, 0.1)
    L = full_generator(pot, 1.0, Grid.uniform([(-3, 3), (-2, 2)], 16))
    np.testing.assert_allclose(np.asarray(L.sum(axis=0)).ravel(), 0.0, atol=1e-9)


def test_discrete_gibbs_is_stationary():
    pot = coupled_quadratic(0.25, 0.1)
    S = np.linalg.inv(pot.hessian_matrix)
    mu = discrete_gibbs(pot, 1.0, Grid.uniform(auto_box([np.zeros(2)], [S]), 64))
    traj = solve_full_overdamped(pot, 1.0, mu, 0.2)
    assert np.abs(traj.densities[-1].values - mu.values).max() < 1e-12


def test_ornstein_uhlenbeck_moments_in_one_dimension():
    grid = Grid.uniform([(-8, 8)], 512)
    traj = solve_full_overdamped(HARMONIC, 1.0, gaussian_grid(2.0, 0.25, grid), 1.0, output_times=[0, 0.5, 1.0])
    final = traj.densities[-1]
    assert final.mean()[0] == pytest.approx(2 * np.exp(-1.0), rel=1e-3)
    assert final.covariance()[0, 0] == pytest.approx(0.25 * np.exp(-2.0) + 1 - np.exp(-2.0), rel=1e-3)


def test_heat_kernel_spreading():
    flat = catalog_potential("quadratic", H=((1e-12,),))
    grid = Grid.uniform([(-10, 10)], 400)
    traj = solve_full_overdamped(flat, 1.0, gaussian_grid(0.0, 0.1, grid), 1.0, check_box=False)
    assert traj.densities[-1].covariance()[0, 0] == pytest.approx(2.1, rel=1e-3)


def test_mass_is_conserved_and_entropy_decreases():
    _, _, run = coupled_run(0.25, 0.1)
    for d in run.full.densities:
        assert d.values.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.diff(run.full.step_entropy).max() <= 1e-8


def test_box_too_small_is_detected():
    with pytest.raises(BoxTooSmallError):
        solve_full_overdamped(HARMONIC, 1.0, gaussian_grid(0.0, 1.0, Grid.uniform([(-2, 2)], 64)), 0.5)


def test_coarse_solver_is_well_balanced():
    grid = Grid.uniform([(-6, 6)], 200)
    z = grid.centers[0]
    eq = GridDensity.normalized(grid, np.exp(-0.975 * z ** 2 / 2))
    traj = solve_coarse(_linear_field(grid, 0.975), 1.0, eq, 1.0)
    assert np.abs(traj.densities[-1].values - eq.values).max() < 1e-14


def test_coarse_solver_tracks_ornstein_uhlenbeck():
    grid = Grid.uniform([(-6, 6)], 200)
    K = 0.975
    traj = solve_coarse(_linear_field(grid, K), 1.0, gaussian_grid(1.0, 0.1, grid), 1.0)
    final = traj.densities[-1]
    assert final.mean()[0] == pytest.approx(np.exp(-K), rel=1e-3)
    assert final.covariance()[0, 0] == pytest.approx(0.1 * np.exp(-2 * K) + (1 - np.exp(-2 * K)) / K, rel=1e-3)


def test_shifted_initial_law_moves_fast_coordinate():
    c, eps = 0.25, 0.1
    pot = coupled_quadratic(c, eps)
    S = np.linalg.inv(pot.hessian_matrix)
    shift = np.sqrt(eps)
    grid = Grid.uniform(auto_box([np.zeros(2), np.array([0.0, shift])], [S, S]), 128)
    rho0 = initial_shifted_fast(pot, 1.0, grid, shift)
    np.testing.assert_allclose(rho0.mean(), [0.0, shift], atol=1e-6)
    np.testing.assert_allclose(rho0.covariance(), S, rtol=0.02, atol=1e-4)


def test_auto_box_covers_shifted_means():
    box = auto_box([np.zeros(2), np.array([0.0, 3.0])], [np.eye(2), np.eye(2)], n_std=8.0)
    assert box[1][0] <= -8 and box[1][1] >= 11


def test_density_csv_roundtrip(tmp_path):
    d = gaussian_grid(0.3, 0.5, Grid.uniform([(-4, 4)], 32))
    d.to_csv(tmp_path / "d.csv")
    back = GridDensity.from_csv(tmp_path / "d.csv")
    np.testing.assert_array_equal(back.values, d.values)
    assert back.grid.same_as(d.grid)
