import numpy as np
import pytest

from cgbounds.errors import BlowUpError, StepSizeError
from cgbounds.integrators import (
    AnalyticClosure,
    SdeConfig,
    linear_closure,
    psd_sqrt,
    simulate_coupled_pair,
    simulate_effective,
    simulate_langevin,
    simulate_overdamped,
    step_effective,
    step_langevin_baoab,
    step_overdamped_em,
)
from cgbounds.model import catalog_potential, coupled_quadratic

HARMONIC = catalog_potential("quadratic", H=((1.0,),))


def test_em_step_without_noise_contracts_by_one_minus_h():
    q = step_overdamped_em(np.array([[1.0]]), HARMONIC, SdeConfig(h=0.1, t_end=1.0), np.zeros((1, 1)))
    assert q[0, 0] == pytest.approx(0.9)


def test_baoab_step_without_noise():
    h, g = 0.1, 1.0
    q, p = step_langevin_baoab(np.array([[0.0]]), np.array([[1.0]]), HARMONIC,
                               SdeConfig(h=h, t_end=1.0, gamma=g), np.zeros((1, 1)))
    q_half = 0.5 * h
    p_mid = np.exp(-g * h)
    q_end = q_half + 0.5 * h * p_mid
    assert q[0, 0] == pytest.approx(q_end)
    assert p[0, 0] == pytest.approx(p_mid - 0.5 * h * q_end)


def test_psd_sqrt_squares_back():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    R = psd_sqrt(A)
    np.testing.assert_allclose(R @ R, A, atol=1e-12)
    np.testing.assert_allclose(R, R.T)


def test_psd_sqrt_floors_negative_eigenvalues():
    R = psd_sqrt(np.diag([1.0, -1e-14]))
    assert np.all(np.isfinite(R))


def test_step_size_guard():
    with pytest.raises(StepSizeError):
        simulate_overdamped(catalog_potential("quadratic", H=((100.0,),)), np.zeros((4, 1)),
                            SdeConfig(h=0.01, t_end=0.1))


def test_euler_maruyama_weak_error_is_first_order():
    q0 = np.full((20000, 1), 10.0)
    errs = []
    for h in (0.1, 0.05):
        res = simulate_overdamped(HARMONIC, q0, SdeConfig(h=h, t_end=1.0), seed=4)
        errs.append(abs(res.mean[-1, 0] - 10 * np.exp(-1.0)))
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.15)


def test_overdamped_reaches_gibbs_variance():
    pot = coupled_quadratic(0.5, 0.5)
    res = simulate_overdamped(pot, np.zeros((20000, 2)), SdeConfig(h=0.01, t_end=8.0, beta=2.0), seed=1)
    np.testing.assert_allclose(res.cov[-1], np.linalg.inv(2.0 * pot.hessian_matrix), rtol=0.06, atol=0.01)


def test_baoab_configurational_variance():
    res = simulate_langevin(HARMONIC, np.zeros((20000, 1)), np.zeros((20000, 1)),
                            SdeConfig(h=0.1, t_end=15.0, beta=1.0, gamma=1.0), seed=2)
    assert res.cov[-1, 0, 0] == pytest.approx(1.0, rel=0.05)
    assert res.cov[-1, 1, 1] == pytest.approx(1.0, rel=0.05)


def test_effective_simulation_matches_ou_law():
    closure = linear_closure(2.0, A=0.5)
    res = simulate_effective(closure, np.full((20000, 1), 1.0), SdeConfig(h=0.005, t_end=1.0), seed=3)
    # dZ = -2Z dt + sqrt(2 * 0.5) dW
    assert res.mean[-1, 0] == pytest.approx(np.exp(-2.0), abs=0.02)
    assert res.cov[-1, 0, 0] == pytest.approx(0.25 * (1 - np.exp(-4.0)), rel=0.05)


def test_effective_step_uses_diffusion_root():
    closure = AnalyticClosure(lambda z: 0 * z, np.array([[4.0]]))
    z = step_effective(np.zeros((1, 1)), closure, SdeConfig(h=0.5, t_end=1.0), np.ones((1, 1)))
    assert z[0, 0] == pytest.approx(2.0)


def test_coupled_pair_identical_closures_do_not_separate():
    c = linear_closure(1.0)
    res = simulate_coupled_pair([[0.3]], [[0.3]], c, c, SdeConfig(h=0.01, t_end=1.0), 100, seed=5)
    assert np.all(res.mean_sq_sep == 0.0)


def test_coupled_pair_linear_separation_decays_exactly():
    c = linear_closure(1.0)
    delta = 0.5
    res = simulate_coupled_pair([[0.0]], [[delta]], c, c, SdeConfig(h=0.001, t_end=1.0), 50, seed=5,
                                record_times=[0.0, 0.5, 1.0])
    np.testing.assert_allclose(res.mean_sq_sep, delta ** 2 * np.exp(-2 * res.times), rtol=2e-3)


def test_partial_blowup_counts_aborted_trajectories():
    # restoring cubic drift: stable near the origin, explicit steps overshoot from z = 5
    stiff = AnalyticClosure(lambda z: z ** 3, np.eye(1))
    z0 = np.vstack([np.zeros((9, 1)), [[5.0]]])
    res = simulate_effective(stiff, z0, SdeConfig(h=0.1, t_end=2.0), seed=0)
    assert res.aborted_fraction == pytest.approx(0.1)
    assert np.all(np.isfinite(res.mean))


def test_total_blowup_raises():
    unstable = AnalyticClosure(lambda z: -50.0 * z ** 3, np.eye(1))
    with pytest.raises(BlowUpError):
        simulate_effective(unstable, np.full((10, 1), 5.0), SdeConfig(h=0.1, t_end=5.0), seed=0)


def test_guarded_step_raises():
    with pytest.raises(BlowUpError):
        step_overdamped_em(np.array([[1e200]]), HARMONIC, SdeConfig(h=0.1, t_end=1.0), np.zeros((1, 1)))
