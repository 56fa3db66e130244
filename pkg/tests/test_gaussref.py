import numpy as np
import pytest

from cgbounds.errors import BlowUpError
from cgbounds.gaussref import (
    LinearSde,
    effective_drift_matrix,
    effective_overdamped_system,
    gibbs_phase_covariance,
    langevin_reference_suite,
    langevin_system,
    overdamped_system,
    propagate_moments,
    stationary,
)
from cgbounds.model import coordinate_map, coupled_quadratic

T_GRID = np.linspace(0, 1, 21)


def _suite(c, eps):
    pot = coupled_quadratic(c, eps)
    m0 = np.array([0.0, np.sqrt(eps), 0.0, 0.0])
    return langevin_reference_suite(pot, coordinate_map(2, (0,)), 1.0, 1.0, m0,
                                    gibbs_phase_covariance(pot.hessian_matrix, 1.0), T_GRID)


def test_ou_variance_from_rest():
    _, S = propagate_moments(LinearSde([[1.0]], [[2.0]]), [0.0], [[0.0]], [1.0])
    assert S[0, 0, 0] == pytest.approx(1 - np.exp(-2.0), rel=1e-12)


def test_langevin_stationary_covariance_is_identity():
    np.testing.assert_allclose(stationary(langevin_system([[1.0]], 1.0, 1.0)), np.eye(2), atol=1e-12)


def test_overdamped_stationary_is_gibbs():
    H = coupled_quadratic(0.5, 0.1).hessian_matrix
    np.testing.assert_allclose(stationary(overdamped_system(H, 2.0)), np.linalg.inv(2.0 * H), atol=1e-12)


def test_expm_and_rk4_agree():
    sys = langevin_system([[1.0]], 1.0, 1.0)
    t = np.linspace(0, 3, 7)
    a = propagate_moments(sys, [1, 0], 0.5 * np.eye(2), t)[1]
    b = propagate_moments(sys, [1, 0], 0.5 * np.eye(2), t, "rk4")[1]
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_effective_drift_is_schur_complement():
    c, eps = 0.5, 0.1
    K = effective_drift_matrix(coupled_quadratic(c, eps).hessian_matrix, np.array([[1.0, 0.0]]))
    assert K[0, 0] == pytest.approx(1 - c * c * eps)


def test_effective_overdamped_preserves_marginal():
    H = coupled_quadratic(0.5, 0.1).hessian_matrix
    K = effective_drift_matrix(H, np.array([[1.0, 0.0]]))
    S = stationary(effective_overdamped_system(H, np.array([[1.0, 0.0]]), 1.0))
    assert S[0, 0] == pytest.approx(1 / K[0, 0])
    assert S[0, 0] == pytest.approx(np.linalg.inv(H)[0, 0])


def test_coarse_and_effective_laws_start_equal():
    r = _suite(0.25, 0.1)
    assert r.relent[0] == pytest.approx(0.0, abs=1e-14)
    assert r.w2[0] == pytest.approx(0.0, abs=1e-7)
    np.testing.assert_allclose(r.cg_means[0], r.eff_means[0])


def test_separable_case_has_zero_error():
    r = _suite(0.0, 0.1)
    assert np.abs(r.relent).max() <= 1e-12


def test_error_grows_with_coupling():
    errs = [_suite(c, 0.1).relent.max() for c in (0.1, 0.25, 0.5)]
    assert errs[0] < errs[1] < errs[2]


def test_error_shrinks_with_scale_separation():
    errs = [_suite(0.5, eps).relent.max() for eps in (0.2, 0.1, 0.05)]
    assert errs[0] > errs[1] > errs[2]


def test_unstable_system_detected():
    with pytest.raises(BlowUpError):
        propagate_moments(LinearSde([[-5.0]], [[1.0]]), [1.0], [[0.0]], [0.0, 50.0])
