"""Exact Gaussian laws of linear SDEs ``dX = −MX dt + noise`` with noise covariance rate ``Q``.

Moments are propagated with a block matrix exponential (Van Loan); an
adaptive RK4 integrator of the moment ODEs is kept as an independent check.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import expm, solve_continuous_lyapunov

from .errors import BlowUpError
from .metrics import gaussian_divergences
from .model import CoarseMap, Potential

DIVERGENCE_LEVEL = 1e12


@dataclass(frozen=True)
class LinearSde:
    M: np.ndarray
    Q: np.ndarray
    name: str = "linear"

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        if M.shape != Q.shape or M.shape[0] != M.shape[1]:
            raise ValueError("M and Q must be square matrices of equal size")
        if not np.allclose(Q, Q.T, atol=1e-12) or np.linalg.eigvalsh(Q).min() < -1e-12:
            raise ValueError("Q must be symmetric positive semidefinite")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "Q", Q)

    @property
    def dim(self) -> int:
        return self.M.shape[0]

    @property
    def spectral_abscissa(self) -> float:
        """Largest real part of the eigenvalues of ``−M``."""
        return float(np.max(np.linalg.eigvals(-self.M).real))


def _check_growth(S, t):
    if not np.all(np.isfinite(S)) or np.abs(S).max() > DIVERGENCE_LEVEL:
        raise BlowUpError(f"moments diverge by t = {t:g} (unstable drift)")


def propagate_moments(sys: LinearSde, m0, S0, t_grid, method: str = "expm", rtol: float = 1e-10
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance at each time in ``t_grid`` (``ṁ = −Mm``, ``Ṡ = −MS − SMᵀ + Q``)."""
    m0 = np.atleast_1d(np.asarray(m0, dtype=float))
    S0 = np.atleast_2d(np.asarray(S0, dtype=float))
    if np.linalg.eigvalsh(0.5 * (S0 + S0.T)).min() < -1e-12:
        raise ValueError("S0 must be positive semidefinite")
    t = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t) < 0) or t[0] < 0:
        raise ValueError("t_grid must be nondecreasing and start at t >= 0")
    if method == "expm":
        return _propagate_expm(sys, m0, S0, t)
    if method == "rk4":
        return _propagate_rk4(sys, m0, S0, t, rtol)
    raise ValueError("method must be 'expm' or 'rk4'")


def _propagate_expm(sys, m0, S0, t):
    n = sys.dim
    means = np.empty((t.size, n))
    covs = np.empty((t.size, n, n))
    for i, ti in enumerate(t):
        block = np.zeros((2 * n, 2 * n))
        block[:n, :n] = sys.M
        block[:n, n:] = sys.Q
        block[n:, n:] = -sys.M.T
        E = expm(block * ti)
        Phi = E[n:, n:].T  # e^{−Mt}
        W = Phi @ E[:n, n:]
        means[i] = Phi @ m0
        S = Phi @ S0 @ Phi.T + W
        covs[i] = 0.5 * (S + S.T)
        _check_growth(covs[i], ti)
    return means, covs


def _rhs(sys, m, S):
    return -sys.M @ m, -sys.M @ S - S @ sys.M.T + sys.Q


def _rk4_step(sys, m, S, h):
    k1 = _rhs(sys, m, S)
    k2 = _rhs(sys, m + 0.5 * h * k1[0], S + 0.5 * h * k1[1])
    k3 = _rhs(sys, m + 0.5 * h * k2[0], S + 0.5 * h * k2[1])
    k4 = _rhs(sys, m + h * k3[0], S + h * k3[1])
    return (m + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
            S + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]))


def _propagate_rk4(sys, m0, S0, t, rtol):
    """RK4 with step-doubling error control."""
    m, S, now = m0.copy(), S0.copy(), 0.0
    h = 1e-2
    means, covs = [], []
    for target in t:
        while now < target - 1e-15:
            h = min(h, target - now)
            m1, S1 = _rk4_step(sys, m, S, h)
            mh, Sh = _rk4_step(sys, m, S, h / 2)
            m2, S2 = _rk4_step(sys, mh, Sh, h / 2)
            scale = max(1.0, np.abs(S2).max(), np.abs(m2).max())
            err = max(np.abs(S2 - S1).max(), np.abs(m2 - m1).max()) / (15 * scale)
            if err <= rtol or h < 1e-8:
                m, S, now = m2 + (m2 - m1) / 15, S2 + (S2 - S1) / 15, now + h
                _check_growth(S, now)
                h *= min(2.0, 0.9 * (rtol / max(err, 1e-300)) ** 0.2)
            else:
                h *= max(0.2, 0.9 * (rtol / err) ** 0.2)
        means.append(m.copy())
        covs.append(0.5 * (S + S.T))
    return np.array(means), np.array(covs)


def stationary(sys: LinearSde) -> np.ndarray:
    """Stationary covariance ``S`` solving ``MS + SMᵀ = Q``."""
    if sys.spectral_abscissa >= 0:
        raise BlowUpError("no stationary law: drift is not strictly stable")
    return solve_continuous_lyapunov(sys.M, sys.Q)


# ------------------------------------------------------------------ systems

def overdamped_system(H, beta: float) -> LinearSde:
    H = np.atleast_2d(np.asarray(H, dtype=float))
    return LinearSde(H, 2.0 / beta * np.eye(H.shape[0]), "overdamped")


def langevin_system(H, beta: float, gamma: float) -> LinearSde:
    """State ``(q, p)``: ``dq = p dt``, ``dp = −Hq dt − γp dt + sqrt(2γ/β) dW``."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    d = H.shape[0]
    M = np.block([[np.zeros((d, d)), -np.eye(d)], [H, gamma * np.eye(d)]])
    Q = np.zeros((2 * d, 2 * d))
    Q[d:, d:] = 2 * gamma / beta * np.eye(d)
    return LinearSde(M, Q, "langevin")


def effective_drift_matrix(H, T) -> np.ndarray:
    """``K`` with ``b(z) = Kz``: conditional Gibbs mean of ``T∇V`` on ``{Tq = z}``."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    T = np.atleast_2d(np.asarray(T, dtype=float))
    Hi = np.linalg.inv(H)
    return T @ T.T @ np.linalg.inv(T @ Hi @ T.T)


def effective_langevin_system(H, T, beta: float, gamma: float) -> LinearSde:
    """State ``(z, v)``: ``dz = v dt``, ``dv = −Kz dt − γv dt + sqrt(2γ/β) (TTᵀ)^{1/2} dW``."""
    K = effective_drift_matrix(H, T)
    k = K.shape[0]
    T = np.atleast_2d(np.asarray(T, dtype=float))
    M = np.block([[np.zeros((k, k)), -np.eye(k)], [K, gamma * np.eye(k)]])
    Q = np.zeros((2 * k, 2 * k))
    Q[k:, k:] = 2 * gamma / beta * (T @ T.T)
    return LinearSde(M, Q, "effective-langevin")


def effective_overdamped_system(H, T, beta: float) -> LinearSde:
    K = effective_drift_matrix(H, T)
    T = np.atleast_2d(np.asarray(T, dtype=float))
    return LinearSde(K, 2.0 / beta * (T @ T.T), "effective-overdamped")


def gibbs_phase_covariance(H, beta: float) -> np.ndarray:
    H = np.atleast_2d(np.asarray(H, dtype=float))
    d = H.shape[0]
    return np.block([[np.linalg.inv(H) / beta, np.zeros((d, d))], [np.zeros((d, d)), np.eye(d) / beta]])


# ------------------------------------------------------------------- suite

@dataclass
class ReferenceResult:
    times: np.ndarray
    relent: np.ndarray
    w2: np.ndarray  # W₂ (not squared)
    cg_means: np.ndarray
    cg_covs: np.ndarray
    eff_means: np.ndarray
    eff_covs: np.ndarray
    full_means: np.ndarray
    full_covs: np.ndarray
    entropy0: float  # H(ρ₀|μ) of the full initial law
    meta: dict = field(default_factory=dict)


def langevin_reference_suite(pot: Potential, cmap: CoarseMap, beta: float, gamma: float, m0, S0, t_grid,
                             eta0: Optional[tuple] = None, method: str = "expm") -> ReferenceResult:
    """Coarse-grained (exact marginal) and effective Gaussian laws with their divergences.

    ``m0, S0`` describe the full phase-space initial law in ``(q, p)``;
    ``eta0 = (m, S)`` defaults to its push-forward (matched initial data).
    """
    if not pot.is_quadratic or not cmap.is_affine:
        raise ValueError("the Gaussian oracle needs a quadratic potential and an affine map")
    H = pot.hessian_matrix
    T = cmap.affine.T
    d, k = H.shape[0], T.shape[0]
    Xi = np.block([[T, np.zeros((k, d))], [np.zeros((k, d)), T]])
    tau = np.concatenate([cmap.affine.tau, np.zeros(k)])
    full = langevin_system(H, beta, gamma)
    fm, fS = propagate_moments(full, m0, S0, t_grid, method)
    cm = fm @ Xi.T + tau
    cS = Xi @ fS @ Xi.T
    if eta0 is None:
        eta0 = (Xi @ np.asarray(m0, float) + tau, Xi @ np.asarray(S0, float) @ Xi.T)
    eff = effective_langevin_system(H, T, beta, gamma)
    # the effective drift acts on z − z*, where z* = ξ-image of the Gibbs mean (zero for centered potentials)
    shift = np.concatenate([cmap.affine.tau, np.zeros(k)])
    em, eS = propagate_moments(eff, np.asarray(eta0[0], float) - shift, eta0[1], t_grid, method)
    em = em + shift
    H_t, W_t = [], []
    for a, A_, b, B_ in zip(cm, cS, em, eS):
        h, w = gaussian_divergences(a, A_, b, B_)
        H_t.append(h)
        W_t.append(w)
    gibbs = gibbs_phase_covariance(H, beta)
    h0, _ = gaussian_divergences(m0, S0, np.zeros(2 * d), gibbs)
    return ReferenceResult(np.asarray(t_grid, float), np.array(H_t), np.array(W_t), cm, cS, em, eS, fm, fS, h0,
                           {"method": method, "effective_drift": effective_drift_matrix(H, T).tolist()})
