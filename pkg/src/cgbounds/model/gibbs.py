"""Gibbs measures ``μ ∝ exp(−βV)`` and the mean-force machinery."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .maps import CoarseMap
from .potentials import Potential


@dataclass(frozen=True)
class GibbsMeasure:
    potential: Potential
    beta: float
    logZ: Optional[float] = None

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")

    @property
    def dim(self) -> int:
        return self.potential.dim

    def log_density_unnormalized(self, q):
        return -self.beta * self.potential.eval(q)

    def grad_log_density(self, q):
        return -self.beta * self.potential.grad(q)

    def covariance(self) -> Optional[np.ndarray]:
        """Exact covariance for quadratic potentials, else ``None``."""
        H = self.potential.hessian_matrix
        return None if H is None else np.linalg.inv(H) / self.beta

    def log_partition(self, half_width, n: int = 256) -> float:
        """Midpoint-rule ``log ∫ exp(−βV)`` over the box ``[-w, w]^d`` (d ≤ 2)."""
        if self.dim > 2:
            raise ValueError("quadrature partition function limited to d <= 2")
        w = np.broadcast_to(np.asarray(half_width, dtype=float), (self.dim,))
        axes = [np.linspace(-wi, wi, n + 1) for wi in w]
        centers = [0.5 * (a[1:] + a[:-1]) for a in axes]
        mesh = np.stack(np.meshgrid(*centers, indexing="ij"), axis=-1)
        vol = np.prod([2 * wi / n for wi in w])
        return float(logsumexp(self.log_density_unnormalized(mesh)) + np.log(vol))

    def check_integrable(self, half_width, tol: float = 1e-6) -> dict:
        """Quadrature convergence: refine the mesh and widen the box; values must agree."""
        base = self.log_partition(half_width, 128)
        finer = self.log_partition(half_width, 256)
        wider = self.log_partition(np.asarray(half_width) * 1.5, 384)
        ok = abs(base - finer) <= tol * max(1.0, abs(finer)) * 1e3 and abs(finer - wider) <= 1e-3
        return {"logZ": finer, "refine_delta": abs(base - finer), "widen_delta": abs(finer - wider),
                "pass": bool(ok)}


def local_mean_force(pot: Potential, cmap: CoarseMap, beta: float, q) -> np.ndarray:
    """``F = G⁻¹Dξ∇V − β⁻¹ div(G⁻¹Dξ)`` with ``G = DξDξᵀ``, shape ``(..., k)``."""
    q = np.asarray(q, dtype=float)
    J = cmap.jac(q)
    G = cmap.checked_gram(q)
    Ginv = np.linalg.inv(G)
    M = Ginv @ J  # (..., k, d)
    F = np.einsum("...ij,...j->...i", M, pot.grad(q))
    if cmap.is_affine:
        return F
    H = cmap.hess(q)  # (..., k, d, d): H[a, i, j] = ∂_j ∂_i ξ_a
    # ∂_j G = (∂_j J) Jᵀ + J (∂_j J)ᵀ where (∂_j J)[a, i] = H[a, i, j]
    dJ = np.moveaxis(H, -1, -3)  # (..., d_j, k, d)
    dG = dJ @ np.swapaxes(J, -1, -2)[..., None, :, :] + J[..., None, :, :] @ np.swapaxes(dJ, -1, -2)
    # ∂_j M = −G⁻¹ (∂_j G) M + G⁻¹ ∂_j J ; divergence sums column j of ∂_j M
    dM = -Ginv[..., None, :, :] @ dG @ M[..., None, :, :] + Ginv[..., None, :, :] @ dJ
    div = np.einsum("...jaj->...a", dM)
    return F - div / beta


def check_affine_at_infinity(cmap: CoarseMap, radii, n: int = 256, seed: int = 0) -> dict:
    """Diagnose ``|Dξ(q) − T| ≤ C_ξ/(1+|q|)`` by sampling spheres of growing radius.

    The limit matrix is estimated from the largest sphere. Per radius the fitted
    constant is ``sup |Dξ − T_est| (1 + |q|)``; the check passes when these fits do
    not increase with the radius. The fitted power-law decay exponent of
    ``|D²ξ|`` is recorded as a diagnostic.
    """
    radii = np.asarray(radii, dtype=float)
    if radii.ndim != 1 or radii.size < 2 or np.any(np.diff(radii) <= 0):
        raise ValueError("radii must be strictly increasing with at least two entries")
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n, cmap.d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    T_est = cmap.jac(radii[-1] * dirs).mean(axis=0)
    fits, hess_sup = [], []
    for r in radii:
        q = r * dirs
        dev = np.linalg.norm(cmap.jac(q) - T_est, ord=2, axis=(-2, -1))
        fits.append(float(np.max(dev) * (1 + r)))
        hess_sup.append(float(np.max(np.abs(cmap.hess(q)))))
    fits = np.array(fits)
    tol = 1e-9 * max(1.0, fits.max())
    passed = bool(np.all(np.diff(fits) <= tol))
    hs = np.array(hess_sup)
    if np.all(hs > 0):
        decay = float(-np.polyfit(np.log1p(radii), np.log(hs), 1)[0])
    else:
        decay = float("inf")
    return {"T_est": T_est, "C_xi": float(fits.max()), "fits": fits.tolist(), "pass": passed,
            "hessian_decay_exponent": decay}


def truncate_density(f0, mu_weights, M: float) -> np.ndarray:
    """Clip a relative density to ``[1/M, M]`` and renormalize against ``μ``.

    ``f0`` are values of dρ₀/dμ per cell and ``mu_weights`` the cell masses of μ.
    """
    if not M > 1:
        raise ValueError("truncation level M must exceed 1")
    f0 = np.asarray(f0, dtype=float)
    w = np.asarray(mu_weights, dtype=float)
    if np.any(f0 < 0):
        raise ValueError("relative density must be nonnegative")
    if abs(np.sum(f0 * w) / np.sum(w) - 1.0) > 1e-8:
        raise ValueError("relative density must integrate to one against mu")
    clipped = np.clip(f0, 1.0 / M, M)
    Z = float(np.sum(clipped * w) / np.sum(w))
    return clipped / Z
