"""Coarse-graining maps ξ: ℝ^d → ℝ^k and their phase-space lift."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..errors import DegenerateMapError
from .expr import CompiledExpression

DEGENERACY_RCOND = 1e-10


@dataclass(frozen=True)
class AffineData:
    T: np.ndarray  # k x d, full rank
    tau: np.ndarray  # k


@dataclass(frozen=True)
class CoarseMap:
    """Vector-valued map with Jacobian ``(..., k, d)`` and Hessian ``(..., k, d, d)``."""

    d: int
    k: int
    xi: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]
    affine: Optional[AffineData] = None
    name: str = "custom"
    params: dict = field(default_factory=dict)
    gram_bound: float = 1e6  # declared C with DξDξᵀ ⪰ C⁻¹ Id

    def __post_init__(self):
        if not (1 <= self.k < self.d):
            raise ValueError("need 1 <= k < d")

    @property
    def is_affine(self) -> bool:
        return self.affine is not None

    def lap(self, q):
        return np.trace(self.hess(q), axis1=-2, axis2=-1)

    def gram(self, q):
        J = self.jac(q)
        return J @ np.swapaxes(J, -1, -2)

    def jac_det(self, q):
        """``Jac ξ = sqrt(det DξDξᵀ)``."""
        return np.sqrt(np.linalg.det(self.gram(q)))

    def checked_gram(self, q):
        G = self.gram(q)
        ev = np.linalg.eigvalsh(G)
        with np.errstate(divide="ignore", invalid="ignore"):
            rcond = ev[..., 0] / ev[..., -1]
        if np.any(~np.isfinite(rcond)) or np.any(rcond < DEGENERACY_RCOND):
            raise DegenerateMapError("DξDξᵀ is singular (reciprocal condition number below 1e-10)")
        return G

    # fiber geometry, affine maps only
    def fiber_basis(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(P, N)``: particular-solution operator and orthonormal kernel basis.

        A point on the fiber ``{ξ = z}`` is ``P (z − τ) + N s`` for ``s ∈ ℝ^{d−k}``.
        """
        if self.affine is None:
            raise ValueError("fiber basis requires an affine map")
        T = self.affine.T
        P = T.T @ np.linalg.inv(T @ T.T)
        _, _, vt = np.linalg.svd(T)
        N = vt[self.k:].T
        return P, N

    def fiber_anchor(self, z):
        """Particular solution of ``T q + τ = z``; scalars or 1-D arrays are read as k = 1 points."""
        P, _ = self.fiber_basis()
        z = np.asarray(z, dtype=float)
        if self.k == 1 and (z.ndim == 0 or z.shape[-1] != 1):
            z = z[..., None]
        return (z - self.affine.tau) @ P.T


def affine_map(T, tau=None, name: str = "affine") -> CoarseMap:
    T = np.atleast_2d(np.asarray(T, dtype=float))
    k, d = T.shape
    tau = np.zeros(k) if tau is None else np.atleast_1d(np.asarray(tau, dtype=float))
    if np.linalg.matrix_rank(T) < k:
        raise DegenerateMapError("affine map must have full row rank")
    T = T.copy()
    T.setflags(write=False)
    tau = tau.copy()
    tau.setflags(write=False)

    def xi(q):
        return np.asarray(q, dtype=float) @ T.T + tau

    def jac(q):
        q = np.asarray(q, dtype=float)
        return np.broadcast_to(T, q.shape[:-1] + (k, d)).copy()

    def hess(q):
        q = np.asarray(q, dtype=float)
        return np.zeros(q.shape[:-1] + (k, d, d))

    smin = np.linalg.svd(T, compute_uv=False).min()
    return CoarseMap(d, k, xi, jac, hess, affine=AffineData(T, tau), name=name,
                     params={"T": T.tolist(), "tau": tau.tolist()}, gram_bound=float(1.0 / smin ** 2))


def coordinate_map(d: int, indices=(0,)) -> CoarseMap:
    """Projection onto the listed coordinates."""
    idx = list(indices)
    T = np.zeros((len(idx), d))
    T[np.arange(len(idx)), idx] = 1.0
    m = affine_map(T, name="coordinate")
    return CoarseMap(m.d, m.k, m.xi, m.jac, m.hess, affine=m.affine, name="coordinate",
                     params={"d": d, "indices": idx}, gram_bound=1.0)


def rotated_map(theta: float) -> CoarseMap:
    """``ξ(q) = cos θ q1 + sin θ q2`` on ℝ²."""
    m = affine_map([[np.cos(theta), np.sin(theta)]], name="rotated")
    return CoarseMap(2, 1, m.xi, m.jac, m.hess, affine=m.affine, name="rotated",
                     params={"theta": float(theta)}, gram_bound=1.0)


def expression_map(components: list[str], d: int, name: str = "expression",
                   gram_bound: float = 1e6) -> CoarseMap:
    """Nonlinear map whose components are arithmetic expressions in ``q1..qd``."""
    comps = [CompiledExpression(c, d) for c in components]
    k = len(comps)

    def xi(q):
        return np.stack([c.value(q) for c in comps], axis=-1)

    def jac(q):
        return np.stack([c.gradient(q) for c in comps], axis=-2)

    def hess(q):
        return np.stack([c.hessian(q) for c in comps], axis=-3)

    return CoarseMap(d, k, xi, jac, hess, name=name, params={"components": list(components)},
                     gram_bound=gram_bound)


MAP_CATALOG: dict[str, Callable[..., CoarseMap]] = {
    "coordinate": lambda d=2, indices=(0,): coordinate_map(d, indices),
    "rotated": rotated_map,
    "affine": lambda T, tau=None: affine_map(T, tau),
    "expression": lambda components, d: expression_map(components, d),
}


def catalog_map(name: str, **params) -> CoarseMap:
    try:
        factory = MAP_CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown map {name!r}; known: {sorted(MAP_CATALOG)}") from None
    return factory(**params)


@dataclass(frozen=True)
class PhaseMap:
    """Lift ``Ξ(q, p) = (ξ(q), Dξ p)`` of an affine coarse map to phase space."""

    base: CoarseMap

    def __post_init__(self):
        if not self.base.is_affine:
            raise ValueError("phase-space coarse-graining requires an affine map")

    @property
    def T(self) -> np.ndarray:
        return self.base.affine.T

    def __call__(self, q, p):
        return self.base.xi(q), np.asarray(p, dtype=float) @ self.T.T


def check_map(m: CoarseMap, radius: float = 3.0, n: int = 200, seed: int = 0,
              rel_tol: float = 1e-6) -> dict:
    """Finite-difference and ellipticity checks on random points in a box."""
    rng = np.random.default_rng(seed)
    q = rng.uniform(-radius, radius, size=(n, m.d))
    J = m.jac(q)
    h = 1e-5
    J_fd = np.empty_like(J)
    H = m.hess(q)
    H_fd = np.empty_like(H)
    for i in range(m.d):
        e = np.zeros(m.d)
        e[i] = h
        J_fd[..., i] = (m.xi(q + e) - m.xi(q - e)) / (2 * h)
        H_fd[..., i] = (m.jac(q + e) - m.jac(q - e)) / (2 * h)
    err_J = float(np.max(np.abs(J - J_fd) / np.maximum(np.abs(J), 1.0)))
    err_H = float(np.max(np.abs(H - H_fd) / np.maximum(np.abs(H), 1.0)))
    gmin = float(np.linalg.eigvalsh(m.gram(q))[..., 0].min())
    out = {"jac_rel_err": err_J, "hess_rel_err": err_H, "min_gram_eig": gmin,
           "elliptic": gmin >= (1.0 - 1e-9) / m.gram_bound}
    if m.is_affine:
        T, tau = m.affine.T, m.affine.tau
        out["affine_exact"] = bool(np.array_equal(m.xi(q), q @ T.T + tau)
                                   and np.array_equal(J, np.broadcast_to(T, J.shape))
                                   and not np.any(H))
    out["pass"] = err_J <= rel_tol and err_H <= rel_tol and out["elliptic"] and out.get("affine_exact", True)
    return out
