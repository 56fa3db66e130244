"""Effective and coarse-grained coefficients, fiber integrals and marginals.

For an affine map on the plane the fiber ``{ξ = z}`` is a line; integrals over
it use 64-point Gauss–Legendre rules on segments clipped to a box. Grid
densities with a coordinate map are handled exactly by summing grid columns.
"""

from __future__ import annotations

import warnings
from dataclasses import replace
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.legendre import leggauss
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import InsufficientOccupancyError
from .grids import Grid, GridDensity
from .integrators import CoefficientField
from .model import CoarseMap, GibbsMeasure, Potential
from .sampling import ChainConfig, Ensemble, batch_means_stderr, sample_conditional, sample_gibbs

GL_NODES = 64


def fiber_observables(pot: Potential, cmap: CoarseMap, beta: float, q) -> tuple[np.ndarray, np.ndarray]:
    """``Dξ∇V − β⁻¹Δξ`` (shape ``(..., k)``) and ``DξDξᵀ`` (shape ``(..., k, k)``)."""
    q = np.asarray(q, dtype=float)
    J = cmap.jac(q)
    f = np.einsum("...ij,...j->...i", J, pot.grad(q))
    if not cmap.is_affine:
        f = f - cmap.lap(q) / beta
    return f, J @ np.swapaxes(J, -1, -2)


def langevin_observables(pot: Potential, cmap: CoarseMap, q) -> tuple[np.ndarray, np.ndarray]:
    """``Dξ∇V`` and the constant ``TTᵀ`` for the phase-space closure."""
    J = cmap.jac(q)
    T = cmap.affine.T
    f = np.einsum("...ij,...j->...i", J, pot.grad(q))
    return f, np.broadcast_to(T @ T.T, f.shape[:-1] + (cmap.k, cmap.k))


# ------------------------------------------------------------ fiber geometry

def _require_planar_affine(cmap: CoarseMap):
    if not (cmap.is_affine and cmap.d == 2 and cmap.k == 1):
        raise NotImplementedError("fiber quadrature is implemented for affine maps from R^2 to R")


def fiber_segment(cmap: CoarseMap, z: float, box) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Anchor, unit direction and parameter range of the fiber line inside ``box``."""
    _require_planar_affine(cmap)
    _, N = cmap.fiber_basis()
    n = N[:, 0]
    a = cmap.fiber_anchor(z).reshape(-1)
    lo, hi = -np.inf, np.inf
    for ax, (b0, b1) in enumerate(np.asarray(box, dtype=float)):
        if abs(n[ax]) < 1e-14:
            if not b0 <= a[ax] <= b1:
                return a, n, 0.0, 0.0
            continue
        s0, s1 = sorted(((b0 - a[ax]) / n[ax], (b1 - a[ax]) / n[ax]))
        lo, hi = max(lo, s0), min(hi, s1)
    return a, n, lo, max(lo, hi)


def fiber_nodes(cmap: CoarseMap, z: float, box, n_segments: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature points on the fiber and weights for the length element ``ds``."""
    a, n, lo, hi = fiber_segment(cmap, z, box)
    if hi <= lo:
        return np.empty((0, 2)), np.empty(0)
    x, w = leggauss(GL_NODES)
    edges = np.linspace(lo, hi, n_segments + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    s = (mid[:, None] + half[:, None] * x[None, :]).reshape(-1)
    ws = (half[:, None] * w[None, :]).reshape(-1)
    return a + s[:, None] * n[None, :], ws


def fiber_integral(psi: Callable, cmap: CoarseMap, z, box, n_segments: int = 8) -> np.ndarray:
    """``ψ^ξ(z) = ∫_{ξ=z} ψ / Jac ξ dH`` for each ``z``."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    jac = float(cmap.jac_det(np.zeros(cmap.d)))
    out = np.empty(z.size)
    for i, zi in enumerate(z):
        pts, w = fiber_nodes(cmap, zi, box, n_segments)
        out[i] = float(w @ np.asarray(psi(pts), dtype=float)) / jac if w.size else 0.0
    return out


def _bilinear(density: GridDensity, pts: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of the cell-center density values (zero outside the grid)."""
    g = density.grid
    vals = density.density
    from .integrators import _multilinear

    inside = np.ones(len(pts), dtype=bool)
    for a, e in enumerate(g.edges):
        inside &= (pts[:, a] >= e[0]) & (pts[:, a] <= e[-1])
    out = np.zeros(len(pts))
    if inside.any():
        out[inside] = _multilinear(g.centers, vals, pts[inside])
    return out


# ---------------------------------------------------------------- closures

def effective_coefficients(m: GibbsMeasure, cmap: CoarseMap, grid: Grid, n_per_cell: int = 2000,
                           cfg: ChainConfig = ChainConfig(burn_in=2000), method: str = "sampling",
                           regime: str = "overdamped", box=None) -> CoefficientField:
    """Conditional Gibbs expectations ``b = E[Dξ∇V − β⁻¹Δξ]`` and ``A = E[DξDξᵀ]`` per cell.

    ``method="sampling"`` uses fiber MCMC (batch-means standard errors);
    ``method="quadrature"`` integrates the conditional density on the fiber
    line (planar affine maps). In the ``"langevin"`` regime the drift is
    ``E[Dξ∇V]`` and ``A = TTᵀ`` exactly.
    """
    if regime not in ("overdamped", "langevin"):
        raise ValueError("regime must be 'overdamped' or 'langevin'")
    if regime == "langevin" and not cmap.is_affine:
        raise ValueError("phase-space closures require an affine map")
    k = cmap.k
    if grid.ndim != k:
        raise ValueError("coarse grid dimension must equal k")
    centers = grid.mesh().reshape(-1, k)
    b = np.empty((centers.shape[0], k))
    A = np.empty((centers.shape[0], k, k))
    se = np.empty((centers.shape[0], k))
    counts = np.empty(centers.shape[0])
    pot, beta = m.potential, m.beta

    pool = None
    if method == "sampling" and not cmap.is_affine:
        pool = sample_gibbs(m, max(50 * n_per_cell, 100_000), cfg)
    widths = min(float(w.min()) for w in grid.widths)

    def observe(q):
        return langevin_observables(pot, cmap, q) if regime == "langevin" else fiber_observables(pot, cmap, beta, q)

    for i, z in enumerate(centers):
        if method == "sampling":
            cs = sample_conditional(m, cmap, z, n_per_cell, replace(cfg, stream=cfg.stream * 100_003 + i),
                                    bin_width=widths, pool=pool)
            f, G = observe(cs.points)
            b[i], A[i] = f.mean(axis=0), G.mean(axis=0)
            se[i] = batch_means_stderr(f, cs.chain_ids)
            counts[i] = cs.points.shape[0]
        elif method == "quadrature":
            if box is None:
                raise ValueError("quadrature needs the full-space box")
            pts, w = fiber_nodes(cmap, z[0], box)
            lw = -beta * pot.eval(pts)
            wt = w * np.exp(lw - lw.max())
            wt /= wt.sum()
            f, G = observe(pts)
            b[i], A[i] = wt @ f, np.einsum("n,nij->ij", wt, G)
            se[i] = 0.0
            counts[i] = pts.shape[0]
        else:
            raise ValueError(f"unknown method {method!r}")
    shape = grid.shape
    return CoefficientField(grid, b.reshape(shape + (k,)), A.reshape(shape + (k, k)), counts.reshape(shape),
                            b_stderr=se.reshape(shape + (k,)), time=None,
                            meta={"kind": "effective", "method": method, "regime": regime})


def cg_coefficients(state, pot: Potential, cmap: CoarseMap, beta: float, grid: Grid,
                    min_count: int = 20, regime: str = "overdamped") -> CoefficientField:
    """Conditional averages against the evolving law, time-stamped with ``state.time``.

    Ensembles are binned by ``ξ`` (or by ``(ξ(q), Tp)`` for phase-space
    ensembles in the Langevin regime); 2-D grid densities use column sums for
    coordinate maps and fiber quadrature otherwise. Cells with fewer than
    ``min_count`` particles (or zero mass) are flagged missing.
    """
    if isinstance(state, Ensemble):
        return _cg_from_ensemble(state, pot, cmap, beta, grid, min_count, regime)
    if isinstance(state, GridDensity):
        return _cg_from_grid(state, pot, cmap, beta, grid)
    raise TypeError("state must be an Ensemble or a GridDensity")


def _cg_from_ensemble(ens, pot, cmap, beta, grid, min_count, regime):
    if regime == "langevin":
        if ens.momenta is None:
            raise ValueError("langevin regime needs a phase-space ensemble")
        coords = np.hstack([cmap.xi(ens.points), ens.momenta @ cmap.affine.T.T])
        f, G = langevin_observables(pot, cmap, ens.points)
    else:
        coords = cmap.xi(ens.points)
        f, G = fiber_observables(pot, cmap, beta, ens.points)
    if coords.shape[1] != grid.ndim:
        raise ValueError("grid dimension does not match the binned coordinates")
    k = f.shape[1]
    flat = np.zeros(coords.shape[0], dtype=int)
    inside = np.ones(coords.shape[0], dtype=bool)
    for a, e in enumerate(grid.edges):
        j = np.searchsorted(e, coords[:, a], side="right") - 1
        j = np.where(coords[:, a] == e[-1], e.size - 2, j)
        inside &= (j >= 0) & (j < e.size - 1)
        flat = flat * (e.size - 1) + np.clip(j, 0, e.size - 2)
    ncell = int(np.prod(grid.shape))
    w = ens.normalized_weights() * ens.n
    flat, w, f, G = flat[inside], w[inside], f[inside], G[inside]
    cnt = np.bincount(flat, minlength=ncell).astype(float)
    wsum = np.bincount(flat, weights=w, minlength=ncell)
    safe = np.where(wsum > 0, wsum, 1.0)
    b = np.stack([np.bincount(flat, weights=w * f[:, i], minlength=ncell) for i in range(k)], -1) / safe[:, None]
    b2 = np.stack([np.bincount(flat, weights=w * f[:, i] ** 2, minlength=ncell) for i in range(k)], -1) / safe[:, None]
    A = np.stack([np.stack([np.bincount(flat, weights=w * G[:, i, j], minlength=ncell) for j in range(k)], -1)
                  for i in range(k)], -2) / safe[:, None, None]
    var = np.maximum(b2 - b * b, 0.0)
    se = np.sqrt(var / np.maximum(cnt, 1.0)[:, None])
    ok = cnt >= min_count
    counts = np.where(ok, cnt, 0.0)
    A[~ok] = np.eye(k)
    shape = grid.shape
    return CoefficientField(grid, b.reshape(shape + (k,)), A.reshape(shape + (k, k)), counts.reshape(shape),
                            b_stderr=se.reshape(shape + (k,)), time=ens.time,
                            meta={"kind": "coarse-grained", "source": "ensemble", "regime": regime,
                                  "raw_counts": cnt.tolist(), "coverage_mass": float(wsum[ok].sum() / ens.n)})


def _cg_from_grid(rho: GridDensity, pot, cmap, beta, grid):
    full = rho.grid
    if full.ndim != 2:
        raise ValueError("grid-density closures need a 2-D density")
    axis = _coordinate_axis(cmap)
    if axis is not None and np.array_equal(full.edges[axis], grid.edges[0]):
        # exact column sums; the tensor of cell values is weighted per column
        f, G = fiber_observables(pot, cmap, beta, full.mesh())
        p = rho.values if axis == 0 else rho.values.T
        f = f if axis == 0 else np.swapaxes(f, 0, 1)
        G = G if axis == 0 else np.swapaxes(G, 0, 1)
        mass = p.sum(axis=1)
        safe = np.where(mass > 0, mass, 1.0)
        b = np.einsum("ij,ijk->ik", p, f) / safe[:, None]
        A = np.einsum("ij,ijkl->ikl", p, G) / safe[:, None, None]
        A[mass <= 0] = np.eye(cmap.k)
        return CoefficientField(grid, b, A, mass, time=rho.time,
                                meta={"kind": "coarse-grained", "source": "grid-columns"})
    _require_planar_affine(cmap)
    box = [(e[0], e[-1]) for e in full.edges]
    centers = grid.centers[0]
    b = np.zeros((centers.size, 1))
    A = np.ones((centers.size, 1, 1))
    mass = np.zeros(centers.size)
    for i, z in enumerate(centers):
        pts, w = fiber_nodes(cmap, z, box)
        if not w.size:
            continue
        dens = _bilinear(rho, pts) * w
        tot = dens.sum()
        if tot <= 0:
            continue
        f, G = fiber_observables(pot, cmap, beta, pts)
        b[i] = dens @ f / tot
        A[i] = np.einsum("n,nij->ij", dens, G) / tot
        mass[i] = tot
    return CoefficientField(grid, b, A, mass, time=rho.time,
                            meta={"kind": "coarse-grained", "source": "grid-fiber-quadrature"})


def _coordinate_axis(cmap: CoarseMap) -> Optional[int]:
    if not cmap.is_affine or cmap.k != 1:
        return None
    T = cmap.affine.T[0]
    nz = np.flatnonzero(T)
    if nz.size == 1 and T[nz[0]] == 1.0 and cmap.affine.tau[0] == 0.0:
        return int(nz[0])
    return None


# ---------------------------------------------------------------- marginals

def marginal_density(psi, cmap: CoarseMap, grid: Grid, box=None, n_sub: int = 8,
                     normalized: bool = True) -> GridDensity:
    """Push-forward of a 2-D density (grid or callable) under ``ξ`` onto a 1-D grid.

    Grid input with a coordinate map whose axis edges coincide with ``grid``
    is summed exactly. Other grid input splits every cell into ``n_sub²``
    equal-mass sub-cells, which preserves total mass exactly. Callables are
    integrated along fibers and multiplied by cell widths; when ``normalized``
    is set, a captured mass below ``1 − 1e−6`` triggers a truncated-fiber
    warning.
    """
    if isinstance(psi, GridDensity):
        full = psi.grid
        axis = _coordinate_axis(cmap)
        if axis is not None and np.array_equal(full.edges[axis], grid.edges[0]):
            return GridDensity(grid, psi.values.sum(axis=1 - axis), psi.time)
        u = (np.arange(n_sub) + 0.5) / n_sub
        sub = [e[:-1, None] + np.diff(e)[:, None] * u[None, :] for e in full.edges]
        X, Y = sub[0].reshape(-1), sub[1].reshape(-1)
        pts = np.stack(np.meshgrid(X, Y, indexing="ij"), axis=-1)
        z = cmap.xi(pts)[..., 0]
        mass = np.repeat(np.repeat(psi.values, n_sub, axis=0), n_sub, axis=1) / n_sub ** 2
        e = grid.edges[0]
        j = np.clip(np.searchsorted(e, z, side="right") - 1, 0, e.size - 2)
        vals = np.bincount(j.reshape(-1), weights=mass.reshape(-1), minlength=e.size - 1)
        return GridDensity(grid, vals / vals.sum(), psi.time)
    if box is None:
        raise ValueError("callable input needs the full-space box")
    vals = fiber_integral(psi, cmap, grid.centers[0], box) * grid.widths[0]
    captured = float(vals.sum())
    if normalized and captured < 1 - 1e-6:
        warnings.warn(f"truncated fibers: captured mass fraction {captured:.6g}", RuntimeWarning)
    return GridDensity(grid, vals / captured)


def levelset_gradient_check(psi: Callable, grad_psi: Callable, cmap: CoarseMap, grid: Grid, box,
                            floor: float = 1e-12) -> dict:
    """Compare finite differences of ``ψ^ξ`` with the fiber integral of ``div(ψ G⁻¹Dξ)/Jac ξ``.

    The error per interior cell is normalized by the sup norm of the fiber
    integral; cells where ``ψ^ξ`` vanishes (below ``floor`` times its max) are
    excluded.
    """
    _require_planar_affine(cmap)
    z = grid.centers[0]
    marg = fiber_integral(psi, cmap, z, box)
    T = cmap.affine.T
    direction = (np.linalg.inv(T @ T.T) @ T)[0]  # G⁻¹Dξ, constant for affine maps
    rhs = fiber_integral(lambda q: np.asarray(grad_psi(q)) @ direction, cmap, z, box)
    fd = (marg[2:] - marg[:-2]) / (z[2:] - z[:-2])
    inner = rhs[1:-1]
    keep = marg[1:-1] > floor * marg.max()
    scale = np.max(np.abs(inner[keep])) if keep.any() else 0.0
    err = np.abs(fd - inner)[keep]
    rel = float(err.max() / scale) if scale > 0 else float(err.max(initial=0.0))
    return {"max_relative_error": rel, "n_cells": int(keep.sum()), "fd": fd, "fiber": inner}


def gradient_flow_residual(coeffs: CoefficientField, grad_log_marginal: Callable, beta: float) -> float:
    """Sup over valid cells of ``|div_z A + βb + A ∇_z log μ̂|`` (1-D coarse grids)."""
    if coeffs.grid.ndim != 1 or coeffs.k != 1:
        raise ValueError("gradient-flow residual implemented for k = 1")
    z = coeffs.grid.centers[0]
    A = coeffs.A_values[:, 0, 0]
    divA = np.gradient(A, z)
    r = divA + beta * coeffs.b_values[:, 0] + A * np.asarray(grad_log_marginal(z), dtype=float)
    return float(np.max(np.abs(r[coeffs.valid])))


# ------------------------------------------------------------- estimator API

class ClosureEstimator(RegressorMixin, BaseEstimator):
    """Fit coarse drift and diffusion on a 1-D grid; ``predict`` returns the drift.

    ``fit(X)`` with an array of configurations bins them by ``ξ`` and averages
    the closure observables (for Gibbs samples this estimates the effective
    coefficients, for a time-``t`` ensemble the coarse-grained ones).
    ``fit(None)`` computes effective coefficients from the Gibbs measure with
    the chosen ``method``.
    """

    def __init__(self, potential=None, coarse_map=None, beta=1.0, bounds=(-4.0, 4.0), n_bins=40,
                 method="quadrature", box=None, n_per_cell=2000, min_count=20, seed=0):
        self.potential = potential
        self.coarse_map = coarse_map
        self.beta = beta
        self.bounds = bounds
        self.n_bins = n_bins
        self.method = method
        self.box = box
        self.n_per_cell = n_per_cell
        self.min_count = min_count
        self.seed = seed

    def _validate_params(self):
        if self.potential is None or self.coarse_map is None:
            raise ValueError("potential and coarse_map are required")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.coarse_map.k != 1:
            raise ValueError("ClosureEstimator supports k = 1")

    def fit(self, X=None, y=None):
        self._validate_params()
        grid = Grid.uniform([self.bounds], self.n_bins)
        if X is None:
            m = GibbsMeasure(self.potential, self.beta)
            self.field_ = effective_coefficients(m, self.coarse_map, grid, self.n_per_cell,
                                                 ChainConfig(burn_in=2000, seed=self.seed), self.method,
                                                 box=self.box)
        else:
            X = check_array(X, ensure_min_samples=1)
            if X.shape[1] != self.coarse_map.d:
                raise ValueError(f"X has {X.shape[1]} features, map expects {self.coarse_map.d}")
            self.field_ = cg_coefficients(Ensemble(X), self.potential, self.coarse_map, self.beta, grid,
                                          self.min_count)
        if not self.field_.valid.any():
            raise InsufficientOccupancyError("no grid cell reached min_count")
        self.grid_ = grid
        self.n_features_in_ = self.coarse_map.d
        return self

    def _coarse_points(self, Z):
        Z = check_array(np.asarray(Z, dtype=float).reshape(-1, 1) if np.ndim(Z) < 2 else Z)
        if Z.shape[1] != 1:
            raise ValueError("expected coarse points with one feature")
        return Z

    def predict(self, Z):
        check_is_fitted(self, "field_")
        return self.field_.drift(self._coarse_points(Z))[:, 0]

    def predict_diffusion(self, Z):
        check_is_fitted(self, "field_")
        return self.field_.diffusion(self._coarse_points(Z))[:, 0, 0]
