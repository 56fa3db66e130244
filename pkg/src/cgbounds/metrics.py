"""Relative entropy, Wasserstein-2 and relative Fisher information.

Inputs may be grid densities, particle ensembles (or plain sample arrays) and,
through dedicated closed forms, Gaussians. Relative entropy returns
``math.inf`` when absolute continuity fails so that sweeps can record it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import GridMismatchError
from .grids import Grid, GridDensity
from .sampling import Ensemble

ASSIGNMENT_MAX = 512
DEFAULT_SLICES = 256


def _as_samples(x) -> tuple[np.ndarray, np.ndarray]:
    """Points ``(n, k)`` and normalized weights from an Ensemble or an array."""
    if isinstance(x, Ensemble):
        return x.points, x.normalized_weights()
    pts = np.asarray(x, dtype=float)
    pts = pts.reshape(-1, 1) if pts.ndim <= 1 else pts
    return pts, np.full(pts.shape[0], 1.0 / pts.shape[0])


def _check_same_grid(a: GridDensity, b: GridDensity):
    if not a.grid.same_as(b.grid):
        raise GridMismatchError("densities live on different grids")


# --------------------------------------------------------------- histograms

def freedman_diaconis_edges(x: np.ndarray) -> np.ndarray:
    return np.histogram_bin_edges(x, bins="fd")


def histogram_density(samples, grid: Grid) -> GridDensity:
    """Bin an ensemble on ``grid``; particles outside the grid are dropped and the rest renormalized."""
    pts, w = _as_samples(samples)
    if pts.shape[1] != grid.ndim:
        raise ValueError("sample dimension does not match the grid")
    H, _ = np.histogramdd(pts, bins=list(grid.edges), weights=w)
    if H.sum() <= 0:
        raise ValueError("no samples fall inside the grid")
    return GridDensity(grid, H / H.sum())


def histogram_pair(x, y, bins="fd") -> tuple[GridDensity, GridDensity, dict]:
    """Histogram two 1-D ensembles on common edges (Freedman–Diaconis on the pooled sample)."""
    px, wx = _as_samples(x)
    py, wy = _as_samples(y)
    if px.shape[1] != 1 or py.shape[1] != 1:
        raise ValueError("histogram_pair handles one-dimensional samples")
    pooled = np.concatenate([px[:, 0], py[:, 0]])
    edges = np.histogram_bin_edges(pooled, bins=bins)
    grid = Grid((edges,))
    spec = {"rule": bins if isinstance(bins, str) else "explicit", "n_bins": int(edges.size - 1),
            "range": [float(edges[0]), float(edges[-1])]}
    return histogram_density(x, grid), histogram_density(y, grid), spec


# ---------------------------------------------------------- relative entropy

def relative_entropy(zeta, nu) -> float:
    """``Σ ζ log(ζ/ν)`` over cells with ``0·log 0 = 0``; ``inf`` if ``ζ`` charges a ν-null cell.

    Ensembles are histogrammed on the grid of a grid-density partner, or on
    shared Freedman–Diaconis bins when both are ensembles.
    """
    if not isinstance(zeta, GridDensity) or not isinstance(nu, GridDensity):
        if isinstance(nu, GridDensity):
            zeta = histogram_density(zeta, nu.grid)
        elif isinstance(zeta, GridDensity):
            nu = histogram_density(nu, zeta.grid)
        else:
            zeta, nu, _ = histogram_pair(zeta, nu)
    _check_same_grid(zeta, nu)
    z, n = zeta.values, nu.values
    m = z > 0
    if np.any(n[m] <= 0):
        return math.inf
    return max(float(np.sum(z[m] * np.log(z[m] / n[m]))), 0.0)


# ------------------------------------------------------------- Wasserstein

@dataclass
class TransportResult:
    distance: float
    mode: str
    n_slices: Optional[int] = None
    details: dict = field(default_factory=dict)


def _grid_quantile_knots(d: GridDensity) -> tuple[np.ndarray, np.ndarray]:
    """Knots ``(u, Q(u))`` of the piecewise-linear quantile of a piecewise-uniform 1-D law."""
    e = d.grid.edges[0]
    v = d.values
    keep = v > 0
    u = np.concatenate([[0.0], np.cumsum(v[keep])])
    u[-1] = 1.0
    lo, hi = e[:-1][keep], e[1:][keep]
    # quantile rises linearly from lo to hi on each occupied cell; jumps across empty gaps
    return u, np.stack([lo, hi], axis=1)


def _w2_grid_1d(a: GridDensity, b: GridDensity) -> float:
    ua, xa = _grid_quantile_knots(a)
    ub, xb = _grid_quantile_knots(b)
    u = np.union1d(ua, ub)
    u0, u1 = u[:-1], u[1:]
    keep = u1 > u0
    u0, u1 = u0[keep], u1[keep]

    mid = 0.5 * (u0 + u1)
    ia = np.clip(np.searchsorted(ua, mid, side="right") - 1, 0, xa.shape[0] - 1)
    ib = np.clip(np.searchsorted(ub, mid, side="right") - 1, 0, xb.shape[0] - 1)

    def lin(uk, xk, i, s):
        du = uk[i + 1] - uk[i]
        frac = np.divide(s - uk[i], du, out=np.zeros_like(s), where=du > 0)
        return xk[i, 0] + np.clip(frac, 0.0, 1.0) * (xk[i, 1] - xk[i, 0])

    d0 = lin(ua, xa, ia, u0) - lin(ub, xb, ib, u0)
    d1 = lin(ua, xa, ia, u1) - lin(ub, xb, ib, u1)
    return float(np.sqrt(max(np.sum((u1 - u0) * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0), 0.0)))


def _w2_samples_1d(x, wx, y, wy) -> float:
    ix, iy = np.argsort(x), np.argsort(y)
    x, wx, y, wy = x[ix], wx[ix], y[iy], wy[iy]
    cx, cy = np.cumsum(wx), np.cumsum(wy)
    cx[-1] = cy[-1] = 1.0
    u = np.union1d(cx, cy)
    du = np.diff(np.concatenate([[0.0], u]))
    mid = u - 0.5 * du
    qx = x[np.minimum(np.searchsorted(cx, mid), x.size - 1)]
    qy = y[np.minimum(np.searchsorted(cy, mid), y.size - 1)]
    return float(np.sqrt(np.sum(du * (qx - qy) ** 2)))


def wasserstein2_detail(zeta, nu, n_slices: int = DEFAULT_SLICES, seed: int = 0) -> TransportResult:
    """W₂ with the mode used: exact quantile coupling in 1-D, assignment or sliced in higher dimension."""
    if isinstance(zeta, GridDensity) and isinstance(nu, GridDensity):
        if zeta.grid.ndim != 1 or nu.grid.ndim != 1:
            raise ValueError("grid W2 is available for one-dimensional densities only")
        return TransportResult(_w2_grid_1d(zeta, nu), "quantile-grid")
    if isinstance(zeta, GridDensity) or isinstance(nu, GridDensity):
        raise ValueError("mixing grid densities and ensembles is not supported for W2")
    px, wx = _as_samples(zeta)
    py, wy = _as_samples(nu)
    if px.shape[1] != py.shape[1]:
        raise ValueError("dimension mismatch")
    if px.shape[1] == 1:
        return TransportResult(_w2_samples_1d(px[:, 0], wx, py[:, 0], wy), "quantile-samples")
    uniform = np.allclose(wx, wx[0]) and np.allclose(wy, wy[0])
    if px.shape[0] == py.shape[0] and px.shape[0] <= ASSIGNMENT_MAX and uniform:
        C = ((px[:, None, :] - py[None, :, :]) ** 2).sum(-1)
        r, c = linear_sum_assignment(C)
        return TransportResult(float(np.sqrt(C[r, c].mean())), "assignment")
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_slices, px.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    sq = [_w2_samples_1d(px @ t, wx, py @ t, wy) ** 2 for t in dirs]
    # the sliced distance averages 1-D squared distances; rescaling by the dimension
    # makes it exact for pure translations and is recorded in the details
    dist = float(np.sqrt(px.shape[1] * np.mean(sq)))
    return TransportResult(dist, "sliced", n_slices, {"seed": seed, "dimension_rescaled": True})


def wasserstein2(zeta, nu, **kw) -> float:
    return wasserstein2_detail(zeta, nu, **kw).distance


# ------------------------------------------------------- Fisher information

def _broadcast_weight(weight, grid: Grid) -> np.ndarray:
    k = grid.ndim
    if weight is None:
        return np.broadcast_to(np.eye(k), grid.shape + (k, k))
    w = np.asarray(weight, dtype=float)
    if w.ndim == 0:
        return np.broadcast_to(w * np.eye(k), grid.shape + (k, k))
    if w.shape == (k, k):
        return np.broadcast_to(w, grid.shape + (k, k))
    if w.shape == grid.shape and k == 1:
        return w[..., None, None]
    if w.shape == grid.shape + (k, k):
        return w
    raise ValueError("weight must be a scalar, a k x k matrix or a per-cell field")


def fisher_information(zeta: GridDensity, nu: GridDensity, weight=None) -> float:
    """``Σ ζ |∇ log(ζ/ν)|²_A`` by differences of the log-ratio between cell centers.

    Interior occupied cells use centered differences; cells with an unoccupied
    neighbour fall back to the one-sided difference. Returns ``inf`` when
    ``ζ`` is not absolutely continuous with respect to ``ν``.
    """
    _check_same_grid(zeta, nu)
    z, n = zeta.density, nu.density
    occ = zeta.values > 0
    if np.any(n[occ] <= 0):
        return math.inf
    g = np.full(z.shape, np.nan)
    g[occ] = np.log(z[occ] / n[occ])
    grid = zeta.grid
    grads = []
    for ax, c in enumerate(grid.centers):
        gi = np.moveaxis(g, ax, 0)
        out = np.full(gi.shape, np.nan)
        cc = c.reshape((-1,) + (1,) * (gi.ndim - 1))
        central = (gi[2:] - gi[:-2]) / (cc[2:] - cc[:-2])
        fwd = (gi[1:] - gi[:-1]) / (cc[1:] - cc[:-1])
        out[1:-1] = central
        # one-sided where the centered stencil is unavailable
        left = np.concatenate([fwd[:1], fwd], axis=0)  # backward difference at i (uses i-1)
        right = np.concatenate([fwd, fwd[-1:]], axis=0)  # forward difference at i
        out = np.where(np.isnan(out), right, out)
        out = np.where(np.isnan(out), left, out)
        grads.append(np.moveaxis(np.nan_to_num(out), 0, ax))
    grad = np.stack(grads, axis=-1)
    W = _broadcast_weight(weight, grid)
    q = np.einsum("...i,...ij,...j->...", grad, W, grad)
    return float(np.sum(zeta.values[occ] * q[occ]))


# ------------------------------------------------------------- Gaussians

def _spd(S, name):
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if not np.allclose(S, S.T, atol=1e-12) or np.linalg.eigvalsh(S).min() <= 0:
        raise ValueError(f"{name} must be symmetric positive definite")
    return S


def _psd_sqrt(S):
    w, U = np.linalg.eigh(S)
    return (U * np.sqrt(np.maximum(w, 0.0))) @ U.T


def gaussian_divergences(m1, S1, m2, S2) -> tuple[float, float]:
    """``(H(N₁|N₂), W₂(N₁, N₂))`` in closed form."""
    S1, S2 = _spd(S1, "S1"), _spd(S2, "S2")
    m1, m2 = np.atleast_1d(np.asarray(m1, float)), np.atleast_1d(np.asarray(m2, float))
    dm = m2 - m1
    S2i = np.linalg.inv(S2)
    _, ld1 = np.linalg.slogdet(S1)
    _, ld2 = np.linalg.slogdet(S2)
    H = 0.5 * (np.trace(S2i @ S1) - S1.shape[0] + dm @ S2i @ dm + ld2 - ld1)
    r2 = _psd_sqrt(S2)
    cross = _psd_sqrt(r2 @ S1 @ r2)
    w2sq = dm @ dm + np.trace(S1 + S2 - 2 * cross)
    return max(float(H), 0.0), float(np.sqrt(max(w2sq, 0.0)))


def gaussian_fisher(m1, S1, m2, S2, weight=None) -> float:
    """Relative Fisher information ``I(N₁|N₂)`` (optionally with a constant weight matrix)."""
    S1, S2 = _spd(S1, "S1"), _spd(S2, "S2")
    m1, m2 = np.atleast_1d(np.asarray(m1, float)), np.atleast_1d(np.asarray(m2, float))
    W = np.eye(S1.shape[0]) if weight is None else np.atleast_2d(np.asarray(weight, float))
    K = np.linalg.inv(S2) - np.linalg.inv(S1)
    g = np.linalg.inv(S2) @ (m1 - m2)
    return float(np.trace(K @ W @ K @ S1) + g @ W @ g)


def gaussian_grid(m, S, grid: Grid) -> GridDensity:
    """Gaussian discretized by cell-center values times volumes."""
    m = np.atleast_1d(np.asarray(m, float))
    Si = np.linalg.inv(_spd(S, "S"))

    def logf(x):
        y = x - m
        return -0.5 * np.einsum("...i,ij,...j->...", y, Si, y)

    return GridDensity.from_log_density(grid, logf)
