"""Constants entering the error bounds, analytic or estimated from fiber samples.

Sup-type constants estimated from samples are lower estimates of the true
supremum over the whole space and are labelled as such. Functional-inequality
constants follow the convention that a Gaussian with covariance ``S`` has
``α = 1/λ_max(S)``.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path
from scipy.spatial import cKDTree

from .closure import fiber_observables, langevin_observables
from .integrators import AnalyticClosure, CoefficientField
from .model import CoarseMap, GibbsMeasure, Potential
from .sampling import ChainConfig, rng_stream, sample_conditional, sample_gibbs

ANALYTIC = "analytic"
ESTIMATED = "estimated-from-samples"


@dataclass
class ConstantsReport:
    name: str
    value: float
    provenance: str
    derivation: str = ""
    lower_estimate: bool = False
    sample_spec: dict = field(default_factory=dict)
    coverage_mass: Optional[float] = None
    tags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["value"] = None if not math.isfinite(self.value) else self.value
        return d


@dataclass(frozen=True)
class SampleSpec:
    """How fiber samples are drawn for estimated constants."""

    n_points: int = 400
    n_pairs: int = 1000
    seed: int = 0
    burn_in: int = 1000
    max_cells: int = 32  # occupied cells visited, evenly spread; 0 visits all

    def chain(self, stream: int) -> ChainConfig:
        return ChainConfig(burn_in=self.burn_in, seed=self.seed, stream=stream, n_chains=16)


def _quadratic_affine(pot: Potential, cmap: CoarseMap) -> bool:
    return pot.is_quadratic and cmap.is_affine


def _fiber_hessian(pot: Potential, cmap: CoarseMap) -> np.ndarray:
    _, N = cmap.fiber_basis()
    return N.T @ pot.hessian_matrix @ N


def _sqrtm_psd(A):
    w, U = np.linalg.eigh(A)
    return (U * np.sqrt(np.maximum(w, 0.0))) @ U.T


# --------------------------------------------------------------- fiber data

def _cells(coeffs: CoefficientField, spec: Optional[SampleSpec] = None):
    """Cell centers and the mask of cells to visit (occupied, thinned to ``spec.max_cells``)."""
    centers = coeffs.grid.mesh().reshape(-1, coeffs.grid.ndim)
    valid = coeffs.valid.reshape(-1).copy()
    if spec is not None and spec.max_cells and valid.sum() > spec.max_cells:
        occupied = np.flatnonzero(valid)
        keep = occupied[np.unique(np.linspace(0, occupied.size - 1, spec.max_cells).round().astype(int))]
        valid[:] = False
        valid[keep] = True
    return centers, valid


# fiber samples shared by the estimators of one scenario; entries keep their inputs alive so ids stay unique
_FIBER_CACHE: OrderedDict = OrderedDict()
_FIBER_CACHE_SIZE = 256


def _fiber_sampler(m: GibbsMeasure, cmap: CoarseMap, coeffs: CoefficientField, spec: SampleSpec):
    """Returns ``(cell index, z) -> fiber points``; non-affine maps share one binned Gibbs pool."""
    width = None if cmap.is_affine else min(float(w.min()) for w in coeffs.grid.widths)
    pool: list = []

    def draw(idx, z):
        key = (id(m.potential), m.beta, id(cmap), spec, width, int(idx), tuple(np.atleast_1d(z).tolist()))
        hit = _FIBER_CACHE.get(key)
        if hit is not None:
            _FIBER_CACHE.move_to_end(key)
            return hit[0]
        if width is not None and not pool:
            pool.append(sample_gibbs(m, max(50 * spec.n_points, 100_000), spec.chain(0)))
        pts = sample_conditional(m, cmap, z, spec.n_points, spec.chain(idx + 1), bin_width=width,
                                 pool=pool[0] if pool else None).points
        _FIBER_CACHE[key] = (pts, m.potential, cmap)
        if len(_FIBER_CACHE) > _FIBER_CACHE_SIZE:
            _FIBER_CACHE.popitem(last=False)
        return pts

    return draw


def _fiber_distance(cmap: CoarseMap, pts: np.ndarray, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    """Euclidean (exact for affine fibers) or k-NN graph geodesic on the sample cloud."""
    if cmap.is_affine:
        return np.linalg.norm(pts[i] - pts[j], axis=1)
    tree = cKDTree(pts)
    k = min(10, len(pts) - 1)
    dist, nbr = tree.query(pts, k + 1)
    rows = np.repeat(np.arange(len(pts)), k)
    G = csr_matrix((dist[:, 1:].ravel(), (rows, nbr[:, 1:].ravel())), shape=(len(pts), len(pts)))
    D = shortest_path(G, directed=False, indices=np.unique(i))
    lookup = {v: r for r, v in enumerate(np.unique(i))}
    out = D[[lookup[a] for a in i], j]
    # disconnected pairs fall back to the chord, which can only enlarge the ratio estimate
    return np.where(np.isfinite(out), out, np.linalg.norm(pts[i] - pts[j], axis=1))


def _pair_sup(values: np.ndarray, pts: np.ndarray, cmap: CoarseMap, n_pairs: int, rng,
              norm) -> float:
    n = len(pts)
    i = rng.integers(0, n, n_pairs)
    j = rng.integers(0, n, n_pairs)
    keep = i != j
    i, j = i[keep], j[keep]
    d = _fiber_distance(cmap, pts, i, j)
    ok = d > 1e-12
    if not ok.any():
        return 0.0
    return float(np.max(norm(values[i[ok]] - values[j[ok]]) / d[ok]))


def _estimate_sup(name, m, cmap, coeffs, spec, observable, norm_for_cell, derivation) -> ConstantsReport:
    centers, valid = _cells(coeffs, spec)
    best = 0.0
    counts = coeffs.counts.reshape(-1)
    draw = _fiber_sampler(m, cmap, coeffs, spec)
    for idx in np.flatnonzero(valid):
        pts = draw(idx, centers[idx])
        rng = rng_stream(spec.seed, 10_000 + idx)
        best = max(best, _pair_sup(observable(pts), pts, cmap, spec.n_pairs, rng, norm_for_cell(idx)))
    mass = None
    if counts.sum() > 0:
        mass = float(counts[coeffs.valid.reshape(-1)].sum() / counts.sum())
    return ConstantsReport(name, best, ESTIMATED, derivation, lower_estimate=True,
                           sample_spec=asdict(spec), coverage_mass=mass,
                           tags=["euclidean-fiber-distance" if cmap.is_affine else "graph-geodesic-approximation"])


# ------------------------------------------------------------ relative entropy

def kappa_relent(pot: Potential, cmap: CoarseMap, beta: float, coeffs: CoefficientField,
                 spec: Optional[SampleSpec] = None, mode: str = "auto") -> ConstantsReport:
    """Fiber Lipschitz constant of the local mean force in the ``A(z)`` norm."""
    if mode in ("auto", "analytic") and _quadratic_affine(pot, cmap):
        T = cmap.affine.T
        G = T @ T.T
        A = coeffs.A_values.reshape(-1, cmap.k, cmap.k)[coeffs.valid.reshape(-1)][0] if coeffs.valid.any() else G
        _, N = cmap.fiber_basis()
        M = _sqrtm_psd(A) @ np.linalg.solve(G, T @ pot.hessian_matrix @ N)
        return ConstantsReport("kappa_H", float(np.linalg.norm(M, 2)), ANALYTIC,
                               "quadratic potential, affine map: F varies linearly along fibers")
    if mode == "analytic":
        raise ValueError("no analytic kappa_H for this potential/map pair")
    from .model import local_mean_force

    m = GibbsMeasure(pot, beta)
    A_cells = coeffs.A_values.reshape(-1, cmap.k, cmap.k)

    def norm_for(idx):
        root = _sqrtm_psd(A_cells[idx])
        return lambda v: np.linalg.norm(v @ root.T, axis=1)

    return _estimate_sup("kappa_H", m, cmap, coeffs, spec or SampleSpec(),
                         lambda q: local_mean_force(pot, cmap, beta, q), norm_for,
                         "sup over sampled fiber pairs")


def lambda_relent_value(A, grams) -> float:
    """``sup ‖A^{-1/2}(A − G)G^{-1/2}‖`` over the given Gram matrices."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Ai = np.linalg.inv(_sqrtm_psd(A))
    best = 0.0
    for G in np.asarray(grams, dtype=float).reshape(-1, A.shape[0], A.shape[0]):
        Gi = np.linalg.inv(_sqrtm_psd(G))
        best = max(best, float(np.linalg.norm(Ai @ (A - G) @ Gi, 2)))
    return best


def lambda_relent(pot: Potential, cmap: CoarseMap, beta: float, coeffs: CoefficientField,
                  spec: Optional[SampleSpec] = None) -> ConstantsReport:
    """Zero for affine maps; otherwise the sampled sup over occupied fibers."""
    if cmap.is_affine:
        return ConstantsReport("lambda_H", 0.0, ANALYTIC, "affine map: A equals the constant Gram matrix")
    spec = spec or SampleSpec()
    m = GibbsMeasure(pot, beta)
    centers, valid = _cells(coeffs, spec)
    A_cells = coeffs.A_values.reshape(-1, cmap.k, cmap.k)
    best = 0.0
    draw = _fiber_sampler(m, cmap, coeffs, spec)
    for idx in np.flatnonzero(valid):
        pts = draw(idx, centers[idx])
        best = max(best, lambda_relent_value(A_cells[idx], cmap.gram(pts)))
    return ConstantsReport("lambda_H", best, ESTIMATED, "sup over sampled fiber points", True, asdict(spec))


# ----------------------------------------------------------------- Wasserstein

def kappa_lambda_wasser(pot: Potential, cmap: CoarseMap, beta: float, coeffs: Optional[CoefficientField] = None,
                        spec: Optional[SampleSpec] = None, mode: str = "auto"
                        ) -> tuple[ConstantsReport, ConstantsReport]:
    """Fiber Lipschitz constants of ``Dξ∇V − β⁻¹Δξ`` and of ``√(DξDξᵀ)`` (Frobenius)."""
    if mode in ("auto", "analytic") and _quadratic_affine(pot, cmap):
        _, N = cmap.fiber_basis()
        kw = float(np.linalg.norm(cmap.affine.T @ pot.hessian_matrix @ N, 2))
        return (ConstantsReport("kappa_W", kw, ANALYTIC, "quadratic potential, affine map"),
                ConstantsReport("lambda_W", 0.0, ANALYTIC, "affine map: constant Gram matrix"))
    if mode == "analytic":
        raise ValueError("no analytic kappa_W for this potential/map pair")
    if coeffs is None:
        raise ValueError("estimated mode needs a coefficient field to choose the cells")
    spec = spec or SampleSpec()
    m = GibbsMeasure(pot, beta)
    eucl = lambda idx: (lambda v: np.linalg.norm(v.reshape(len(v), -1), axis=1))  # noqa: E731
    kw = _estimate_sup("kappa_W", m, cmap, coeffs, spec,
                       lambda q: fiber_observables(pot, cmap, beta, q)[0], eucl, "sup over sampled fiber pairs")
    if cmap.is_affine:
        lw = ConstantsReport("lambda_W", 0.0, ANALYTIC, "affine map: constant Gram matrix")
    else:
        lw = _estimate_sup("lambda_W", m, cmap, coeffs, spec,
                           lambda q: np.stack([_sqrtm_psd(G) for G in cmap.gram(q)]), eucl,
                           "sup over sampled fiber pairs, Frobenius norm")
    return kw, lw


def kappa_langevin(pot: Potential, cmap: CoarseMap, beta: float, coeffs: Optional[CoefficientField] = None,
                   spec: Optional[SampleSpec] = None, mode: str = "auto") -> ConstantsReport:
    """Phase-space fiber Lipschitz constant of ``Dξ∇V``; momenta do not enter the numerator."""
    if mode in ("auto", "analytic") and _quadratic_affine(pot, cmap):
        _, N = cmap.fiber_basis()
        return ConstantsReport("kappa", float(np.linalg.norm(cmap.affine.T @ pot.hessian_matrix @ N, 2)), ANALYTIC,
                               "quadratic potential, affine map")
    if coeffs is None:
        raise ValueError("estimated mode needs a coefficient field to choose the cells")
    m = GibbsMeasure(pot, beta)
    eucl = lambda idx: (lambda v: np.linalg.norm(v, axis=1))  # noqa: E731
    return _estimate_sup("kappa", m, cmap, coeffs, spec or SampleSpec(),
                         lambda q: langevin_observables(pot, cmap, q)[0], eucl,
                         "sup over sampled position-fiber pairs (momentum displacements only enlarge the distance)")


# ----------------------------------------------------- functional inequalities

@dataclass
class AlphaReport:
    pi: ConstantsReport
    ti: ConstantsReport
    lsi: ConstantsReport
    adjustments: list = field(default_factory=list)

    def as_tuple(self):
        return self.pi, self.ti, self.lsi


def _ordered(pi: ConstantsReport, ti: ConstantsReport, lsi: ConstantsReport) -> AlphaReport:
    """Enforce ``α_LSI ≤ α_TI ≤ α_PI`` by lowering the larger constants."""
    notes = []
    if math.isfinite(pi.value) and ti.value > pi.value:
        notes.append(f"alpha_TI lowered from {ti.value:g} to alpha_PI")
        ti = replace(ti, value=pi.value, tags=ti.tags + ["ordering-enforced"])
    if lsi.value > ti.value:
        notes.append(f"alpha_LSI lowered from {lsi.value:g} to alpha_TI")
        lsi = replace(lsi, value=ti.value, tags=lsi.tags + ["ordering-enforced"])
    return AlphaReport(pi, ti, lsi, notes)


def alpha_constants(pot: Potential, cmap: CoarseMap, beta: float, mode: str = "gaussian-analytic",
                    regime: str = "overdamped", coeffs: Optional[CoefficientField] = None,
                    spec: Optional[SampleSpec] = None) -> AlphaReport:
    """Poincaré, Talagrand and log-Sobolev constants of the conditional Gibbs measures.

    ``regime="langevin"`` includes the conditional momentum Gaussian (covariance
    ``β⁻¹`` on the momentum fiber), which caps every constant at ``β``.
    """
    if regime not in ("overdamped", "langevin", "position-only"):
        raise ValueError("regime must be overdamped, langevin or position-only")
    cap = beta if regime == "langevin" else math.inf
    cap_tag = ["phase-space-conditional"] if regime == "langevin" else ["position-conditional"]
    if mode == "gaussian-analytic":
        if not _quadratic_affine(pot, cmap):
            raise ValueError("gaussian-analytic mode needs a quadratic potential and an affine map")
        a = min(beta * float(np.linalg.eigvalsh(_fiber_hessian(pot, cmap)).min()), cap)
        mk = lambda n: ConstantsReport(n, a, ANALYTIC, "1/lambda_max of the Gaussian fiber covariance",  # noqa: E731
                                       tags=list(cap_tag))
        return _ordered(mk("alpha_PI"), mk("alpha_TI"), mk("alpha_LSI"))
    spec = spec or SampleSpec()
    if coeffs is None:
        raise ValueError(f"{mode} mode needs a coefficient field to choose the cells")
    m = GibbsMeasure(pot, beta)
    centers, valid = _cells(coeffs, spec)
    draw = _fiber_sampler(m, cmap, coeffs, spec)
    if mode == "bakry-emery":
        worst = math.inf
        for idx in np.flatnonzero(valid):
            pts = draw(idx, centers[idx])
            H = pot.hess(pts)
            if cmap.is_affine:
                _, N = cmap.fiber_basis()
                Nb = np.broadcast_to(N, (len(pts),) + N.shape)
            else:
                Nb = np.stack([np.linalg.svd(J)[2][cmap.k:].T for J in cmap.jac(pts)])
            HN = np.swapaxes(Nb, -1, -2) @ H @ Nb
            worst = min(worst, float(np.linalg.eigvalsh(HN).min()))
        if not worst > 0:
            nan = lambda n: ConstantsReport(n, math.nan, ESTIMATED, "Bakry-Emery", True, asdict(spec),  # noqa: E731
                                            tags=["not-applicable", "nonconvex-fiber"])
            return AlphaReport(nan("alpha_PI"), nan("alpha_TI"), nan("alpha_LSI"))
        a = min(beta * worst, cap)
        tags = cap_tag + ([] if cmap.is_affine else ["tangent-projection-without-curvature"])
        mk = lambda n: ConstantsReport(n, a, ESTIMATED, "Bakry-Emery: beta * inf fiber Hessian eigenvalue",  # noqa: E731
                                       True, asdict(spec), tags=list(tags))
        return _ordered(mk("alpha_PI"), mk("alpha_TI"), mk("alpha_LSI"))
    if mode == "empirical-variance":
        # linear test functions give upper estimates of the Poincaré constant
        best = math.inf
        for idx in np.flatnonzero(valid):
            pts = draw(idx, centers[idx])
            C = np.atleast_2d(np.cov(pts.T))
            best = min(best, 1.0 / float(np.linalg.eigvalsh(C).max()))
        best = min(best, cap)
        pi = ConstantsReport("alpha_PI", best, ESTIMATED, "linear test functions (upper estimate)", False,
                             asdict(spec), tags=cap_tag + ["diagnostic-only", "upper-estimate"])
        nan = lambda n: ConstantsReport(n, math.nan, ESTIMATED, "not estimated", tags=["not-applicable"])  # noqa: E731
        return AlphaReport(pi, nan("alpha_TI"), nan("alpha_LSI"))
    raise ValueError(f"unknown mode {mode!r}")


# ------------------------------------------------------------------- c-tilde

def _sup_norms(closure, points: Optional[np.ndarray], k: int) -> tuple[float, float]:
    """``(‖∇b‖_∞, ‖div A‖_∞)`` by centered differences on cells or sample points."""
    if isinstance(closure, CoefficientField):
        g = closure.grid
        if g.ndim != 1:
            raise ValueError("grid sup norms implemented on 1-D grids")
        z = g.centers[0]
        v = closure.valid
        b = closure.b_values[:, 0]
        A = closure.A_values[:, 0, 0]
        db = np.gradient(b, z)
        dA = np.gradient(A, z)
        return float(np.max(np.abs(db[v]))), float(np.max(np.abs(dA[v])))
    if points is None:
        raise ValueError("analytic closures need evaluation points")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = pts.shape[1]
    h = 1e-5
    grad_b = np.zeros((pts.shape[0], k, n))
    divA = np.zeros((pts.shape[0], k))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        grad_b[:, :, j] = (closure.drift(pts + e) - closure.drift(pts - e)) / (2 * h)
        if j < k:
            divA += (closure.diffusion(pts + e)[:, :, j] - closure.diffusion(pts - e)[:, :, j]) / (2 * h)
    return (float(np.max(np.linalg.norm(grad_b, 2, axis=(-2, -1)))),
            float(np.max(np.linalg.norm(divA, axis=1))))


def ctilde(closure, beta: float, regime: str = "overdamped", gamma: Optional[float] = None,
           alpha: float = 0.0, points=None) -> ConstantsReport:
    """Growth exponent of the Wasserstein bounds.

    Overdamped: ``1 + max{4β⁻¹‖div A‖², 2‖∇b‖}``. Langevin:
    ``1 + max{1 − 2γ, α} + max{3 + α, 3α + 1}‖∇_{z,v} b‖``.
    """
    k = closure.k if hasattr(closure, "k") else 1
    grad_b, div_a = _sup_norms(closure, points, k)
    if regime == "overdamped":
        val = 1.0 + max(4.0 / beta * div_a ** 2, 2.0 * grad_b)
        name, deriv = "ctilde_W", "1 + max{4 div_A^2 / beta, 2 grad_b}"
    elif regime == "langevin":
        if gamma is None:
            raise ValueError("langevin ctilde needs gamma")
        val = 1.0 + max(1.0 - 2.0 * gamma, alpha) + max(3.0 + alpha, 3.0 * alpha + 1.0) * grad_b
        name, deriv = "ctilde", "1 + max{1 - 2 gamma, alpha} + max{3 + alpha, 3 alpha + 1} grad_b"
    else:
        raise ValueError("regime must be overdamped or langevin")
    prov = ANALYTIC if isinstance(closure, AnalyticClosure) else ESTIMATED
    return ConstantsReport(name, float(val), prov, deriv, lower_estimate=prov == ESTIMATED,
                           sample_spec={"grad_b_sup": grad_b, "div_A_sup": div_a, "alpha": alpha, "gamma": gamma})
