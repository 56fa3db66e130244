"""Rate functional of coarse trajectories and assembly of the error bounds.

The defect field ``h`` of a coarse trajectory against the effective equation
is the object the rate functional integrates; the same field is sometimes
written ``r`` and both names refer to it here.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .closure import fiber_nodes, fiber_observables, _bilinear
from .errors import IncompleteReportError
from .funcineq import ConstantsReport
from .grids import Grid, GridDensity
from .integrators import CoefficientField
from .metrics import fisher_information, relative_entropy
from .model import CoarseMap, Potential

THEOREMS = ("relent-od", "wasser-od", "relent-lan", "wasser-lan")


@dataclass
class BoundReport:
    theorem: str
    times: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    constants: list
    tolerance: float = 1e-3
    coverage_mass: Optional[float] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.lhs = np.asarray(self.lhs, dtype=float)
        self.rhs = np.asarray(self.rhs, dtype=float)

    @property
    def margin(self) -> np.ndarray:
        return self.rhs - self.lhs

    @property
    def verdict(self) -> str:
        return "pass" if bool(np.all(self.margin >= -self.tolerance)) else "fail"

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        return {"theorem": self.theorem, "times": self.times.tolist(), "lhs": self.lhs.tolist(),
                "rhs": self.rhs.tolist(), "margin": self.margin.tolist(), "verdict": self.verdict,
                "tolerance": self.tolerance, "coverage_mass": self.coverage_mass,
                "constants": [c.to_dict() for c in self.constants], "meta": self.meta}

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True, default=_jsonable)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def rows(self, scenario: str = "", eps: Optional[float] = None) -> list[dict]:
        return [{"theorem": self.theorem, "scenario": scenario, "eps": eps, "time": float(t), "lhs": float(a),
                 "rhs": float(b), "margin": float(b - a), "verdict": self.verdict}
                for t, a, b in zip(self.times, self.lhs, self.rhs)]


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    return str(o)


# ------------------------------------------------------------ rate functional

@dataclass
class RateResult:
    times: np.ndarray
    cumulative: np.ndarray  # I over [0, t] for each output time
    density: np.ndarray  # (β/4)∫|h_t|²_{A⁻¹} dρ̂_t per time
    h: list  # h_t on the coarse grid per time
    excluded_mass: float
    meta: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        return float(self.cumulative[-1])


def _d(values, z):
    return np.gradient(values, z)


def defect_field(rho_hat: GridDensity, cg: CoefficientField, eff: CoefficientField, beta: float
                 ) -> tuple[np.ndarray, np.ndarray]:
    """``h = (b + β⁻¹A') − (b̂ + β⁻¹Â') + β⁻¹(A − Â)(log ρ̂)'`` and the mask of positive cells."""
    z = rho_hat.grid.centers[0]
    cgf, eff_ = cg.filled(), eff.filled()
    b, A = eff_.b_values[:, 0], eff_.A_values[:, 0, 0]
    bh, Ah = cgf.b_values[:, 0], cgf.A_values[:, 0, 0]
    pos = rho_hat.values > 0
    logr = np.log(np.where(pos, rho_hat.density, 1.0))
    h = (b + _d(A, z) / beta) - (bh + _d(Ah, z) / beta)
    if not np.array_equal(A, Ah):
        h = h + (A - Ah) * _d(logr, z) / beta
    return h, pos


def rate_functional(traj_hat: Sequence[GridDensity], cg_fields: Sequence[CoefficientField],
                    eff: CoefficientField, beta: float, times=None) -> RateResult:
    """``I = (β/4)∫∫|h_t|²_{A⁻¹} dρ̂_t dt`` with trapezoidal time quadrature (cumulative)."""
    if len(traj_hat) != len(cg_fields):
        raise ValueError("one coefficient field per trajectory time is required")
    times = np.array([d.time for d in traj_hat] if times is None else times, dtype=float)
    dens, hs, excluded = [], [], 0.0
    A = eff.filled().A_values[:, 0, 0]
    for rho, cg in zip(traj_hat, cg_fields):
        if not rho.grid.same_as(eff.grid):
            raise ValueError("trajectory and closure grids differ")
        h, pos = defect_field(rho, cg, eff, beta)
        excluded = max(excluded, float(rho.values[~pos].sum()))
        dens.append(beta / 4.0 * float(np.sum(rho.values[pos] * h[pos] ** 2 / A[pos])))
        hs.append(h)
    dens = np.array(dens)
    cum = cumulative_trapezoid(dens, times, initial=0.0) if len(times) > 1 else np.zeros(1)
    return RateResult(times, cum, dens, hs, excluded,
                      {"note": "h and r denote the same defect field", "quadrature": "trapezoid"})


def defect_conditional_form(rho: GridDensity, pot: Potential, cmap: CoarseMap, beta: float, coarse: Grid,
                            eff: CoefficientField) -> np.ndarray:
    """Conditional-expectation representation ``h = −A(E_ρ̄[F] − E_μ̄[F])`` for affine maps.

    For affine maps ``A = DξDξᵀ`` so the Fisher-type term drops out; ``E_μ̄[F]``
    is taken from the supplied effective coefficients (``F = G⁻¹·b`` for
    affine maps) and ``E_ρ̄[F]`` from fiber quadrature of the 2-D density.
    """
    if not cmap.is_affine or cmap.k != 1:
        raise NotImplementedError("conditional form implemented for affine maps with k = 1")
    T = cmap.affine.T
    G = float((T @ T.T)[0, 0])
    box = [(e[0], e[-1]) for e in rho.grid.edges]
    z = coarse.centers[0]
    out = np.full(z.size, np.nan)
    A = eff.filled().A_values[:, 0, 0]
    b = eff.filled().b_values[:, 0]
    for i, zi in enumerate(z):
        pts, w = fiber_nodes(cmap, zi, box)
        if not w.size:
            continue
        wt = _bilinear(rho, pts) * w
        if wt.sum() <= 0:
            continue
        f, _ = fiber_observables(pot, cmap, beta, pts)
        EF_rho = float(wt @ f[:, 0] / wt.sum()) / G
        out[i] = -A[i] * (EF_rho - b[i] / G)
    return out


def fisher_integral(traj_full: Sequence[GridDensity], mu: GridDensity, times=None) -> np.ndarray:
    """Cumulative ``∫₀ᵗ I(ρ_s|μ) ds`` (trapezoid)."""
    times = np.array([d.time for d in traj_full] if times is None else times, dtype=float)
    fi = np.array([fisher_information(d, mu) for d in traj_full])
    return cumulative_trapezoid(fi, times, initial=0.0)


def rate_functional_bound(kappa_H: float, lambda_H: float, alpha_TI: float, alpha_LSI: float, beta: float,
                          fisher_cumulative: np.ndarray) -> np.ndarray:
    """Upper bound ``¼(λ²/β + κ²β/(α_TI α_LSI))∫₀ᵗ I(ρ_s|μ) ds`` for the rate functional."""
    pref = 0.25 * (lambda_H ** 2 / beta + kappa_H ** 2 * beta / (alpha_TI * alpha_LSI))
    return pref * np.asarray(fisher_cumulative)


# ------------------------------------------------------------ verification

def verify_entropy_rate_inequality(traj_hat: Sequence[GridDensity], traj_eff: Sequence[GridDensity],
                                   cg_fields: Sequence[CoefficientField], eff: CoefficientField, beta: float,
                                   tau: Optional[float] = None, tolerance: float = 1e-3) -> BoundReport:
    """``H(ρ̂_t|η_t) ≤ H(ρ̂₀|η₀) + I(ρ̂)`` at each output time.

    With ``tau`` in (0, 1] the strengthened form adds
    ``(1 − τ)β⁻¹∫₀ᵗ I_A(ρ̂_s|η_s) ds`` to the left side and divides ``I`` by ``τ``.
    """
    rate = rate_functional(traj_hat, cg_fields, eff, beta)
    H = np.array([relative_entropy(a, b) for a, b in zip(traj_hat, traj_eff)])
    lhs = H.copy()
    rhs = H[0] + rate.cumulative
    meta = {"rate_functional": rate.cumulative.tolist(), "excluded_mass": rate.excluded_mass,
            "defect_note": rate.meta["note"]}
    name = "entropy-rate"
    if tau is not None:
        if not 0 < tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        A = eff.filled().A_values[:, 0, 0]
        fis = np.array([fisher_information(a, b, weight=A) for a, b in zip(traj_hat, traj_eff)])
        fint = cumulative_trapezoid(fis, rate.times, initial=0.0)
        lhs = H + (1 - tau) / beta * fint
        rhs = H[0] + rate.cumulative / tau
        meta.update(tau=tau, fisher_integral=fint.tolist())
        name = f"entropy-rate-tau{tau:g}"
    return BoundReport(name, rate.times, lhs, rhs, [], tolerance, meta=meta)


def _need(constants: dict, names: Sequence[str]) -> dict:
    missing = [n for n in names if n not in constants or constants[n] is None]
    if missing:
        raise IncompleteReportError(missing)
    return {n: (c.value if isinstance(c, ConstantsReport) else float(c)) for n, c in constants.items()}


def _reports(constants: dict) -> list:
    return [c if isinstance(c, ConstantsReport) else ConstantsReport(n, float(c), "supplied")
            for n, c in constants.items() if c is not None]


def assemble_bound(theorem: str, times, lhs, constants: dict, beta: float, *, initial: float = 0.0,
                   entropy_drop=None, entropy0: Optional[float] = None, gamma: Optional[float] = None,
                   alpha: Optional[float] = None, tolerance: float = 1e-3,
                   coverage_mass: Optional[float] = None) -> BoundReport:
    """Right-hand side of one of the four bounds evaluated at ``times``.

    ``lhs`` is ``H(ρ̂_t|η_t)`` for the entropy bounds and ``W₂²(ρ̂_t, η_t)`` for
    the Wasserstein ones; ``initial`` is the same quantity at time zero.
    Overdamped bounds take ``entropy_drop = H(ρ₀|μ) − H(ρ_t|μ)``; Langevin
    bounds take ``entropy0 = H(ρ₀|μ)``. Langevin bounds default to the α → 0
    forms; pass ``alpha`` for the regularized ones.
    """
    t = np.asarray(times, dtype=float)
    meta: dict = {}
    if theorem == "relent-od":
        c = _need(constants, ["kappa_H", "lambda_H", "alpha_TI", "alpha_LSI"])
        drop = _drop(entropy_drop, t)
        pref = 0.25 * (c["lambda_H"] ** 2 + c["kappa_H"] ** 2 * beta ** 2 / (c["alpha_TI"] * c["alpha_LSI"]))
        rhs = initial + pref * drop
        meta["prefactor"] = pref
    elif theorem == "wasser-od":
        c = _need(constants, ["kappa_W", "lambda_W", "alpha_TI", "alpha_LSI", "ctilde_W"])
        drop = _drop(entropy_drop, t)
        pref = (4 * c["lambda_W"] ** 2 + beta * c["kappa_W"] ** 2) / (c["alpha_TI"] * c["alpha_LSI"])
        rhs = np.exp(c["ctilde_W"] * t) * (initial + pref * drop)
        meta["prefactor"] = pref
    elif theorem == "relent-lan":
        c = _need(constants, ["kappa", "alpha_TI"])
        if gamma is None or entropy0 is None:
            raise IncompleteReportError([n for n, v in (("gamma", gamma), ("entropy0", entropy0)) if v is None])
        if alpha is None:
            pref = c["kappa"] ** 2 / c["alpha_TI"] * (beta / gamma)
            meta["form"] = "limit"
        else:
            pref = c["kappa"] ** 2 / (2 * c["alpha_TI"]) * (alpha + beta / gamma)
            meta["form"] = f"regularized alpha={alpha:g}"
        rhs = initial + pref * t * entropy0
        meta["prefactor"] = pref
    elif theorem == "wasser-lan":
        c = _need(constants, ["kappa", "alpha_TI", "ctilde"])
        if entropy0 is None:
            raise IncompleteReportError(["entropy0"])
        a = 0.0 if alpha is None else alpha
        pref = 2 * (a + 1) * c["kappa"] ** 2 / c["alpha_TI"]
        rhs = np.exp(c["ctilde"] * t) * (initial + pref * t * entropy0)
        meta.update(prefactor=pref, form="limit" if alpha is None else f"regularized alpha={alpha:g}")
    else:
        raise ValueError(f"unknown theorem {theorem!r}; expected one of {THEOREMS}")
    return BoundReport(theorem, t, np.asarray(lhs, dtype=float), rhs, _reports(constants), tolerance,
                       coverage_mass, meta)


def _drop(entropy_drop, t):
    if entropy_drop is None:
        raise IncompleteReportError(["entropy_drop"])
    d = np.asarray(entropy_drop, dtype=float)
    if d.shape != t.shape:
        raise ValueError("entropy_drop must be given at every output time")
    return np.maximum(d, 0.0)


def loglog_slope(x, y) -> tuple[float, float]:
    """Least-squares slope of ``log y`` against ``log x`` and its standard error."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    if lx.size < 2:
        raise ValueError("need at least two points")
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, res, *_ = np.linalg.lstsq(A, ly, rcond=None)
    if lx.size > 2 and res.size:
        s2 = float(res[0]) / (lx.size - 2)
        se = math.sqrt(s2 / float(np.sum((lx - lx.mean()) ** 2)))
    else:
        se = 0.0
    return float(coef[0]), se
