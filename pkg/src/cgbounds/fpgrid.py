"""Finite-volume Fokker–Planck solvers with Scharfetter–Gummel fluxes.

Face fluxes use the Bernoulli function ``B(x) = x/(eˣ − 1)``, which makes
``exp(−β·potential)`` sampled at cell centers an exact stationary state. This
holds for the full overdamped equation on a uniform 2-D grid, and for 1-D
coarse equations whose drift is linear between neighbouring centers. Boundaries
are no-flux, so the rate matrices conserve mass to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .closure import cg_coefficients, fiber_observables
from .errors import BoxTooSmallError, StepSizeError
from .grids import Grid, GridDensity
from .integrators import CoefficientField, TimeDependentClosure
from .metrics import fisher_information
from .model import CoarseMap, GibbsMeasure, Potential

LEAK_TOL = 1e-8
CFL_DIFFUSIVE = 0.4
CFL_RATE = 0.5


def bernoulli(x) -> np.ndarray:
    """``x/(eˣ − 1)`` with the removable singularity at zero handled."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-8
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 - 0.5 * x, safe / np.expm1(safe))


def discrete_gibbs(pot: Potential, beta: float, grid: Grid) -> GridDensity:
    """Cell masses ``∝ exp(−βV(center))·volume``: the scheme's exact stationary state."""
    return GridDensity.from_log_density(grid, lambda x: -beta * pot.eval(x))


def auto_box(means: Sequence, covs: Sequence, n_std: float = 8.0) -> list[tuple[float, float]]:
    """Axis-aligned box covering every law by ``|mean| + n_std·std`` per axis, symmetric about 0."""
    half = None
    for m, S in zip(means, covs):
        h = np.abs(np.asarray(m, dtype=float)) + n_std * np.sqrt(np.diag(np.atleast_2d(S)))
        half = h if half is None else np.maximum(half, h)
    return [(-float(w), float(w)) for w in half]


# ------------------------------------------------------------------ 2-D solver

def full_generator(pot: Potential, beta: float, grid: Grid) -> sp.csr_matrix:
    """Rate matrix ``L`` with ``dp/dt = L p`` on flattened cell masses."""
    if not grid.is_uniform:
        raise ValueError("the full solver needs a uniform grid")
    V = pot.eval(grid.mesh())
    shape = grid.shape
    n = V.size
    idx = np.arange(n).reshape(shape)
    rows, cols, vals = [], [], []
    for ax in range(grid.ndim):
        h = grid.spacing(ax)
        lo = [slice(None)] * grid.ndim
        hi = [slice(None)] * grid.ndim
        lo[ax], hi[ax] = slice(None, -1), slice(1, None)
        dV = V[tuple(hi)] - V[tuple(lo)]
        scale = 1.0 / (beta * h * h)
        fwd = scale * bernoulli(beta * dV)  # lo -> hi
        bwd = scale * bernoulli(-beta * dV)  # hi -> lo
        i_lo, i_hi = idx[tuple(lo)].ravel(), idx[tuple(hi)].ravel()
        rows += [i_hi, i_lo]
        cols += [i_lo, i_hi]
        vals += [fwd.ravel(), bwd.ravel()]
    rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    off = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    out = np.asarray(off.sum(axis=0)).ravel()
    return (off - sp.diags(out)).tocsr()


@dataclass
class Trajectory:
    """Densities at output times plus per-step diagnostics."""

    times: np.ndarray
    densities: list
    step_entropy: Optional[np.ndarray] = None  # H(ρ|μ) after every step (full solves)
    step_times: Optional[np.ndarray] = None
    step_fisher: Optional[np.ndarray] = None  # I(ρ|μ) after every step when requested
    dt: float = 0.0
    max_boundary_mass: float = 0.0
    meta: dict = field(default_factory=dict)

    def __getitem__(self, i) -> GridDensity:
        return self.densities[i]

    def __len__(self) -> int:
        return len(self.densities)

    def to_csv(self, path) -> None:
        """Long format: time, cell center(s), value."""
        g = self.densities[0].grid
        n = int(np.prod(g.shape))
        centers = g.mesh().reshape(n, -1)
        blocks = [np.column_stack([np.full(n, t), centers, d.values.reshape(n)])
                  for t, d in zip(self.times, self.densities)]
        cols = ["time"] + [f"x{i + 1}" for i in range(g.ndim)] + ["value"]
        np.savetxt(path, np.vstack(blocks), delimiter=",", header=",".join(cols), comments="", fmt="%.17g")


def _output_steps(t_end: float, dt: float, output_times) -> tuple[int, float, dict]:
    n = max(1, int(np.ceil(t_end / dt - 1e-9)))
    dt = t_end / n
    if output_times is None:
        output_times = np.linspace(0.0, t_end, 11)
    out = {}
    for t in np.asarray(output_times, dtype=float):
        if t < -1e-12 or t > t_end + 1e-12:
            raise ValueError("output times must lie in [0, t_end]")
        out[int(round(t / dt))] = float(t)
    return n, dt, out


def _stable_dt(L: sp.csr_matrix) -> float:
    return CFL_RATE / float(np.max(-L.diagonal()))


def _relent(p, q) -> float:
    m = p > 0
    return float(np.sum(p[m] * np.log(p[m] / q[m])))


def _box_check(values: np.ndarray, grid: Grid) -> float:
    bm = GridDensity(grid, values.reshape(grid.shape) / values.sum()).boundary_mass()
    if bm > LEAK_TOL:
        raise BoxTooSmallError(f"boundary-layer mass {bm:.3g} exceeds {LEAK_TOL:g}; enlarge the box")
    return bm


class FullStepper:
    """Time stepper for ``∂ρ = div(ρ∇V) + β⁻¹Δρ`` on a uniform 2-D grid."""

    def __init__(self, pot: Potential, beta: float, grid: Grid, dt: Optional[float] = None,
                 method: str = "explicit"):
        self.grid, self.beta, self.method = grid, beta, method
        self.L = full_generator(pot, beta, grid)
        h_min = min(grid.spacing(a) for a in range(grid.ndim))
        limit = min(_stable_dt(self.L), CFL_DIFFUSIVE * h_min ** 2 * beta)
        if method == "explicit":
            if dt is None:
                dt = limit
            elif dt > limit * (1 + 1e-12):
                raise StepSizeError(f"dt = {dt:g} exceeds the explicit stability limit {limit:g}")
        elif method == "implicit":
            dt = limit * 10 if dt is None else dt
        else:
            raise ValueError("method must be 'explicit' or 'implicit'")
        self.dt = float(dt)
        self._lu = None

    def set_dt(self, dt: float):
        self.dt = float(dt)
        self._lu = None

    def step(self, p: np.ndarray) -> np.ndarray:
        if self.method == "explicit":
            new = p + self.dt * (self.L @ p)
        else:
            if self._lu is None:
                n = self.L.shape[0]
                self._lu = splu((sp.identity(n, format="csc") - self.dt * self.L).tocsc())
            new = self._lu.solve(p)
        new = np.maximum(new, 0.0)
        return new / new.sum()


def solve_full_overdamped(pot: Potential, beta: float, rho0: GridDensity, t_end: float,
                          dt: Optional[float] = None, output_times=None, method: str = "explicit",
                          check_box: bool = True, record_fisher: bool = False) -> Trajectory:
    """Evolve a 2-D grid density; records ``H(ρ|μ)`` after every step against the discrete Gibbs law.

    ``record_fisher`` also stores ``I(ρ|μ)`` per step so the dissipation
    identity can be integrated at the solver's own resolution.
    """
    grid = rho0.grid
    stepper = FullStepper(pot, beta, grid, dt, method)
    n, dt, out = _output_steps(t_end, stepper.dt, output_times)
    stepper.set_dt(dt)
    mu_d = discrete_gibbs(pot, beta, grid)
    mu = mu_d.values.ravel()
    p = rho0.values.ravel().copy()
    times, dens, ent, fis = [], [], [_relent(p, mu)], []
    bmax = 0.0
    for i in range(n + 1):
        if i > 0:
            p = stepper.step(p)
            ent.append(_relent(p, mu))
        if record_fisher:
            fis.append(fisher_information(GridDensity(grid, p.reshape(grid.shape) / p.sum()), mu_d))
        if i in out:
            if check_box:
                bmax = max(bmax, _box_check(p, grid))
            times.append(out[i])
            dens.append(GridDensity(grid, p.reshape(grid.shape), out[i]))
    return Trajectory(np.array(times), dens, np.array(ent), np.arange(n + 1) * dt,
                      np.array(fis) if record_fisher else None, dt, bmax, {"method": method, "n_steps": n})


# ------------------------------------------------------------------ 1-D solver

def coarse_face_rates(grid: Grid, b: np.ndarray, A: np.ndarray, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Mass transfer rates across interior faces for ``∂ρ = ∂(β⁻¹∂(Aρ) + bρ)``.

    Returns ``(right, left)``: rates from cell ``i`` to ``i+1`` and back. The
    face drift ``b_face + β⁻¹ ΔA/h`` absorbs the divergence of ``A``.
    """
    z = grid.centers[0]
    dz = np.diff(z)
    w = grid.widths[0]
    a = 0.5 * (A[1:] + A[:-1])
    c = 0.5 * (b[1:] + b[:-1]) + (A[1:] - A[:-1]) / (beta * dz)
    D = a / beta
    x = c * dz / D
    right = D / dz * bernoulli(x) / w[:-1]
    left = D / dz * bernoulli(-x) / w[1:]
    return right, left


def _coarse_step(p, right, left, dt):
    flow = dt * (right * p[:-1] - left * p[1:])
    new = p.copy()
    new[:-1] -= flow
    new[1:] += flow
    return new


def _coarse_limit(right, left) -> float:
    out = np.zeros(right.size + 1)
    out[:-1] += right
    out[1:] += left
    return CFL_RATE / float(out.max())


def _field_arrays(coeffs, t):
    f = coeffs if isinstance(coeffs, CoefficientField) else _field_at(coeffs, t)
    f = f.filled()
    return f.b_values[:, 0], f.A_values[:, 0, 0]


def _field_at(closure: TimeDependentClosure, t: float) -> CoefficientField:
    i = int(np.clip(np.searchsorted(closure.times, t, side="right") - 1, 0, closure.times.size - 1))
    if i == closure.times.size - 1:
        return closure.fields[i]
    f0, f1 = closure.fields[i].filled(), closure.fields[i + 1].filled()
    w = (t - closure.times[i]) / (closure.times[i + 1] - closure.times[i])
    return CoefficientField(f0.grid, (1 - w) * f0.b_values + w * f1.b_values,
                            (1 - w) * f0.A_values + w * f1.A_values, np.ones(f0.grid.shape), time=t)


def solve_coarse(coeffs, beta: float, rho0: GridDensity, t_end: float, dt: Optional[float] = None,
                 output_times=None) -> Trajectory:
    """Explicit SG solve of the 1-D coarse equation with static or time-dependent coefficients."""
    grid = rho0.grid
    if grid.ndim != 1:
        raise ValueError("coarse solver is one-dimensional")
    fld = coeffs if isinstance(coeffs, CoefficientField) else coeffs.fields[0]
    if not fld.grid.same_as(grid):
        raise ValueError("coefficient grid must equal the density grid")
    right, left = coarse_face_rates(grid, *_field_arrays(coeffs, 0.0), beta)
    limit = _coarse_limit(right, left)
    if dt is None:
        dt = limit
    elif dt > limit * (1 + 1e-12) and isinstance(coeffs, CoefficientField):
        raise StepSizeError(f"dt = {dt:g} exceeds the explicit stability limit {limit:g}")
    n, dt, out = _output_steps(t_end, dt, output_times)
    p = rho0.values.copy()
    times, dens = [], []
    for i in range(n + 1):
        if i > 0:
            if not isinstance(coeffs, CoefficientField):
                right, left = coarse_face_rates(grid, *_field_arrays(coeffs, (i - 1) * dt), beta)
                if dt > _coarse_limit(right, left) * (1 + 1e-12):
                    raise StepSizeError("time-dependent coefficients violate the stability limit")
            p = _coarse_step(p, right, left, dt)
            p = np.maximum(p, 0.0)
            p /= p.sum()
        if i in out:
            times.append(out[i])
            dens.append(GridDensity(grid, p, out[i]))
    return Trajectory(np.array(times), dens, dt=dt, meta={"n_steps": n})


# ------------------------------------------------------- lockstep pipeline

@dataclass
class CoarseGrainingRun:
    """Full solve, its push-forward, the coarse-grained and effective 1-D solves."""

    full: Trajectory
    pushforward: list  # GridDensity per output time
    coarse: Trajectory  # ρ̂ from extracted time-dependent coefficients
    effective: Trajectory  # η from Gibbs coefficients
    cg_fields: list  # CoefficientField per output time
    eff_field: CoefficientField
    mu: GridDensity
    mu_hat: GridDensity
    coarse_grid: Grid
    meta: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return self.full.times


def _coordinate_axis_or_raise(cmap: CoarseMap) -> int:
    from .closure import _coordinate_axis

    ax = _coordinate_axis(cmap)
    if ax is None:
        raise NotImplementedError("the lockstep pipeline needs a coordinate map")
    return ax


def run_coarse_graining(pot: Potential, cmap: CoarseMap, beta: float, rho0: GridDensity, t_end: float,
                        output_times=None, dt: Optional[float] = None, eta0: Optional[GridDensity] = None,
                        method: str = "explicit") -> CoarseGrainingRun:
    """Advance the full 2-D law and the coarse-grained 1-D law in lockstep.

    Each step first extracts ``b̂, Â`` from the current full density by column
    averages, advances the 1-D coarse law with them, then advances the full
    law. The effective law uses the same extraction against the discrete
    Gibbs measure, so both 1-D equations share one discretization. ``eta0``
    defaults to the push-forward of ``rho0`` (matched initial data).
    """
    ax = _coordinate_axis_or_raise(cmap)
    grid = rho0.grid
    cgrid = Grid((grid.edges[ax],))
    stepper = FullStepper(pot, beta, grid, dt, method)
    mu = discrete_gibbs(pot, beta, grid)
    eff = cg_coefficients(mu, pot, cmap, beta, cgrid)
    eff.meta.update(kind="effective", source="discrete-gibbs")
    er, el = coarse_face_rates(cgrid, eff.b_values[:, 0], eff.A_values[:, 0, 0], beta)
    dt_ = min(stepper.dt, _coarse_limit(er, el))
    n, dt_, out = _output_steps(t_end, dt_, output_times)
    stepper.set_dt(dt_)

    # observables at cell centers, oriented so the coarse axis comes first
    f, G = fiber_observables(pot, cmap, beta, grid.mesh())
    f, G = f[..., 0], G[..., 0, 0]
    if ax == 1:
        f, G = f.T, G.T

    def extract(pm):
        cols = pm if ax == 0 else pm.T
        mass = cols.sum(axis=1)
        safe = np.where(mass > 0, mass, 1.0)
        b = np.where(mass > 0, (cols * f).sum(axis=1) / safe, eff.b_values[:, 0])
        A = np.where(mass > 0, (cols * G).sum(axis=1) / safe, eff.A_values[:, 0, 0])
        return b, A, mass

    mu_vals = mu.values.ravel()
    p = rho0.values.ravel().copy()
    q = rho0.values.sum(axis=1 - ax)  # ρ̂
    r = (eta0.values if eta0 is not None else q).copy()  # η
    full_t, full_d, push, coarse_d, eff_d, fields, ent = [], [], [], [], [], [], [_relent(p, mu_vals)]
    bmax = 0.0
    for i in range(n + 1):
        pm = p.reshape(grid.shape)
        b, A, mass = extract(pm)
        if i in out:
            t = out[i]
            bmax = max(bmax, _box_check(p, grid))
            full_t.append(t)
            full_d.append(GridDensity(grid, pm, t))
            push.append(GridDensity(cgrid, pm.sum(axis=1 - ax) / pm.sum(), t))
            coarse_d.append(GridDensity(cgrid, q / q.sum(), t))
            eff_d.append(GridDensity(cgrid, r / r.sum(), t))
            fields.append(CoefficientField(cgrid, b[:, None], A[:, None, None], mass, time=t,
                                           meta={"kind": "coarse-grained", "source": "grid-columns"}))
        if i == n:
            break
        cr, cl = coarse_face_rates(cgrid, b, A, beta)
        if dt_ > _coarse_limit(cr, cl) * (1 + 1e-12):
            raise StepSizeError("extracted coefficients violate the coarse stability limit")
        q = np.maximum(_coarse_step(q, cr, cl, dt_), 0.0)
        q /= q.sum()
        r = np.maximum(_coarse_step(r, er, el, dt_), 0.0)
        r /= r.sum()
        p = stepper.step(p)
        ent.append(_relent(p, mu_vals))
    times = np.array(full_t)
    full = Trajectory(times, full_d, np.array(ent), np.arange(n + 1) * dt_, None, dt_, bmax,
                      {"method": method, "n_steps": n})
    return CoarseGrainingRun(full, push, Trajectory(times, coarse_d, dt=dt_), Trajectory(times, eff_d, dt=dt_),
                             fields, eff, mu, GridDensity(cgrid, mu.values.sum(axis=1 - ax)), cgrid,
                             {"dt": dt_, "n_steps": n, "axis": ax})


def initial_shifted_fast(pot: Potential, beta: float, grid: Grid, shift, log_slow: Optional[Callable] = None
                         ) -> GridDensity:
    """Gibbs law with the fast coordinate shifted by ``shift``: ``ρ₀(x, y) ∝ μ(x, y − shift)``.

    ``log_slow`` optionally reweights the slow marginal by ``exp(log_slow(x))``.
    """
    def logf(x):
        y = x.copy()
        y[..., 1] = y[..., 1] - shift
        out = -beta * pot.eval(y)
        return out if log_slow is None else out + log_slow(x[..., 0])

    return GridDensity.from_log_density(grid, logf)
