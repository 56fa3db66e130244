"""Time stepping for the full, effective, coarse-grained and coupled SDE systems."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from .errors import BlowUpError, ExtrapolationError, StepSizeError
from .grids import Grid
from .model import Potential
from .sampling import rng_stream

BLOWUP_LEVEL = 1e8
EIG_FLOOR = 1e-12


@dataclass(frozen=True)
class SdeConfig:
    h: float
    t_end: float
    beta: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if not (self.h > 0 and self.t_end > 0 and self.beta > 0 and self.gamma > 0):
            raise ValueError("h, t_end, beta and gamma must be positive")
        if self.h > self.t_end:
            raise ValueError("step h exceeds t_end")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.h))

    def check_stability(self, lipschitz: float) -> None:
        if self.h * lipschitz > 0.5:
            raise StepSizeError(f"h*Lip = {self.h * lipschitz:.3g} exceeds 0.5")


def _guard(x, what: str, step: int | None = None):
    if not np.all(np.isfinite(x)) or np.any(np.abs(x) > BLOWUP_LEVEL):
        raise BlowUpError(f"{what} blew up" + ("" if step is None else f" at step {step}"))
    return x


def psd_sqrt(A: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition (eigenvalues floored)."""
    A = 0.5 * (A + np.swapaxes(A, -1, -2))
    w, U = np.linalg.eigh(A)
    w = np.maximum(w, EIG_FLOOR)
    return (U * np.sqrt(w)[..., None, :]) @ np.swapaxes(U, -1, -2)


# ------------------------------------------------------------------ closures

class Closure(Protocol):
    """Anything that supplies drift ``b`` and diffusion ``A`` of a coarse SDE."""

    def drift(self, z: np.ndarray, t: float | None = None) -> np.ndarray: ...

    def diffusion(self, z: np.ndarray, t: float | None = None) -> np.ndarray: ...


@dataclass(frozen=True)
class AnalyticClosure:
    """Closure from callables; ``diffusion`` may be a constant matrix."""

    b: Callable[[np.ndarray], np.ndarray]
    A: object
    k: int = 1
    name: str = "analytic"

    def drift(self, z, t=None):
        return np.asarray(self.b(np.asarray(z, dtype=float)), dtype=float)

    def diffusion(self, z, t=None):
        z = np.asarray(z, dtype=float)
        if callable(self.A):
            return np.asarray(self.A(z), dtype=float)
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        return np.broadcast_to(A, z.shape[:-1] + A.shape)


def linear_closure(slope, A=1.0, offset=0.0) -> AnalyticClosure:
    """``b(z) = slope · z + offset`` (``slope`` a matrix acting on the coarse state)."""
    S = np.atleast_2d(np.asarray(slope, dtype=float))
    o = np.atleast_1d(np.asarray(offset, dtype=float))
    return AnalyticClosure(lambda z: z @ S.T + o, np.atleast_2d(np.asarray(A, dtype=float)),
                           k=S.shape[0], name="linear")


@dataclass
class CoefficientField:
    """Per-cell drift and diffusion on a grid over the coarse state space.

    ``b_values`` has shape ``grid.shape + (k,)`` and ``A_values`` shape
    ``grid.shape + (k, k)``. Cells with zero ``counts`` are flagged as missing.
    """

    grid: Grid
    b_values: np.ndarray
    A_values: np.ndarray
    counts: np.ndarray
    b_stderr: Optional[np.ndarray] = None
    A_stderr: Optional[np.ndarray] = None
    time: Optional[float] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.b_values = np.asarray(self.b_values, dtype=float)
        self.A_values = np.asarray(self.A_values, dtype=float)
        self.counts = np.asarray(self.counts, dtype=float)
        gs = self.grid.shape
        if self.b_values.shape[:-1] != gs or self.A_values.shape[:-2] != gs or self.counts.shape != gs:
            raise ValueError("coefficient arrays do not match the grid")
        valid = self.valid
        A = self.A_values[valid]
        if A.size:
            if not np.allclose(A, np.swapaxes(A, -1, -2), atol=1e-12, rtol=1e-10):
                raise ValueError("A_values must be symmetric")
            if np.linalg.eigvalsh(A).min() < -1e-10 * max(1.0, float(np.abs(A).max())):
                raise ValueError("A_values must be positive semidefinite")

    @property
    def k(self) -> int:
        return self.b_values.shape[-1]

    @property
    def valid(self) -> np.ndarray:
        return self.counts > 0

    def filled(self) -> "CoefficientField":
        """Copy with missing cells filled from the nearest valid cell (1-D grids)."""
        if self.valid.all():
            return self
        if self.grid.ndim != 1:
            raise ValueError("filling missing cells only implemented on 1-D grids")
        idx = np.flatnonzero(self.valid)
        if idx.size == 0:
            raise ValueError("no valid cells")
        nearest = idx[np.abs(np.arange(self.grid.shape[0])[:, None] - idx[None, :]).argmin(axis=1)]
        return CoefficientField(self.grid, self.b_values[nearest], self.A_values[nearest], self.counts,
                                self.b_stderr, self.A_stderr, self.time, dict(self.meta))

    def _interp(self, values, z):
        z = np.asarray(z, dtype=float)
        pts = z.reshape(-1, self.grid.ndim)
        for a, e in enumerate(self.grid.edges):
            if np.any(pts[:, a] < e[0]) or np.any(pts[:, a] > e[-1]):
                raise ExtrapolationError("coarse point outside the coefficient grid")
        f = self.filled() if not self.valid.all() else self
        vals = values(f)
        flat = vals.reshape(self.grid.shape + (-1,))
        out = _multilinear(self.grid.centers, flat, pts)
        return out.reshape(z.shape[:-1] + vals.shape[self.grid.ndim:])

    def drift(self, z, t=None):
        return self._interp(lambda f: f.b_values, z)

    def diffusion(self, z, t=None):
        A = self._interp(lambda f: f.A_values, z)
        A = 0.5 * (A + np.swapaxes(A, -1, -2))
        w, U = np.linalg.eigh(A)
        return (U * np.maximum(w, EIG_FLOOR)[..., None, :]) @ np.swapaxes(U, -1, -2)

    def to_csv(self, path) -> None:
        """Columns: cell center(s), b, A (row-major), count, b stderr."""
        g = self.grid
        n = int(np.prod(g.shape))
        k = self.k
        cols = [f"z{i + 1}" for i in range(g.ndim)] + [f"b{i + 1}" for i in range(k)]
        cols += [f"A{i + 1}{j + 1}" for i in range(k) for j in range(k)] + ["count"]
        cols += [f"b{i + 1}_stderr" for i in range(k)]
        se = self.b_stderr if self.b_stderr is not None else np.full(self.b_values.shape, np.nan)
        data = np.column_stack([g.mesh().reshape(n, -1), self.b_values.reshape(n, k),
                                self.A_values.reshape(n, k * k), self.counts.reshape(n),
                                np.asarray(se).reshape(n, k)])
        with open(path, "w") as fh:
            fh.write("# " + json.dumps({"grid": g.to_dict(), "time": self.time, "meta": self.meta},
                                       sort_keys=True, default=str) + "\n")
            fh.write(",".join(cols) + "\n")
            np.savetxt(fh, data, delimiter=",", fmt="%.17g")


def _multilinear(centers: Sequence[np.ndarray], values: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Piecewise-linear interpolation on a tensor grid of centers; constant beyond the outer centers."""
    nd = len(centers)
    idx_lo, wts = [], []
    for a in range(nd):
        c = centers[a]
        x = np.clip(pts[:, a], c[0], c[-1])
        if c.size == 1:
            idx_lo.append(np.zeros(len(x), dtype=int))
            wts.append(np.zeros(len(x)))
            continue
        i = np.clip(np.searchsorted(c, x, side="right") - 1, 0, c.size - 2)
        idx_lo.append(i)
        wts.append((x - c[i]) / (c[i + 1] - c[i]))
    out = np.zeros((pts.shape[0],) + values.shape[nd:])
    for corner in range(2 ** nd):
        w = np.ones(pts.shape[0])
        index = []
        for a in range(nd):
            up = (corner >> a) & 1
            w = w * (wts[a] if up else 1.0 - wts[a])
            index.append(np.minimum(idx_lo[a] + up, centers[a].size - 1))
        out += w.reshape((-1,) + (1,) * (values.ndim - nd)) * values[tuple(index)]
    return out


@dataclass
class TimeDependentClosure:
    """Sequence of time-stamped closures, linearly interpolated in time."""

    times: np.ndarray
    fields: list

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.fields) != self.times.size or np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing and match fields")

    def _bracket(self, t):
        if t is None:
            raise ValueError("time-dependent closure needs t")
        i = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.times.size - 1))
        if i == self.times.size - 1:
            return i, i, 0.0
        w = (t - self.times[i]) / (self.times[i + 1] - self.times[i])
        return i, i + 1, float(np.clip(w, 0.0, 1.0))

    def drift(self, z, t=None):
        i, j, w = self._bracket(t)
        b = self.fields[i].drift(z, t)
        return b if w == 0.0 else (1 - w) * b + w * self.fields[j].drift(z, t)

    def diffusion(self, z, t=None):
        i, j, w = self._bracket(t)
        A = self.fields[i].diffusion(z, t)
        return A if w == 0.0 else (1 - w) * A + w * self.fields[j].diffusion(z, t)


# --------------------------------------------------------------------- steps

def step_overdamped_em(q, pot: Potential, cfg: SdeConfig, noise) -> np.ndarray:
    """Euler–Maruyama step ``q − ∇V(q) h + sqrt(2h/β) ξ``."""
    q = np.asarray(q, dtype=float)
    out = q - cfg.h * pot.grad(q) + np.sqrt(2 * cfg.h / cfg.beta) * np.asarray(noise, dtype=float)
    return _guard(out, "overdamped step")


def step_langevin_baoab(q, p, pot: Potential, cfg: SdeConfig, noise) -> tuple[np.ndarray, np.ndarray]:
    """BAOAB splitting with an exact Ornstein–Uhlenbeck friction substep (unit mass)."""
    h = cfg.h
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float) - 0.5 * h * pot.grad(q)
    q = q + 0.5 * h * p
    c1 = np.exp(-cfg.gamma * h)
    p = c1 * p + np.sqrt((1 - c1 * c1) / cfg.beta) * np.asarray(noise, dtype=float)
    q = q + 0.5 * h * p
    p = p - 0.5 * h * pot.grad(q)
    return _guard(q, "langevin position"), _guard(p, "langevin momentum")


def step_effective(z, coeffs: Closure, cfg: SdeConfig, noise, t: float | None = None) -> np.ndarray:
    """EM step ``z − b(z) h + sqrt(2h/β) A(z)^{1/2} ξ``."""
    z = np.asarray(z, dtype=float)
    root = psd_sqrt(coeffs.diffusion(z, t))
    kick = np.einsum("...ij,...j->...i", root, np.asarray(noise, dtype=float))
    return _guard(z - cfg.h * coeffs.drift(z, t) + np.sqrt(2 * cfg.h / cfg.beta) * kick, "effective step")


def step_effective_langevin(z, v, coeffs: Closure, cfg: SdeConfig, noise,
                            t: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """BAOAB step for ``dZ = V dt, dV = −b(Z,V) dt − γV dt + sqrt(2γ/β) A^{1/2} dW``.

    The closure's drift and diffusion are evaluated at the stacked state
    ``(z, v)``.
    """
    h = cfg.h
    z = np.asarray(z, dtype=float)
    v = np.asarray(v, dtype=float)

    def b(z, v):
        return coeffs.drift(np.concatenate([z, v], axis=-1), t)

    v = v - 0.5 * h * b(z, v)
    z = z + 0.5 * h * v
    c1 = np.exp(-cfg.gamma * h)
    root = psd_sqrt(coeffs.diffusion(np.concatenate([z, v], axis=-1), t))
    v = c1 * v + np.sqrt((1 - c1 * c1) / cfg.beta) * np.einsum("...ij,...j->...i", root, noise)
    z = z + 0.5 * h * v
    v = v - 0.5 * h * b(z, v)
    return _guard(z, "effective position"), _guard(v, "effective velocity")


# ------------------------------------------------------------------- drivers

@dataclass
class SimulationResult:
    times: np.ndarray
    mean: np.ndarray  # (T, dim)
    cov: np.ndarray  # (T, dim, dim)
    final: np.ndarray  # final states of surviving trajectories
    aborted_fraction: float

    def to_csv(self, path) -> None:
        dim = self.mean.shape[1]
        cols = ["time"] + [f"mean{i + 1}" for i in range(dim)] + [f"var{i + 1}" for i in range(dim)]
        var = np.diagonal(self.cov, axis1=1, axis2=2)
        np.savetxt(path, np.column_stack([self.times, self.mean, var]), delimiter=",",
                   header=",".join(cols), comments="", fmt="%.17g")


def _record_steps(cfg: SdeConfig, record_times) -> tuple[np.ndarray, np.ndarray]:
    n = cfg.n_steps
    if record_times is None:
        idx = np.arange(n + 1)
    else:
        rt = np.asarray(record_times, dtype=float)
        idx = np.rint(rt / cfg.h).astype(int)
        if np.any(np.abs(idx * cfg.h - rt) > 1e-9 * max(1.0, cfg.t_end)) or np.any(idx > n) or np.any(idx < 0):
            raise ValueError("record times must be multiples of h within [0, t_end]")
    return idx, idx * cfg.h


def _simulate(state0: np.ndarray, step: Callable, cfg: SdeConfig, seed: int, stream: int,
              record_times, noise_dim: int) -> SimulationResult:
    """Shared driver: steps all trajectories, freezes aborted ones, records moments."""
    rng = rng_stream(seed, stream)
    x = np.array(state0, dtype=float)
    alive = np.ones(x.shape[0], dtype=bool)
    idx, times = _record_steps(cfg, record_times)
    rec = {int(i): k for k, i in enumerate(idx)}
    means = np.empty((len(idx), x.shape[1]))
    covs = np.empty((len(idx), x.shape[1], x.shape[1]))

    def record(i):
        if i in rec:
            xa = x[alive]
            means[rec[i]] = xa.mean(axis=0)
            covs[rec[i]] = np.cov(xa.T, bias=True).reshape(x.shape[1], x.shape[1])

    record(0)
    for i in range(1, cfg.n_steps + 1):
        noise = rng.standard_normal((x.shape[0], noise_dim))
        with np.errstate(all="ignore"):
            new = step(x, noise, (i - 1) * cfg.h)
        bad = ~np.all(np.isfinite(new), axis=1) | np.any(np.abs(new) > BLOWUP_LEVEL, axis=1)
        alive &= ~bad
        if not alive.any():
            raise BlowUpError(f"all trajectories aborted by step {i}")
        x = np.where(alive[:, None], new, x)
        record(i)
    return SimulationResult(times, means, covs, x[alive], float(1 - alive.mean()))


def _hess_lipschitz(pot: Potential, q) -> float:
    return float(np.max(np.linalg.norm(pot.hess(q), ord=2, axis=(-2, -1))))


def simulate_overdamped(pot: Potential, q0, cfg: SdeConfig, seed: int = 0, stream: int = 0,
                        record_times=None) -> SimulationResult:
    q0 = np.atleast_2d(np.asarray(q0, dtype=float))
    cfg.check_stability(_hess_lipschitz(pot, q0))

    def step(x, noise, t):
        return x - cfg.h * pot.grad(x) + np.sqrt(2 * cfg.h / cfg.beta) * noise

    return _simulate(q0, step, cfg, seed, stream, record_times, q0.shape[1])


def simulate_langevin(pot: Potential, q0, p0, cfg: SdeConfig, seed: int = 0, stream: int = 0,
                      record_times=None) -> SimulationResult:
    """BAOAB ensemble run; recorded state is ``(q, p)``."""
    q0 = np.atleast_2d(np.asarray(q0, dtype=float))
    p0 = np.atleast_2d(np.asarray(p0, dtype=float))
    d = q0.shape[1]
    cfg.check_stability(np.sqrt(_hess_lipschitz(pot, q0)) + cfg.gamma)
    c1 = np.exp(-cfg.gamma * cfg.h)
    c2 = np.sqrt((1 - c1 * c1) / cfg.beta)
    h = cfg.h

    def step(x, noise, t):
        q, p = x[:, :d], x[:, d:]
        p = p - 0.5 * h * pot.grad(q)
        q = q + 0.5 * h * p
        p = c1 * p + c2 * noise
        q = q + 0.5 * h * p
        p = p - 0.5 * h * pot.grad(q)
        return np.hstack([q, p])

    return _simulate(np.hstack([q0, p0]), step, cfg, seed, stream, record_times, d)


def simulate_effective(closure: Closure, z0, cfg: SdeConfig, seed: int = 0, stream: int = 0,
                       record_times=None, v0=None) -> SimulationResult:
    """Ensemble run of an effective (or closure-driven coarse-grained) SDE.

    With ``v0`` given, the underdamped form is used and the state is ``(z, v)``.
    """
    z0 = np.atleast_2d(np.asarray(z0, dtype=float))
    k = z0.shape[1]
    if v0 is None:
        def step(x, noise, t):
            root = psd_sqrt(closure.diffusion(x, t))
            return x - cfg.h * closure.drift(x, t) + np.sqrt(2 * cfg.h / cfg.beta) * np.einsum(
                "...ij,...j->...i", root, noise)

        return _simulate(z0, step, cfg, seed, stream, record_times, k)

    v0 = np.atleast_2d(np.asarray(v0, dtype=float))

    def step(x, noise, t):
        z, v = step_effective_langevin(x[:, :k], x[:, k:], closure, cfg, noise, t)
        return np.hstack([z, v])

    return _simulate(np.hstack([z0, v0]), step, cfg, seed, stream, record_times, k)


@dataclass
class CoupledPairResult:
    times: np.ndarray
    mean_sq_sep: np.ndarray
    stderr: np.ndarray
    aborted_fraction: float

    def to_csv(self, path) -> None:
        np.savetxt(path, np.column_stack([self.times, self.mean_sq_sep, self.stderr]), delimiter=",",
                   header="time,separation,stderr", comments="", fmt="%.17g")


def simulate_coupled_pair(z1_0, z2_0, closure_hat: Closure, closure_eff: Closure, cfg: SdeConfig,
                          n_traj: int, seed: int = 0, stream: int = 0, record_times=None,
                          v1_0=None, v2_0=None) -> CoupledPairResult:
    """Synchronous coupling: both systems see the same Brownian increments.

    Returns the per-time mean squared separation ``E|Z₁ − Z₂|²`` (an upper
    estimate of W₂²) with its standard error. With ``v1_0``/``v2_0`` the
    underdamped pair is coupled and the separation includes velocities.
    """
    def init(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.broadcast_to(x, (n_traj, x.shape[1])).copy() if x.shape[0] == 1 else x.copy()

    z1, z2 = init(z1_0), init(z2_0)
    k = z1.shape[1]
    underdamped = v1_0 is not None
    if underdamped:
        z1 = np.hstack([z1, init(v1_0)])
        z2 = np.hstack([z2, init(v2_0)])
    rng = rng_stream(seed, stream)
    idx, times = _record_steps(cfg, record_times)
    rec = {int(i): j for j, i in enumerate(idx)}
    msq = np.empty(len(idx))
    se = np.empty(len(idx))
    alive = np.ones(n_traj, dtype=bool)

    def record(i):
        if i in rec:
            s = np.sum((z1[alive] - z2[alive]) ** 2, axis=1)
            msq[rec[i]] = s.mean()
            se[rec[i]] = s.std(ddof=1) / np.sqrt(s.size) if s.size > 1 else 0.0

    def advance(x, clo, noise, t):
        if underdamped:
            z, v = step_effective_langevin(x[:, :k], x[:, k:], clo, cfg, noise, t)
            return np.hstack([z, v])
        root = psd_sqrt(clo.diffusion(x, t))
        return x - cfg.h * clo.drift(x, t) + np.sqrt(2 * cfg.h / cfg.beta) * np.einsum(
            "...ij,...j->...i", root, noise)

    record(0)
    for i in range(1, cfg.n_steps + 1):
        noise = rng.standard_normal((n_traj, k))
        t = (i - 1) * cfg.h
        with np.errstate(all="ignore"):
            n1, n2 = advance(z1, closure_hat, noise, t), advance(z2, closure_eff, noise, t)
        bad = ~(np.all(np.isfinite(n1), axis=1) & np.all(np.isfinite(n2), axis=1))
        bad |= np.any(np.abs(n1) > BLOWUP_LEVEL, axis=1) | np.any(np.abs(n2) > BLOWUP_LEVEL, axis=1)
        alive &= ~bad
        if not alive.any():
            raise BlowUpError(f"all coupled trajectories aborted by step {i}")
        z1 = np.where(alive[:, None], n1, z1)
        z2 = np.where(alive[:, None], n2, z2)
        record(i)
    return CoupledPairResult(times, msq, se, float(1 - alive.mean()))
