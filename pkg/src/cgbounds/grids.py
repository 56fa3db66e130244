"""Rectilinear cell grids and probability densities living on them."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import logsumexp

MASS_TOL = 1e-12


@dataclass(frozen=True)
class Grid:
    """Tensor grid of cells given by strictly increasing edges per axis."""

    edges: tuple

    def __post_init__(self):
        edges = tuple(np.asarray(e, dtype=float) for e in self.edges)
        for e in edges:
            if e.ndim != 1 or e.size < 2 or np.any(np.diff(e) <= 0):
                raise ValueError("grid edges must be strictly increasing 1-D arrays")
            e.setflags(write=False)
        object.__setattr__(self, "edges", edges)

    @classmethod
    def uniform(cls, bounds, n) -> "Grid":
        """``bounds`` is a list of ``(lo, hi)`` per axis, ``n`` cells per axis."""
        bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
        n = np.broadcast_to(np.asarray(n, dtype=int), (bounds.shape[0],))
        return cls(tuple(np.linspace(lo, hi, int(k) + 1) for (lo, hi), k in zip(bounds, n)))

    @property
    def ndim(self) -> int:
        return len(self.edges)

    @property
    def shape(self) -> tuple:
        return tuple(e.size - 1 for e in self.edges)

    @property
    def centers(self) -> tuple:
        return tuple(0.5 * (e[1:] + e[:-1]) for e in self.edges)

    @property
    def widths(self) -> tuple:
        return tuple(np.diff(e) for e in self.edges)

    @property
    def is_uniform(self) -> bool:
        return all(np.allclose(w, w[0], rtol=1e-12, atol=0) for w in self.widths)

    def spacing(self, axis: int) -> float:
        w = self.widths[axis]
        if not np.allclose(w, w[0], rtol=1e-12, atol=0):
            raise ValueError("axis is not uniformly spaced")
        return float(w[0])

    def cell_volumes(self) -> np.ndarray:
        vols = self.widths[0]
        for w in self.widths[1:]:
            vols = np.multiply.outer(vols, w)
        return vols

    def mesh(self) -> np.ndarray:
        """Cell centers as an array of shape ``shape + (ndim,)``."""
        return np.stack(np.meshgrid(*self.centers, indexing="ij"), axis=-1)

    def same_as(self, other: "Grid") -> bool:
        return self.ndim == other.ndim and all(np.array_equal(a, b) for a, b in zip(self.edges, other.edges))

    def to_dict(self) -> dict:
        return {"edges": [e.tolist() for e in self.edges]}


@dataclass(frozen=True)
class GridDensity:
    """Probability per cell on a grid (mass one, nonnegative)."""

    grid: Grid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("density values must be finite and nonnegative")
        if abs(v.sum() - 1.0) > 1e-9:
            raise ValueError(f"density mass {v.sum():.15g} differs from one")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_log_density(cls, grid: Grid, log_f: Callable, time: float = 0.0) -> "GridDensity":
        """Cell masses ∝ ``exp(log_f(center)) * volume``, normalized in log space."""
        lw = np.asarray(log_f(grid.mesh()), dtype=float) + np.log(grid.cell_volumes())
        return cls(grid, np.exp(lw - logsumexp(lw)), time)

    @classmethod
    def normalized(cls, grid: Grid, masses, time: float = 0.0) -> "GridDensity":
        m = np.clip(np.asarray(masses, dtype=float), 0.0, None)
        return cls(grid, m / m.sum(), time)

    @property
    def density(self) -> np.ndarray:
        return self.values / self.grid.cell_volumes()

    def with_time(self, t: float) -> "GridDensity":
        return GridDensity(self.grid, self.values, t)

    def mean(self) -> np.ndarray:
        x = self.grid.mesh().reshape(-1, self.grid.ndim)
        return self.values.reshape(-1) @ x

    def covariance(self) -> np.ndarray:
        """Covariance of the piecewise-uniform law (includes within-cell variance)."""
        x = self.grid.mesh().reshape(-1, self.grid.ndim) - self.mean()
        cov = (x * self.values.reshape(-1, 1)).T @ x
        w2 = [w ** 2 / 12.0 for w in self.grid.widths]
        for a in range(self.grid.ndim):
            shape = [1] * self.grid.ndim
            shape[a] = -1
            cov[a, a] += float(np.sum(self.values * w2[a].reshape(shape)))
        return cov

    def second_moment(self) -> float:
        m = self.mean()
        return float(np.trace(self.covariance()) + m @ m)

    def boundary_mass(self) -> float:
        """Mass in the outermost layer of cells."""
        inner = self.values
        for a in range(self.grid.ndim):
            inner = np.take(inner, np.arange(1, inner.shape[a] - 1), axis=a)
        return float(self.values.sum() - inner.sum())

    def to_csv(self, path) -> None:
        path = Path(path)
        cols = [f"x{i + 1}" for i in range(self.grid.ndim)] + ["value"]
        data = np.column_stack([self.grid.mesh().reshape(-1, self.grid.ndim), self.values.reshape(-1)])
        header = json.dumps({"grid": self.grid.to_dict(), "time": self.time})
        with open(path, "w") as fh:
            fh.write("# " + header + "\n")
            fh.write(",".join(cols) + "\n")
            np.savetxt(fh, data, delimiter=",", fmt="%.17g")

    @classmethod
    def from_csv(cls, path) -> "GridDensity":
        with open(path) as fh:
            header = json.loads(fh.readline()[2:])
        grid = Grid(tuple(np.array(e) for e in header["edges"])) if "edges" in header \
            else Grid(tuple(np.array(e) for e in header["grid"]["edges"]))
        data = np.loadtxt(path, delimiter=",", skiprows=2, ndmin=2)
        return cls(grid, data[:, -1].reshape(grid.shape), header["time"])
