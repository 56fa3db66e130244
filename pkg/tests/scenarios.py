"""Cached scenario builders shared by the test modules."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from cgbounds.fpgrid import auto_box, initial_shifted_fast, run_coarse_graining
from cgbounds.grids import Grid
from cgbounds.model import coordinate_map, coupled_quadratic

BETA = 1.0


def coupled_grid(c: float, eps: float, n: int = 128) -> Grid:
    pot = coupled_quadratic(c, eps)
    S = np.linalg.inv(BETA * pot.hessian_matrix)
    shift = np.sqrt(eps / BETA)
    return Grid.uniform(auto_box([np.zeros(2), np.array([0.0, shift])], [S, S]), n)


@lru_cache(maxsize=None)
def coupled_run(c: float, eps: float, n: int = 128, t_end: float = 1.0, n_out: int = 41):
    """Lockstep grid pipeline with the fast coordinate displaced by one conditional std."""
    pot = coupled_quadratic(c, eps)
    cmap = coordinate_map(2, (0,))
    grid = coupled_grid(c, eps, n)
    rho0 = initial_shifted_fast(pot, BETA, grid, np.sqrt(eps / BETA))
    return pot, cmap, run_coarse_graining(pot, cmap, BETA, rho0, t_end, output_times=np.linspace(0, t_end, n_out))


def coupled_config(c: float = 0.25, eps: float = 0.1, regime: str = "overdamped", **extra) -> dict:
    raw = {
        "name": f"coupled-{regime}",
        "seed": 0,
        "physics": {"regime": regime, "beta": BETA,
                    "potential": {"name": "coupled_quadratic", "params": {"c": c, "eps": eps}}},
        "map": {"name": "coordinate", "params": {"d": 2, "indices": [0]}},
        "time": {"t_end": 1.0, "n_out": 41 if regime == "overdamped" else 21},
        "theorems": ["relent-od", "wasser-od"] if regime == "overdamped" else ["relent-lan", "wasser-lan"],
        "sweep": {"param": "eps", "values": [0.2, 0.1, 0.05]},
    }
    if regime == "langevin":
        raw["physics"]["gamma"] = 1.0
    raw.update(extra)
    return raw
