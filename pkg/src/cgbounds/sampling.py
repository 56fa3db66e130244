"""Reproducible sampling of Gibbs measures, marginals and fiber conditionals."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import InsufficientOccupancyError, TuningError
from .model import CoarseMap, GibbsMeasure


def rng_stream(seed: int, stream: int) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, stream)``.

    Philox advances an internal counter per draw, so the full lineage of a
    random number is ``(seed, stream, counter)``.
    """
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream must be nonnegative")
    key = (int(seed) % 2 ** 64) | ((int(stream) % 2 ** 64) << 64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass
class Ensemble:
    """Particle representation of a law in configuration or phase space."""

    points: np.ndarray
    momenta: Optional[np.ndarray] = None
    time: float = 0.0
    seed_lineage: tuple[int, int] = (0, 0)
    weights: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)
    chain_ids: Optional[np.ndarray] = field(default=None, repr=False)  # MCMC batch labels

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.points.shape[0] < 1:
            raise ValueError("ensemble must contain at least one particle")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("ensemble points must be finite")
        if self.momenta is not None:
            self.momenta = np.atleast_2d(np.asarray(self.momenta, dtype=float))
            if self.momenta.shape != self.points.shape or not np.all(np.isfinite(self.momenta)):
                raise ValueError("momenta must be finite and shaped like points")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (self.n,) or np.any(w < 0) or w.sum() <= 0:
                raise ValueError("weights must be nonnegative with positive sum")
            self.weights = w / w.sum()

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def phase_space(self) -> bool:
        return self.momenta is not None

    def normalized_weights(self) -> np.ndarray:
        return np.full(self.n, 1.0 / self.n) if self.weights is None else self.weights

    def state(self) -> np.ndarray:
        return self.points if self.momenta is None else np.hstack([self.points, self.momenta])

    def mean(self) -> np.ndarray:
        return self.normalized_weights() @ self.state()

    def covariance(self) -> np.ndarray:
        x = self.state() - self.mean()
        return (x * self.normalized_weights()[:, None]).T @ x

    def to_csv(self, path) -> None:
        path = Path(path)
        cols = [f"q{i + 1}" for i in range(self.dim)]
        if self.phase_space:
            cols += [f"p{i + 1}" for i in range(self.dim)]
        np.savetxt(path, self.state(), delimiter=",", header=",".join(cols), comments="", fmt="%.17g")
        meta = {"time": self.time, "seed_lineage": list(self.seed_lineage), "n": self.n,
                "phase_space": self.phase_space, "diagnostics": self.diagnostics}
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=float))

    @classmethod
    def from_csv(cls, path) -> "Ensemble":
        path = Path(path)
        data = np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1))
        meta = json.loads(path.with_suffix(".json").read_text())
        if meta["phase_space"]:
            d = data.shape[1] // 2
            return cls(data[:, :d], data[:, d:], meta["time"], tuple(meta["seed_lineage"]),
                       diagnostics=meta["diagnostics"])
        return cls(data, None, meta["time"], tuple(meta["seed_lineage"]), diagnostics=meta["diagnostics"])


@dataclass(frozen=True)
class ChainConfig:
    """MALA settings. ``n_chains`` chains run in lockstep, vectorized."""

    step_size: float = 0.1
    burn_in: int = 10_000
    thin: int = 1
    n_chains: int = 64
    target_accept: float = 0.57
    seed: int = 0
    stream: int = 0

    def __post_init__(self):
        if self.step_size <= 0 or self.burn_in < 0 or self.thin < 1 or self.n_chains < 1:
            raise ValueError("invalid chain configuration")


@dataclass
class ChainResult:
    samples: np.ndarray  # (n, dim)
    acceptance: float
    step_size: float
    batch_ids: np.ndarray  # chain index of each sample, for batch-means errors


def run_mala(log_density: Callable, grad_log_density: Callable, x0: np.ndarray, n: int,
             cfg: ChainConfig, rng: np.random.Generator) -> ChainResult:
    """Metropolis-adjusted Langevin with dual-averaging step adaptation during burn-in.

    ``x0`` has shape ``(n_chains, dim)``; the step size is shared by all chains
    and frozen after burn-in.
    """
    x = np.array(x0, dtype=float)
    nc, dim = x.shape
    lp, gp = log_density(x), grad_log_density(x)

    def propose(x, lp, gp, h):
        y = x + h * gp + np.sqrt(2 * h) * rng.standard_normal(x.shape)
        ly, gy = log_density(y), grad_log_density(y)
        fwd = -np.sum((y - x - h * gp) ** 2, axis=1) / (4 * h)
        bwd = -np.sum((x - y - h * gy) ** 2, axis=1) / (4 * h)
        log_a = ly - lp + bwd - fwd
        log_a = np.where(np.isfinite(log_a), log_a, -np.inf)
        acc = np.log(rng.random(nc)) < log_a
        x = np.where(acc[:, None], y, x)
        lp = np.where(acc, ly, lp)
        gp = np.where(acc[:, None], gy, gp)
        return x, lp, gp, np.minimum(1.0, np.exp(np.minimum(log_a, 0.0))), acc

    # dual averaging (Nesterov / Hoffman–Gelman constants)
    h = cfg.step_size
    mu, log_hbar, hbar_stat = np.log(10 * h), 0.0, 0.0
    gamma, t0, kappa = 0.05, 10.0, 0.75
    for it in range(1, cfg.burn_in + 1):
        x, lp, gp, a, _ = propose(x, lp, gp, h)
        eta = 1.0 / (it + t0)
        hbar_stat = (1 - eta) * hbar_stat + eta * (cfg.target_accept - a.mean())
        log_h = mu - np.sqrt(it) / gamma * hbar_stat
        w = it ** (-kappa)
        log_hbar = w * log_h + (1 - w) * log_hbar
        h = float(np.exp(log_h))
    if cfg.burn_in > 0:
        h = float(np.exp(log_hbar))

    per_chain = -(-n // nc)
    out = np.empty((per_chain, nc, dim))
    accepted = 0
    for i in range(per_chain):
        for _ in range(cfg.thin):
            x, lp, gp, _, acc = propose(x, lp, gp, h)
            accepted += int(acc.sum())
        out[i] = x
    rate = accepted / (per_chain * cfg.thin * nc)
    if not 0.1 <= rate <= 0.9:
        raise TuningError(f"acceptance rate {rate:.3f} outside [0.1, 0.9] (step {h:.3g})")
    samples = out.reshape(-1, dim)[:n]
    chain_ids = np.tile(np.arange(nc), per_chain)[:n]
    return ChainResult(samples, rate, h, chain_ids)


def sample_gibbs(m: GibbsMeasure, n: int, cfg: ChainConfig = ChainConfig(), x0=None) -> Ensemble:
    """MALA samples of ``μ ∝ exp(−βV)``."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = rng_stream(cfg.seed, cfg.stream)
    if x0 is None:
        x0 = rng.standard_normal((cfg.n_chains, m.dim)) / np.sqrt(m.beta)
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (cfg.n_chains, m.dim))
    res = run_mala(m.log_density_unnormalized, m.grad_log_density, x0, n, cfg, rng)
    diag = {"acceptance": res.acceptance, "step_size": res.step_size, "n_chains": cfg.n_chains,
            "burn_in": cfg.burn_in, "thin": cfg.thin}
    return Ensemble(res.samples, seed_lineage=(cfg.seed, cfg.stream), diagnostics=diag,
                    chain_ids=res.batch_ids)


@dataclass
class ConditionalSample:
    z: np.ndarray
    points: np.ndarray
    method: str  # "exact-fiber" or "binned"
    bin_width: Optional[float] = None
    momenta: Optional[np.ndarray] = None
    chain_ids: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)


def sample_conditional(m: GibbsMeasure, cmap: CoarseMap, z, n: int, cfg: ChainConfig = ChainConfig(),
                       *, v=None, bin_width: float | None = None, coarse_range: float | None = None,
                       pool: Ensemble | None = None, basis: np.ndarray | None = None) -> ConditionalSample:
    """Samples of the conditional Gibbs measure on the fiber ``{ξ = z}``.

    Affine maps run MALA in an orthonormal basis of ``ker T`` anchored at a
    particular solution of ``T q + τ = z``. Other maps filter Gibbs samples by
    ``|ξ(q) − z| ≤ bin_width/2``. Passing ``v`` adds momenta drawn exactly from
    the Gibbs momentum factor conditioned on ``T p = v``.
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.shape != (cmap.k,):
        raise ValueError(f"z must have length {cmap.k}")
    rng = rng_stream(cfg.seed, cfg.stream)
    if cmap.is_affine:
        _, N = cmap.fiber_basis()
        if basis is not None:
            N = np.asarray(basis, dtype=float)
        anchor = cmap.fiber_anchor(z)[0]
        pot, beta = m.potential, m.beta

        def logp(s):
            return -beta * pot.eval(anchor + s @ N.T)

        def glogp(s):
            return -beta * pot.grad(anchor + s @ N.T) @ N

        s0 = _fiber_start(logp, glogp, N.shape[1], cfg.n_chains, beta, rng)
        res = run_mala(logp, glogp, s0, n, cfg, rng)
        pts = anchor + res.samples @ N.T
        out = ConditionalSample(z, pts, "exact-fiber", chain_ids=res.batch_ids,
                                diagnostics={"acceptance": res.acceptance, "step_size": res.step_size})
    else:
        if bin_width is None:
            if coarse_range is None:
                raise ValueError("binned mode needs bin_width or coarse_range")
            bin_width = 0.05 * coarse_range
        if pool is None:
            pool = sample_gibbs(m, max(50 * n, 100_000), cfg)
        keep = np.all(np.abs(cmap.xi(pool.points) - z) <= bin_width / 2, axis=-1)
        if keep.sum() < 100:
            raise InsufficientOccupancyError(f"only {int(keep.sum())} samples within the bin around z={z}")
        ids = pool.chain_ids
        out = ConditionalSample(z, pool.points[keep][:n] if n else pool.points[keep], "binned",
                                bin_width=bin_width, chain_ids=None if ids is None else ids[keep][:n],
                                diagnostics={"occupancy": int(keep.sum()), "bias_scale": bin_width})
    if v is not None:
        out.momenta = _conditional_momenta(cmap, v, out.points.shape[0], m.beta, rng)
    return out


def _fiber_start(logp, glogp, dim, n_chains, beta, rng, iters: int = 200):
    """Backtracking gradient ascent towards the fiber mode, then a small jitter."""
    s = np.zeros((1, dim))
    lr = 1e-3
    for _ in range(iters):
        s_new = s + lr * glogp(s)
        if logp(s_new)[0] >= logp(s)[0]:
            s, lr = s_new, lr * 1.5
        else:
            lr *= 0.5
    return s + 1e-2 / np.sqrt(beta) * rng.standard_normal((n_chains, dim))


def _conditional_momenta(cmap: CoarseMap, v, n, beta, rng):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    P, N = cmap.fiber_basis()
    return v @ P.T + (rng.standard_normal((n, N.shape[1])) / np.sqrt(beta)) @ N.T


def batch_means_stderr(values: np.ndarray, chain_ids: Optional[np.ndarray]) -> np.ndarray:
    """Standard error of the mean treating each chain as one batch."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if chain_ids is None or len(np.unique(chain_ids)) < 2:
        return values.std(axis=0, ddof=1) / np.sqrt(values.shape[0])
    ids = np.unique(chain_ids)
    means = np.array([values[chain_ids == i].mean(axis=0) for i in ids])
    return means.std(axis=0, ddof=1) / np.sqrt(len(ids))
