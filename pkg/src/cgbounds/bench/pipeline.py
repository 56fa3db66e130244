"""Scenario and sweep pipelines: solve, closure, constants, bounds, persistence."""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import metadata
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from ..errors import CgBoundsError, ConfigError
from ..fpgrid import Trajectory, auto_box, discrete_gibbs, initial_shifted_fast, run_coarse_graining
from ..funcineq import (
    ConstantsReport,
    SampleSpec,
    alpha_constants,
    ctilde,
    kappa_lambda_wasser,
    kappa_langevin,
    kappa_relent,
    lambda_relent,
)
from ..gaussref import effective_drift_matrix, gibbs_phase_covariance, langevin_reference_suite
from ..grids import Grid
from ..integrators import AnalyticClosure
from ..metrics import relative_entropy, wasserstein2
from ..model import CoarseMap, Potential, catalog_map, catalog_potential
from ..ratefn import BoundReport, assemble_bound, loglog_slope, verify_entropy_rate_inequality
from .config import Config

MOMENT_GRID = 256  # cells per axis for the moment pre-pass of non-quadratic potentials
MOMENT_HALF_WIDTH = 6.0


def package_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


# ------------------------------------------------------------------ building

def build_potential(cfg: Config) -> Potential:
    try:
        return catalog_potential(cfg.physics.potential, **cfg.physics.potential_params)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError("physics.potential.params", str(exc)) from None


def build_map(cfg: Config, dim: int) -> CoarseMap:
    try:
        cmap = catalog_map(cfg.map.name, **cfg.map.params)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError("map.params", str(exc)) from None
    if cmap.d != dim:
        raise ConfigError("map.params", f"map acts on dimension {cmap.d}, potential on {dim}")
    return cmap


def gibbs_moments(pot: Potential, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of the Gibbs law: exact for quadratics, else from a wide grid."""
    if pot.is_quadratic:
        return np.zeros(pot.dim), np.linalg.inv(beta * pot.hessian_matrix)
    g = Grid.uniform([(-MOMENT_HALF_WIDTH, MOMENT_HALF_WIDTH)] * pot.dim, MOMENT_GRID)
    mu = discrete_gibbs(pot, beta, g)
    return mu.mean(), mu.covariance()


def fast_std(pot: Potential, cmap: CoarseMap, beta: float) -> float:
    """Conditional standard deviation along the first fiber direction, from the Hessian at the origin."""
    _, N = cmap.fiber_basis()
    n = N[:, 0]
    curv = float(n @ pot.hess(np.zeros(pot.dim)) @ n)
    if curv <= 0:
        raise ConfigError("initial.fast_shift", "fiber curvature at the origin is not positive")
    return 1.0 / math.sqrt(beta * curv)


def _sample_spec(cfg: Config) -> SampleSpec:
    return SampleSpec(n_points=cfg.constants.n_points, n_pairs=cfg.constants.n_pairs, seed=cfg.seed)


def _alpha_mode(cfg: Config, pot: Potential, cmap: CoarseMap) -> str:
    mode = cfg.constants.alpha_mode
    if mode == "auto":
        return "gaussian-analytic" if pot.is_quadratic and cmap.is_affine else "bakry-emery"
    return mode


# ------------------------------------------------------------------- results

@dataclass
class ScenarioResult:
    name: str
    config: Config
    reports: dict  # theorem -> BoundReport
    constants: dict  # name -> ConstantsReport
    out_dir: Optional[Path] = None
    data: dict = field(default_factory=dict, repr=False)  # in-memory solver output, not persisted

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports.values())

    def summary(self) -> dict:
        return {th: {"verdict": r.verdict, "min_margin": float(r.margin.min()),
                     "sup_lhs": float(r.lhs.max()), "rhs_final": float(r.rhs[-1])}
                for th, r in self.reports.items()}


# ---------------------------------------------------------------- overdamped

def overdamped_constants(cfg: Config, pot: Potential, cmap: CoarseMap, eff_field) -> dict:
    beta = cfg.physics.beta
    spec = _sample_spec(cfg)
    al = alpha_constants(pot, cmap, beta, mode=_alpha_mode(cfg, pot, cmap), coeffs=eff_field, spec=spec)
    kH = kappa_relent(pot, cmap, beta, eff_field, spec, mode=cfg.constants.kappa_mode)
    lH = lambda_relent(pot, cmap, beta, eff_field, spec)
    kW, lW = kappa_lambda_wasser(pot, cmap, beta, eff_field, spec, mode=cfg.constants.kappa_mode)
    cW = ctilde(eff_field, beta)
    return {"kappa_H": kH, "lambda_H": lH, "kappa_W": kW, "lambda_W": lW, "alpha_PI": al.pi,
            "alpha_TI": al.ti, "alpha_LSI": al.lsi, "ctilde_W": cW}


def _full_grid(cfg: Config, pot: Potential, beta: float, shift: float) -> Grid:
    if cfg.grid.bounds is not None:
        if len(cfg.grid.bounds) != pot.dim:
            raise ConfigError("grid.bounds", f"need {pot.dim} [lo, hi] pairs")
        return Grid.uniform(list(cfg.grid.bounds), cfg.grid.n)
    m, S = gibbs_moments(pot, beta)
    shifted = m.copy()
    shifted[1] += shift
    return Grid.uniform(auto_box([m, shifted], [S, S], cfg.grid.n_std), cfg.grid.n)


def run_overdamped(cfg: Config) -> ScenarioResult:
    """Grid pipeline: lockstep full/coarse solves, discrete-Gibbs closure, constants, bounds."""
    pot = build_potential(cfg)
    cmap = build_map(cfg, pot.dim)
    if pot.dim != 2 or cfg.map.name != "coordinate" or tuple(cfg.map.params.get("indices", (0,))) != (0,):
        raise ConfigError("map", "the overdamped grid pipeline needs a 2-D potential and the coordinate map on q1")
    beta = cfg.physics.beta
    shift = cfg.fast_shift * fast_std(pot, cmap, beta)
    grid = _full_grid(cfg, pot, beta, shift)
    rho0 = initial_shifted_fast(pot, beta, grid, shift)
    run = run_coarse_graining(pot, cmap, beta, rho0, cfg.time.t_end, output_times=cfg.time.output_times)
    times = run.times
    entropy = np.interp(times, run.full.step_times, run.full.step_entropy)
    drop = entropy[0] - entropy
    H = np.array([relative_entropy(a, b) for a, b in zip(run.coarse.densities, run.effective.densities)])
    W2 = np.array([wasserstein2(a, b) ** 2 for a, b in zip(run.coarse.densities, run.effective.densities)])
    constants = overdamped_constants(cfg, pot, cmap, run.eff_field)
    coverage = 1.0 - run.full.max_boundary_mass
    reports: dict[str, BoundReport] = {}
    tol = cfg.tolerance
    for th in cfg.theorems:
        if th == "relent-od":
            used = {n: constants[n] for n in ("kappa_H", "lambda_H", "alpha_TI", "alpha_LSI")}
            reports[th] = assemble_bound(th, times, H, used, beta, initial=H[0], entropy_drop=drop,
                                         tolerance=tol, coverage_mass=coverage)
        elif th == "wasser-od":
            used = {n: constants[n] for n in ("kappa_W", "lambda_W", "alpha_TI", "alpha_LSI", "ctilde_W")}
            reports[th] = assemble_bound(th, times, W2, used, beta, initial=W2[0], entropy_drop=drop,
                                         tolerance=tol, coverage_mass=coverage)
        elif th == "entropy-rate":
            reports[th] = verify_entropy_rate_inequality(run.coarse.densities, run.effective.densities,
                                                         run.cg_fields, run.eff_field, beta, tolerance=tol)
    for r in reports.values():
        r.meta.update(entropy0=float(entropy[0]), fast_shift=shift, lhs_metric=_lhs_metric(r.theorem))
    data = {"run": run, "entropy": entropy, "relent": H, "w2sq": W2, "grid": grid}
    return ScenarioResult(cfg.name, cfg, reports, constants, data=data)


def _lhs_metric(theorem: str) -> str:
    if theorem.startswith("wasser"):
        return "squared Wasserstein-2 distance between coarse-grained and effective laws"
    return "relative entropy of the coarse-grained law with respect to the effective law"


# ------------------------------------------------------------------ langevin

def langevin_setup(cfg: Config):
    pot = build_potential(cfg)
    cmap = build_map(cfg, pot.dim)
    if not (pot.is_quadratic and cmap.is_affine):
        raise ConfigError("physics.potential.name",
                          "the Langevin pipeline uses the Gaussian reference: quadratic potential and affine map only")
    beta = cfg.physics.beta
    d = pot.dim
    _, N = cmap.fiber_basis()
    m0 = np.zeros(2 * d)
    m0[:d] = cfg.fast_shift * fast_std(pot, cmap, beta) * N[:, 0]
    S0 = gibbs_phase_covariance(pot.hessian_matrix, beta)
    return pot, cmap, m0, S0


def langevin_constants(cfg: Config, pot: Potential, cmap: CoarseMap) -> dict:
    beta, gamma = cfg.physics.beta, cfg.physics.gamma
    K = effective_drift_matrix(pot.hessian_matrix, cmap.affine.T)
    closure = AnalyticClosure(lambda z: z[..., : K.shape[0]] @ K.T, cmap.affine.T @ cmap.affine.T.T,
                              k=K.shape[0], name="effective-linear")
    pts = np.linspace(-3.0, 3.0, 7)[:, None] * np.ones((1, 2 * K.shape[0]))
    phase = alpha_constants(pot, cmap, beta, mode="gaussian-analytic", regime="langevin")
    position = alpha_constants(pot, cmap, beta, mode="gaussian-analytic", regime="position-only")
    return {"kappa": kappa_langevin(pot, cmap, beta),
            "alpha_TI": phase.ti,
            "alpha_TI_position": replace(position.ti, name="alpha_TI_position"),
            "ctilde": ctilde(closure, beta, "langevin", gamma=gamma, points=pts)}


def run_langevin(cfg: Config) -> ScenarioResult:
    """Gaussian pipeline: exact moment propagation for the coarse-grained and effective laws."""
    pot, cmap, m0, S0 = langevin_setup(cfg)
    beta, gamma = cfg.physics.beta, cfg.physics.gamma
    times = np.asarray(cfg.time.output_times)
    ref = langevin_reference_suite(pot, cmap, beta, gamma, m0, S0, times)
    constants = langevin_constants(cfg, pot, cmap)
    w2sq = ref.w2 ** 2
    reports = {}
    for th in cfg.theorems:
        lhs = ref.relent if th == "relent-lan" else w2sq
        used = {"kappa": constants["kappa"], "alpha_TI": constants["alpha_TI"]}
        if th == "wasser-lan":
            used["ctilde"] = constants["ctilde"]
        rep = assemble_bound(th, times, lhs, used, beta, initial=lhs[0], gamma=gamma, entropy0=ref.entropy0,
                             tolerance=cfg.tolerance, coverage_mass=1.0)
        alt = dict(used, alpha_TI=constants["alpha_TI_position"].value)
        rep_pos = assemble_bound(th, times, lhs, alt, beta, initial=lhs[0], gamma=gamma, entropy0=ref.entropy0)
        rep.meta.update(entropy0=ref.entropy0, lhs_metric=_lhs_metric(th),
                        rhs_position_only_alpha=rep_pos.rhs.tolist(), verdict_position_only_alpha=rep_pos.verdict)
        reports[th] = rep
    return ScenarioResult(cfg.name, cfg, reports, constants, data={"reference": ref, "m0": m0, "S0": S0})


# --------------------------------------------------------------- persistence

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_rows(path: Path, rows: Sequence[dict], columns: Optional[Sequence[str]] = None) -> None:
    columns = list(columns or (rows[0].keys() if rows else []))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    return str(o)


def _eps_of(cfg: Config) -> Optional[float]:
    v = cfg.physics.potential_params.get("eps")
    return None if v is None else float(v)


def write_scenario(res: ScenarioResult, out_dir) -> Path:
    """Persist reports, tables and trajectories; no timestamps, so reruns are byte-identical."""
    out = Path(out_dir)
    (out / "reports").mkdir(parents=True, exist_ok=True)
    files = []

    def record(p: Path):
        files.append(str(p.relative_to(out)))

    eps = _eps_of(res.config)
    rows = []
    for th, rep in res.reports.items():
        p = out / "reports" / f"{th}.json"
        rep.to_json(p)
        record(p)
        rows.extend(rep.rows(res.name, eps))
        dat = out / f"plot_{th}.dat"
        np.savetxt(dat, np.column_stack([rep.times, rep.lhs, rep.rhs]), fmt="%.17g", header="time lhs rhs")
        record(dat)
    p = out / "bounds.csv"
    write_rows(p, rows, ["scenario", "eps", "theorem", "time", "lhs", "rhs", "margin", "verdict"])
    record(p)
    p = out / "constants.json"
    _write_json(p, {n: c.to_dict() for n, c in res.constants.items()})
    record(p)

    if "run" in res.data:
        run = res.data["run"]
        traj = out / "trajectories"
        traj.mkdir(exist_ok=True)
        for label, tr in (("coarse", run.coarse), ("effective", run.effective),
                          ("pushforward", Trajectory(run.times, run.pushforward))):
            p = traj / f"{label}.csv"
            tr.to_csv(p)
            record(p)
        p = out / "effective_coefficients.csv"
        run.eff_field.to_csv(p)
        record(p)
        p = out / "entropy.csv"
        write_rows(p, [{"time": float(t), "relent_full": float(h), "relent_cg_eff": float(a), "w2sq_cg_eff": float(w)}
                       for t, h, a, w in zip(run.times, res.data["entropy"], res.data["relent"], res.data["w2sq"])])
        record(p)
    if "reference" in res.data:
        ref = res.data["reference"]
        p = out / "moments.csv"
        write_rows(p, gaussian_rows(ref))
        record(p)

    manifest = {
        "name": res.name,
        "config": res.config.to_dict(),
        "config_hash": res.config.hash(),
        "seed": res.config.seed,
        "package_version": package_version(),
        "verdicts": {th: r.verdict for th, r in res.reports.items()},
        "constant_provenance": {n: c.provenance for n, c in res.constants.items()},
        "files": sorted(files),
    }
    _write_json(out / "manifest.json", manifest)
    res.out_dir = out
    return out


def gaussian_rows(ref) -> list[dict]:
    rows = []
    for i, t in enumerate(ref.times):
        row = {"time": float(t), "relent": float(ref.relent[i]), "w2": float(ref.w2[i])}
        for label, m, S in (("cg", ref.cg_means, ref.cg_covs), ("eff", ref.eff_means, ref.eff_covs)):
            for j in range(m.shape[1]):
                row[f"{label}_mean{j + 1}"] = float(m[i, j])
                row[f"{label}_var{j + 1}"] = float(S[i, j, j])
        rows.append(row)
    return rows


def run_scenario(cfg: Config, out_dir=None) -> ScenarioResult:
    """Execute the configured pipeline and, when ``out_dir`` is given, write its artifacts."""
    res = run_overdamped(cfg) if cfg.physics.regime == "overdamped" else run_langevin(cfg)
    if out_dir is not None:
        write_scenario(res, out_dir)
    return res


# --------------------------------------------------------------------- sweep

@dataclass
class SlopeFit:
    quantity: str
    slope: float
    stderr: float
    ci_low: float
    ci_high: float

    def to_dict(self) -> dict:
        return dict(vars(self))


@dataclass
class SweepResult:
    param: str
    values: list
    rows: list
    slopes: list
    scenarios: list
    out_dir: Optional[Path] = None
    complete: bool = True

    @property
    def passed(self) -> bool:
        return self.complete and all(s.passed for s in self.scenarios)

    def slope(self, quantity: str) -> SlopeFit:
        for s in self.slopes:
            if s.quantity == quantity:
                return s
        raise KeyError(quantity)


class SweepAborted(CgBoundsError):
    """A member scenario failed; completed rows are kept on ``partial``."""

    def __init__(self, value, cause: BaseException, partial: "SweepResult"):
        super().__init__(f"scenario at {partial.param} = {value:g} failed: {cause}")
        self.cause = cause
        self.partial = partial


def _sweep_row(param: str, value: float, res: ScenarioResult) -> dict:
    row = {param: value}
    for th, rep in res.reports.items():
        row[f"{th}_sup_lhs"] = float(rep.lhs.max())
        row[f"{th}_rhs_max"] = float(rep.rhs.max())
        row[f"{th}_verdict"] = rep.verdict
        if "prefactor" in rep.meta:
            row[f"{th}_prefactor"] = float(rep.meta["prefactor"])
    for name, c in res.constants.items():
        row[name] = c.value
    return row


def fit_slope(quantity: str, x, y, level: float = 0.95) -> SlopeFit:
    slope, se = loglog_slope(x, y)
    dof = len(x) - 2
    half = float(stats.t.ppf(0.5 + level / 2, dof)) * se if dof > 0 else math.inf
    return SlopeFit(quantity, slope, se, slope - half, slope + half)


def _sweep_slopes(param: str, rows: list) -> list:
    fits = []
    x = [r[param] for r in rows]
    for key in rows[0]:
        if key.endswith(("_sup_lhs", "_rhs_max", "_prefactor")):
            y = [r[key] for r in rows]
            if all(v > 0 for v in y):
                fits.append(fit_slope(key, x, y))
    return fits


def _job(args):
    cfg, out = args
    return run_scenario(cfg, out)


def check_sweep_values(values) -> list:
    vals = [float(v) for v in values]
    if len(vals) < 3:
        raise ConfigError("sweep.values", "need at least 3 entries")
    if any(b >= a for a, b in zip(vals, vals[1:])):
        raise ConfigError("sweep.values", "must be strictly decreasing")
    return vals


def sweep_epsilon(cfg: Config, eps_list: Optional[Sequence[float]] = None, jobs: int = 1, out_dir=None,
                  param: Optional[str] = None) -> SweepResult:
    """Run one scenario per parameter value; fit log-log slopes of every bound quantity.

    Jobs run in a bounded process pool; job ``i`` always gets value ``i`` and
    the configured seed, so the table does not depend on ``jobs``.
    """
    param = param or cfg.sweep.param
    values = check_sweep_values(cfg.sweep.values if eps_list is None else eps_list)
    cfgs = [cfg.with_param(param, v) for v in values]
    outs = [None if out_dir is None else Path(out_dir) / f"{i:02d}_{param}{v:g}" for i, v in enumerate(values)]
    results: list[ScenarioResult] = []
    failure = None
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(cfgs), os.cpu_count() or 1)) as pool:
            futures = [pool.submit(_job, a) for a in zip(cfgs, outs)]
            for v, fut in zip(values, futures):
                if failure is not None:
                    fut.cancel()
                    continue
                try:
                    results.append(fut.result())
                except Exception as exc:  # noqa: BLE001 - reported with partial results
                    failure = (v, exc)
    else:
        for v, a in zip(values, zip(cfgs, outs)):
            try:
                results.append(_job(a))
            except Exception as exc:  # noqa: BLE001
                failure = (v, exc)
                break
    rows = [_sweep_row(param, v, r) for v, r in zip(values, results)]
    slopes = _sweep_slopes(param, rows) if len(rows) >= 3 else []
    out = SweepResult(param, values[: len(rows)], rows, slopes, results, None, failure is None)
    if out_dir is not None:
        write_sweep(out, out_dir)
    if failure is not None:
        raise SweepAborted(failure[0], failure[1], out) from failure[1]
    return out


def write_sweep(res: SweepResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if res.rows:
        cols = list(res.rows[0].keys())
        write_rows(out / "sweep.csv", res.rows, cols)
    _write_json(out / "slopes.json", {"complete": res.complete, "slopes": [s.to_dict() for s in res.slopes]})
    res.out_dir = out
    return out
