"""Command-line entry point.

Exit codes: 0 all checks pass, 1 a bound (or validation check) is violated,
2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from ..closure import effective_coefficients
from ..errors import ConfigError, NumericalError
from ..gaussref import (
    effective_overdamped_system,
    langevin_reference_suite,
    overdamped_system,
    propagate_moments,
)
from ..grids import Grid
from ..integrators import SdeConfig, simulate_langevin, simulate_overdamped
from ..metrics import gaussian_divergences
from ..model import GibbsMeasure, check_affine_at_infinity, check_derivatives, check_growth, check_map
from ..sampling import ChainConfig, rng_stream, sample_gibbs
from .config import Config, load_config
from .pipeline import (
    SweepAborted,
    _full_grid,
    _write_json,
    build_map,
    build_potential,
    fast_std,
    gaussian_rows,
    langevin_constants,
    langevin_setup,
    overdamped_constants,
    run_scenario,
    sweep_epsilon,
    write_rows,
)

EXIT_PASS, EXIT_VIOLATION, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


def _out(cfg: Config, sub: str) -> Path:
    p = Path(cfg.out_dir) / sub
    p.mkdir(parents=True, exist_ok=True)
    return p


def _say(msg: str) -> None:
    print(msg, flush=True)


# ---------------------------------------------------------------- subcommands

def cmd_bounds(cfg: Config, args) -> int:
    res = run_scenario(cfg, _out(cfg, "bounds"))
    for th, s in res.summary().items():
        _say(f"{th}: {s['verdict']}  sup lhs {s['sup_lhs']:.4e}  rhs(T) {s['rhs_final']:.4e}  "
             f"min margin {s['min_margin']:.3e}")
    _say(f"artifacts in {res.out_dir}")
    return EXIT_PASS if res.passed else EXIT_VIOLATION


def cmd_sweep(cfg: Config, args) -> int:
    out = _out(cfg, "sweep")
    try:
        res = sweep_epsilon(cfg, jobs=args.jobs, out_dir=out)
    except SweepAborted as exc:
        _say(f"sweep aborted: {exc}; {len(exc.partial.rows)} completed rows kept in {out}")
        raise exc.cause from None
    for row in res.rows:
        verdicts = {k[: -len("_verdict")]: v for k, v in row.items() if k.endswith("_verdict")}
        _say(f"{res.param} = {row[res.param]:g}: {verdicts}")
    for s in res.slopes:
        _say(f"slope {s.quantity}: {s.slope:.4f} (95% CI {s.ci_low:.4f} .. {s.ci_high:.4f})")
    return EXIT_PASS if res.passed else EXIT_VIOLATION


def _coarse_grid(cfg: Config, pot, cmap) -> Grid:
    beta = cfg.physics.beta
    full = _full_grid(cfg, pot, beta, cfg.fast_shift * fast_std(pot, cmap, beta))
    corners = np.array(np.meshgrid(*[(e[0], e[-1]) for e in full.edges], indexing="ij")).reshape(pot.dim, -1).T
    z = cmap.xi(corners)
    return Grid.uniform([(float(z[:, j].min()), float(z[:, j].max())) for j in range(cmap.k)], cfg.grid.n)


def _closure(cfg: Config):
    pot = build_potential(cfg)
    cmap = build_map(cfg, pot.dim)
    grid = _coarse_grid(cfg, pot, cmap)
    planar_affine = cmap.is_affine and pot.dim == 2 and cmap.k == 1
    method = "quadrature" if planar_affine else "sampling"
    box = None
    if planar_affine:
        box = _full_grid(cfg, pot, cfg.physics.beta, cfg.fast_shift * fast_std(pot, cmap, cfg.physics.beta))
        box = [(float(e[0]), float(e[-1])) for e in box.edges]
    field = effective_coefficients(GibbsMeasure(pot, cfg.physics.beta), cmap, grid,
                                   cfg=ChainConfig(burn_in=2000, seed=cfg.seed), method=method,
                                   regime=cfg.physics.regime, box=box)
    return pot, cmap, field


def cmd_closure(cfg: Config, args) -> int:
    _, _, field = _closure(cfg)
    out = _out(cfg, "closure") / "effective_coefficients.csv"
    field.to_csv(out)
    _say(f"effective coefficients on {field.grid.shape[0]} cells -> {out}")
    return EXIT_PASS


def cmd_constants(cfg: Config, args) -> int:
    if cfg.physics.regime == "langevin":
        pot, cmap, _, _ = langevin_setup(cfg)
        constants = langevin_constants(cfg, pot, cmap)
    else:
        pot, cmap, field = _closure(cfg)
        constants = overdamped_constants(cfg, pot, cmap, field)
    out = _out(cfg, "constants") / "constants.json"
    _write_json(out, {n: c.to_dict() for n, c in constants.items()})
    for n, c in constants.items():
        _say(f"{n} = {c.value:.6g}  [{c.provenance}]")
    return EXIT_PASS


def cmd_simulate(cfg: Config, args) -> int:
    pot = build_potential(cfg)
    cmap = build_map(cfg, pot.dim)
    beta, spec = cfg.physics.beta, cfg.simulate
    times = np.asarray(cfg.time.output_times)
    steps = times / spec.h
    if np.any(np.abs(steps - np.rint(steps)) > 1e-9):
        raise ConfigError("simulate.h", "output times must be integer multiples of the step size")
    rng = rng_stream(cfg.seed, 1)
    shift = np.zeros(pot.dim)
    shift += cfg.fast_shift * fast_std(pot, cmap, beta) * cmap.fiber_basis()[1][:, 0]
    if pot.is_quadratic:
        q0 = rng.multivariate_normal(shift, np.linalg.inv(beta * pot.hessian_matrix), spec.n)
    else:
        q0 = sample_gibbs(GibbsMeasure(pot, beta), spec.n, ChainConfig(seed=cfg.seed, stream=1)).points + shift
    sde = SdeConfig(h=spec.h, t_end=cfg.time.t_end, beta=beta, gamma=cfg.physics.gamma or 1.0)
    if cfg.physics.regime == "langevin":
        p0 = rng.normal(scale=1.0 / np.sqrt(beta), size=q0.shape)
        res = simulate_langevin(pot, q0, p0, sde, seed=cfg.seed, stream=2, record_times=times)
    else:
        res = simulate_overdamped(pot, q0, sde, seed=cfg.seed, stream=2, record_times=times)
    out = _out(cfg, "simulate") / "moments.csv"
    res.to_csv(out)
    _say(f"{spec.n} trajectories, aborted fraction {res.aborted_fraction:g} -> {out}")
    if res.aborted_fraction > 0:
        raise NumericalError(f"{res.aborted_fraction:.3%} of trajectories blew up")
    return EXIT_PASS


def cmd_validate_map(cfg: Config, args) -> int:
    pot = build_potential(cfg)
    cmap = build_map(cfg, pot.dim)
    report = {"map": check_map(cmap, seed=cfg.seed),
              "affine_at_infinity": check_affine_at_infinity(cmap, [10.0, 100.0, 1000.0], seed=cfg.seed),
              "potential_derivatives": check_derivatives(pot, seed=cfg.seed),
              "potential_growth": check_growth(pot, seed=cfg.seed)}
    _write_json(_out(cfg, "validate-map") / "validation.json", report)
    ok = True
    for name, r in report.items():
        flag = r.get("pass")
        _say(f"{name}: {'skipped' if flag is None else ('pass' if flag else 'fail')}")
        ok = ok and flag is not False
    return EXIT_PASS if ok else EXIT_VIOLATION


def cmd_oracle(cfg: Config, args) -> int:
    times = np.asarray(cfg.time.output_times)
    if cfg.physics.regime == "langevin":
        pot, cmap, m0, S0 = langevin_setup(cfg)
        ref = langevin_reference_suite(pot, cmap, cfg.physics.beta, cfg.physics.gamma, m0, S0, times)
        rows = gaussian_rows(ref)
    else:
        pot = build_potential(cfg)
        cmap = build_map(cfg, pot.dim)
        if not (pot.is_quadratic and cmap.is_affine):
            raise ConfigError("physics.potential.name", "the Gaussian oracle needs a quadratic potential and affine map")
        beta, H, T = cfg.physics.beta, pot.hessian_matrix, cmap.affine.T
        m0 = cfg.fast_shift * fast_std(pot, cmap, beta) * cmap.fiber_basis()[1][:, 0]
        fm, fS = propagate_moments(overdamped_system(H, beta), m0, np.linalg.inv(beta * H), times)
        cm, cS = fm @ T.T, np.einsum("ij,tjk,lk->til", T, fS, T)
        em, eS = propagate_moments(effective_overdamped_system(H, T, beta), cm[0], cS[0], times)
        rows = []
        for i, t in enumerate(times):
            h, w = gaussian_divergences(cm[i], cS[i], em[i], eS[i])
            rows.append({"time": float(t), "relent": h, "w2": w, "cg_mean1": float(cm[i, 0]),
                         "cg_var1": float(cS[i, 0, 0]), "eff_mean1": float(em[i, 0]), "eff_var1": float(eS[i, 0, 0])})
    out = _out(cfg, "oracle") / "oracle.csv"
    write_rows(out, rows)
    _say(f"Gaussian reference at {len(rows)} times -> {out}")
    return EXIT_PASS


COMMANDS = {
    "simulate": (cmd_simulate, "particle simulation of the full dynamics; writes moment tables"),
    "closure": (cmd_closure, "effective drift and diffusion on the coarse grid"),
    "constants": (cmd_constants, "constants entering the error bounds, with provenance"),
    "bounds": (cmd_bounds, "run the scenario and verify the configured bounds"),
    "sweep": (cmd_sweep, "scale-parameter sweep with log-log slope fits"),
    "validate-map": (cmd_validate_map, "derivative, ellipticity and growth checks for the map and potential"),
    "oracle": (cmd_oracle, "exact Gaussian reference laws for linear scenarios"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cgbounds", description="Verify coarse-graining error bounds numerically.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, type=Path, help="YAML experiment configuration")
        p.add_argument("--seed", type=int, help="override the configured seed (unsigned 64-bit)")
        p.add_argument("--out", type=Path, help="override the output directory")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
        p.add_argument("--tolerance", type=float, help="override the verdict tolerance")
    return parser


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs", "must be at least 1")
        cfg = load_config(args.config).with_overrides(args.seed, args.tolerance,
                                                      None if args.out is None else str(args.out))
        return COMMANDS[args.command][0](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
