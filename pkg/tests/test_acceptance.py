"""Acceptance criteria A1-A12, one test each.

Every test records a one-line ``A<n> PASS|FAIL ...`` summary; the lines are
printed together at the end of the pytest run (see conftest.py). Run this file
directly to see only these lines.
"""

import time

import numpy as np
import pytest
from scipy.integrate import trapezoid

from cgbounds.bench import parse_config, run_scenario, sweep_epsilon
from cgbounds.closure import effective_coefficients, fiber_integral, gradient_flow_residual, levelset_gradient_check
from cgbounds.fpgrid import initial_shifted_fast, solve_full_overdamped
from cgbounds.funcineq import ConstantsReport
from cgbounds.gaussref import (
    effective_drift_matrix,
    effective_overdamped_system,
    gibbs_phase_covariance,
    langevin_reference_suite,
    overdamped_system,
    propagate_moments,
)
from cgbounds.grids import Grid
from cgbounds.integrators import SdeConfig, linear_closure, simulate_coupled_pair, simulate_langevin
from cgbounds.metrics import (
    fisher_information,
    gaussian_divergences,
    gaussian_fisher,
    gaussian_grid,
    relative_entropy,
    wasserstein2,
    wasserstein2_detail,
)
from cgbounds.model import GibbsMeasure, coordinate_map, coupled_quadratic, double_well_fast, rotated_map
from cgbounds.ratefn import assemble_bound, rate_functional, verify_entropy_rate_inequality

from scenarios import BETA, coupled_config, coupled_grid, coupled_run

LINES: dict = {}
C, EPS = 0.25, 0.1
SWEEP = [0.2, 0.1, 0.05]


def record(key: str, ok: bool, detail: str) -> None:
    LINES[key] = f"{key} {'PASS' if ok else 'FAIL'} {detail}"
    print(LINES[key])
    assert ok, LINES[key]


@pytest.fixture(scope="module")
def sweep(tmp_path_factory):
    raw = coupled_config(C, EPS, theorems=["relent-od", "wasser-od"],
                         constants={"alpha_mode": "gaussian-analytic", "kappa_mode": "analytic"})
    return sweep_epsilon(parse_config(raw), SWEEP, jobs=3, out_dir=tmp_path_factory.mktemp("sweep"))


def test_a1_marginal_consistency():
    t0 = time.perf_counter()
    _, _, run = coupled_run.__wrapped__(C, EPS)
    elapsed = time.perf_counter() - t0
    l1 = float(np.abs(run.pushforward[-1].values - run.coarse.densities[-1].values).sum())
    record("A1", l1 <= 5e-3 and elapsed < 60,
           f"L1(push-forward, coarse) at t=1 = {l1:.2e} (<= 5e-3); runtime {elapsed:.1f} s (< 60 s)")


def test_a2_entropy_dissipation():
    pot = coupled_quadratic(C, EPS)
    shift = np.sqrt(EPS / BETA)
    rho0 = initial_shifted_fast(pot, BETA, coupled_grid(C, EPS), shift)
    traj = solve_full_overdamped(pot, BETA, rho0, 1.0, record_fisher=True)
    rise = float(np.diff(traj.step_entropy).max())
    drop = traj.step_entropy[0] - traj.step_entropy[-1]
    dissipated = trapezoid(traj.step_fisher, traj.step_times) / BETA
    gap = abs(drop - dissipated) / drop
    record("A2", rise <= 1e-8 and gap <= 0.01,
           f"max per-step entropy increase {rise:.1e} (<= 1e-8); ledger gap {gap:.2%} (<= 1%)")


def _grad_log_marginal(pot, cmap, box, d=1e-4):
    def log_m(z):
        return np.log(fiber_integral(lambda q: np.exp(-BETA * pot.eval(q)), cmap, z, box))
    return lambda z: (log_m(z + d) - log_m(z - d)) / (2 * d)


def test_a3_gradient_flow_identity():
    cmap, box = coordinate_map(2, (0,)), [(-4.0, 4.0), (-4.0, 4.0)]
    res = {}
    for name, pot in (("coupled", coupled_quadratic(0.5, EPS)), ("double-well", double_well_fast(EPS, c=C))):
        field = effective_coefficients(GibbsMeasure(pot, BETA), cmap, Grid.uniform([(-1.8, 1.8)], 64),
                                       method="quadrature", box=box)
        res[name] = gradient_flow_residual(field, _grad_log_marginal(pot, cmap, box), BETA)
    worst = max(res.values())
    record("A3", worst <= 1e-2, "sup residual " + ", ".join(f"{k} {v:.1e}" for k, v in res.items()) + " (<= 1e-2)")


def test_a4_levelset_gradient():
    grid, box = Grid.uniform([(-3, 3)], 256), [(-6.0, 6.0), (-6.0, 6.0)]

    def psi(q):
        return np.exp(-0.5 * np.sum(q ** 2, axis=-1))

    def grad_psi(q):
        return -q * psi(q)[..., None]

    errs = {name: levelset_gradient_check(psi, grad_psi, cmap, grid, box)["max_relative_error"]
            for name, cmap in (("coordinate", coordinate_map(2, (0,))), ("rotated", rotated_map(0.4)))}
    record("A4", max(errs.values()) <= 1e-2,
           "max relative error " + ", ".join(f"{k} {v:.1e}" for k, v in errs.items()) + " (<= 1e-2)")


def test_a5_entropy_rate_inequality():
    parts, ok = [], True
    for eps in (0.2, 0.1):
        _, _, run = coupled_run(C, eps)
        args = (run.coarse.densities, run.effective.densities, run.cg_fields, run.eff_field, BETA)
        plain = verify_entropy_rate_inequality(*args)
        strong = verify_entropy_rate_inequality(*args, tau=0.5)
        idle = rate_functional(run.effective.densities, [run.eff_field] * len(run.times), run.eff_field, BETA).total
        ok &= plain.margin.min() >= -1e-3 and strong.passed and idle <= 1e-6
        parts.append(f"eps {eps}: min margin {plain.margin.min():.1e}, tau=1/2 {strong.verdict}, "
                     f"I(effective) {idle:.0e}")
    record("A5", ok, "; ".join(parts))


def test_a6_relative_entropy_bound(sweep):
    parts, ok = [], True
    for eps, res, row in zip(sweep.values, sweep.scenarios, sweep.rows):
        rep = res.reports["relent-od"]
        analytic = (row["kappa_H"] == pytest.approx(C) and row["lambda_H"] == 0.0
                    and row["alpha_TI"] == pytest.approx(BETA / eps) and row["alpha_LSI"] == pytest.approx(BETA / eps))
        strict = bool(np.all(rep.rhs >= rep.lhs))
        ok &= rep.passed and strict and analytic
        parts.append(f"eps {eps:g}: {rep.verdict}, sup H {rep.lhs.max():.2e} <= RHS(T) {rep.rhs[-1]:.2e}")
    _, _, sep = coupled_run(0.0, EPS)
    h_sep = max(relative_entropy(a, b) for a, b in zip(sep.coarse.densities, sep.effective.densities))
    ok &= h_sep <= 1e-6
    record("A6", ok, "; ".join(parts) + f"; separable sup H {h_sep:.1e} (<= 1e-6)")


def test_a7_wasserstein_bound(sweep):
    reps = [res.reports["wasser-od"] for res in sweep.scenarios]
    verdicts = all(r.passed and np.all(r.rhs >= r.lhs) for r in reps)
    fit = sweep.slope("wasser-od_rhs_max")
    lhs = [r.lhs.max() for r in reps]
    decreasing = all(a > b for a, b in zip(lhs, lhs[1:]))
    _, _, run = coupled_run(C, EPS)
    mode = wasserstein2_detail(run.coarse.densities[-1], run.effective.densities[-1]).mode
    slope_ok = abs(fit.slope - 2.0) <= 0.01
    record("A7", verdicts and slope_ok and decreasing and mode == "quantile-grid",
           f"verdicts {'pass' if verdicts else 'fail'}; RHS slope {fit.slope:.4f} (target 2.00 +/- 0.01); "
           f"sup W2^2 {', '.join(f'{v:.2e}' for v in lhs)} decreasing with eps: {decreasing}; LHS via {mode}")


class _GaussianCoarseDrift:
    """Exact time-dependent coarse drift of the Gaussian overdamped scenario."""

    k = 1

    def __init__(self, system, m0, S0, c):
        self.system, self.m0, self.S0, self.c = system, m0, S0, c

    def drift(self, z, t=None):
        m, S = propagate_moments(self.system, self.m0, self.S0, [t])
        m, S = m[0], S[0]
        return z + self.c * (m[1] + S[1, 0] / S[0, 0] * (z - m[0]))

    def diffusion(self, z, t=None):
        return np.ones(z.shape[:-1] + (1, 1))


def test_a8_coupled_pair_upper_bound():
    pot = coupled_quadratic(C, EPS)
    H, T = pot.hessian_matrix, np.array([[1.0, 0.0]])
    full = overdamped_system(H, BETA)
    m0, S0 = np.array([0.0, np.sqrt(EPS)]), np.linalg.inv(BETA * H)
    times = np.linspace(0, 1, 11)
    fm, fS = propagate_moments(full, m0, S0, times)
    em, eS = propagate_moments(effective_overdamped_system(H, T, BETA), fm[0, :1], fS[0, :1, :1], times)
    w2sq = np.array([gaussian_divergences(fm[i, :1], fS[i, :1, :1], em[i], eS[i])[1] ** 2 for i in range(times.size)])
    z0 = np.random.default_rng(0).normal(fm[0, 0], np.sqrt(fS[0, 0, 0]), (20000, 1))
    eff = linear_closure(effective_drift_matrix(H, T))
    cfg = SdeConfig(h=0.002, t_end=1.0, beta=BETA)
    pair = simulate_coupled_pair(z0, z0, _GaussianCoarseDrift(full, m0, S0, C), eff, cfg, z0.shape[0],
                                 seed=1, record_times=times)
    same = simulate_coupled_pair(z0, z0, eff, eff, cfg, z0.shape[0], seed=1, record_times=times)
    above = bool(np.all(pair.mean_sq_sep >= w2sq))
    record("A8", above and np.all(same.mean_sq_sep == 0.0),
           f"separation >= exact W2^2 at all {times.size} times: {above} "
           f"(t=1: {pair.mean_sq_sep[-1]:.3e} vs {w2sq[-1]:.3e}); identical closures: {same.mean_sq_sep.max():.0e}")


def test_a9_langevin_bounds(tmp_path):
    t0 = time.perf_counter()
    ok, parts, moment_err = True, [], 0.0
    times = np.linspace(0, 1, 21)
    for c in (0.25, 0.5):
        for eps in (0.2, 0.1):
            res = run_scenario(parse_config(coupled_config(c, eps, "langevin")), tmp_path / f"c{c}-eps{eps}")
            ok &= res.passed and all(np.all(r.rhs >= r.lhs) for r in res.reports.values())
            parts.append(f"c {c} eps {eps}: " + "/".join(r.verdict for r in res.reports.values()))
            pot = coupled_quadratic(c, eps)
            S0 = gibbs_phase_covariance(pot.hessian_matrix, BETA)
            m0 = np.array([0.0, np.sqrt(eps / BETA), 0.0, 0.0])
            ref = langevin_reference_suite(pot, coordinate_map(2, (0,)), BETA, 1.0, m0, S0, times)
            x0 = np.random.default_rng(1).multivariate_normal(m0, S0, 10_000)
            sim = simulate_langevin(pot, x0[:, :2], x0[:, 2:], SdeConfig(h=0.005, t_end=1.0, beta=BETA, gamma=1.0),
                                    seed=3, record_times=times)
            sd = np.sqrt(np.diagonal(ref.full_covs, axis1=1, axis2=2))
            moment_err = max(moment_err, np.max(np.abs(sim.mean - ref.full_means) / sd),
                             np.max(np.abs(sim.cov - ref.full_covs) / np.einsum("ti,tj->tij", sd, sd)))
    elapsed = time.perf_counter() - t0
    ok &= moment_err <= 0.05 and elapsed < 120
    record("A9", ok, "; ".join(parts) + f"; particle moment error {moment_err:.1%} (<= 5%); "
                                        f"runtime {elapsed:.1f} s (< 120 s)")


def test_a10_metric_oracles():
    line = Grid.uniform([(-10, 10)], 2000)
    a, b = gaussian_grid(0.0, 1.0, line), gaussian_grid(1.0, 1.0, line)
    grid_err = max(abs(wasserstein2(a, b) - 1.0), abs(relative_entropy(b, a) - 0.5),
                   abs(fisher_information(b, a) - gaussian_fisher(1.0, 1.0, 0.0, 1.0)))
    rng = np.random.default_rng(0)
    x, y = rng.normal(1.0, 1.0, 100_000), rng.normal(0.0, 1.0, 100_000)
    ens_err = max(abs(wasserstein2(x, y) - 1.0), abs(relative_entropy(x, a) - 0.5) / 0.5)
    witnesses = 0
    for _ in range(100):
        (m1, L1), (m2, L2) = [(rng.normal(size=2), rng.normal(size=(2, 2))) for _ in range(2)]
        S1, S2 = L1 @ L1.T + 0.2 * np.eye(2), L2 @ L2.T + 0.2 * np.eye(2)
        alpha = 1.0 / np.linalg.eigvalsh(S2).max()
        h, w = gaussian_divergences(m1, S1, m2, S2)
        witnesses += (w ** 2 <= 2 * h / alpha * (1 + 1e-9)) and (h <= gaussian_fisher(m1, S1, m2, S2) / (2 * alpha)
                                                                  * (1 + 1e-9))
    record("A10", grid_err <= 1e-3 and ens_err <= 0.02 and witnesses == 100,
           f"grid error {grid_err:.1e} (<= 1e-3); ensemble relative error {ens_err:.2%} (<= 2%); "
           f"Talagrand+LSI witnesses {witnesses}/100")


def test_a11_determinism(tmp_path):
    cfg = parse_config(coupled_config(C, EPS, theorems=["relent-od", "wasser-od", "entropy-rate"]))
    a, b = run_scenario(cfg, tmp_path / "a"), run_scenario(cfg, tmp_path / "b")
    csvs = sorted(p.relative_to(a.out_dir) for p in a.out_dir.rglob("*.csv"))
    same = [((a.out_dir / f).read_bytes() == (b.out_dir / f).read_bytes()) for f in csvs]
    record("A11", bool(csvs) and all(same), f"{sum(same)}/{len(csvs)} CSV files byte-identical across reruns")


def test_a12_falsifiability():
    _, _, run = coupled_run(C, EPS)
    ent = np.interp(run.times, run.full.step_times, run.full.step_entropy)
    lhs = np.array([relative_entropy(x, y) for x, y in zip(run.coarse.densities, run.effective.densities)])
    tol = 1e-3 * lhs.max()  # the default absolute tolerance exceeds the whole measured error

    def report(alpha_ti, alpha_lsi):
        cons = {"kappa_H": ConstantsReport("kappa_H", C, "analytic"),
                "lambda_H": ConstantsReport("lambda_H", 0.0, "analytic"),
                "alpha_TI": ConstantsReport("alpha_TI", alpha_ti, "analytic"),
                "alpha_LSI": ConstantsReport("alpha_LSI", alpha_lsi, "analytic")}
        return assemble_bound("relent-od", run.times, lhs, cons, BETA, initial=lhs[0], entropy_drop=ent[0] - ent,
                              tolerance=tol)

    alpha = BETA / EPS
    base, halved = report(alpha, alpha), report(alpha / 2, alpha)
    factor = 2.0 * base.rhs[-1] / lhs.max()
    broken = report(alpha * factor, alpha)
    ok = base.passed and halved.passed and halved.rhs[-1] > base.rhs[-1] and not broken.passed
    record("A12", ok, f"halved alpha_TI: {halved.verdict} (RHS {base.rhs[-1]:.2e} -> {halved.rhs[-1]:.2e}); "
                      f"alpha product x{factor:.1f}: {broken.verdict} (RHS {broken.rhs[-1]:.2e} < "
                      f"sup H {lhs.max():.2e})")


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
