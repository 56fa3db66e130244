import json

import numpy as np
import pytest

from cgbounds.errors import IncompleteReportError
from cgbounds.funcineq import ConstantsReport
from cgbounds.metrics import relative_entropy
from cgbounds.ratefn import (
    assemble_bound,
    defect_conditional_form,
    defect_field,
    fisher_integral,
    loglog_slope,
    rate_functional,
    rate_functional_bound,
    verify_entropy_rate_inequality,
)

from scenarios import coupled_run

C, EPS = 0.25, 0.1


def _analytic(kappa=C, alpha=1 / EPS):
    return {"kappa_H": ConstantsReport("kappa_H", kappa, "analytic"),
            "lambda_H": ConstantsReport("lambda_H", 0.0, "analytic"),
            "alpha_TI": ConstantsReport("alpha_TI", alpha, "analytic"),
            "alpha_LSI": ConstantsReport("alpha_LSI", alpha, "analytic")}


def _relent_report(run, constants, tolerance=1e-3):
    ent = np.interp(run.times, run.full.step_times, run.full.step_entropy)
    lhs = np.array([relative_entropy(a, b) for a, b in zip(run.coarse.densities, run.effective.densities)])
    return assemble_bound("relent-od", run.times, lhs, constants, 1.0, initial=lhs[0], entropy_drop=ent[0] - ent,
                          tolerance=tolerance)


def test_rate_functional_vanishes_on_effective_trajectory():
    _, _, run = coupled_run(C, EPS)
    res = rate_functional(run.effective.densities, [run.eff_field] * len(run.times), run.eff_field, 1.0)
    assert res.total <= 1e-6


def test_entropy_rate_inequality_holds():
    _, _, run = coupled_run(C, EPS)
    rep = verify_entropy_rate_inequality(run.coarse.densities, run.effective.densities, run.cg_fields,
                                         run.eff_field, 1.0)
    assert rep.passed and rep.margin.min() >= -1e-3
    strong = verify_entropy_rate_inequality(run.coarse.densities, run.effective.densities, run.cg_fields,
                                            run.eff_field, 1.0, tau=0.5)
    assert strong.passed


def test_rate_functional_below_fisher_bound():
    _, _, run = coupled_run(C, EPS)
    rate = rate_functional(run.coarse.densities, run.cg_fields, run.eff_field, 1.0).cumulative
    bound = rate_functional_bound(C, 0.0, 1 / EPS, 1 / EPS, 1.0, fisher_integral(run.full.densities, run.mu))
    assert np.all(rate <= bound * (1 + 1e-3) + 1e-12)
    assert rate[-1] > 0


@pytest.mark.slow
def test_defect_forms_agree_on_fine_grid():
    pot, cmap, run = coupled_run(C, EPS, n=256)
    i = len(run.times) // 4
    h_grid, _ = defect_field(run.coarse.densities[i], run.cg_fields[i], run.eff_field, 1.0)
    h_cond = defect_conditional_form(run.full.densities[i], pot, cmap, 1.0, run.coarse_grid, run.eff_field)
    w = run.pushforward[i].values
    diff = np.sqrt(np.sum(w * (np.ravel(h_grid) - np.ravel(h_cond)) ** 2))
    scale = np.sqrt(np.sum(w * np.ravel(h_cond) ** 2))
    assert diff <= 0.02 * scale


def test_missing_constants_raise():
    t = np.linspace(0, 1, 5)
    with pytest.raises(IncompleteReportError) as exc:
        assemble_bound("relent-od", t, np.zeros(5), {"kappa_H": ConstantsReport("kappa_H", 1.0, "analytic")}, 1.0,
                       entropy_drop=np.zeros(5))
    assert "alpha_TI" in str(exc.value)


def test_unknown_theorem_rejected():
    with pytest.raises((KeyError, ValueError)):
        assemble_bound("nope", [0.0, 1.0], [0.0, 0.0], {}, 1.0)


def test_separable_case_has_no_error():
    _, _, run = coupled_run(0.0, EPS)
    rep = _relent_report(run, _analytic(kappa=0.0))
    assert rep.lhs.max() <= 1e-6
    assert rep.passed


def test_relative_entropy_bound_passes_with_analytic_constants():
    _, _, run = coupled_run(C, EPS)
    rep = _relent_report(run, _analytic())
    assert rep.passed
    assert np.all(rep.rhs >= rep.lhs)


def test_weaker_constant_keeps_pass_and_injected_violation_flips():
    _, _, run = coupled_run(C, EPS)
    base = _relent_report(run, _analytic())
    weaker = _relent_report(run, _analytic(alpha=0.5 / EPS))
    assert weaker.passed and np.all(weaker.rhs >= base.rhs)
    # the measured error is far below 1e-3, so detection needs a tolerance under it
    tol = 1e-3 * base.lhs.max()
    assert _relent_report(run, _analytic(), tolerance=tol).passed
    broken = _relent_report(run, _analytic(alpha=1e4 / EPS), tolerance=tol)
    assert broken.rhs[-1] < broken.lhs.max()
    assert not broken.passed and broken.verdict == "fail"


def test_report_serialization_roundtrip(tmp_path):
    _, _, run = coupled_run(C, EPS)
    rep = _relent_report(run, _analytic())
    data = json.loads(rep.to_json())
    assert data["theorem"] == "relent-od" and data["verdict"] == rep.verdict
    assert {c["name"] for c in data["constants"]} >= {"kappa_H", "alpha_TI"}
    rows = rep.rows(scenario="s", eps=EPS)
    assert len(rows) == len(run.times) and rows[0]["eps"] == EPS


def test_loglog_slope_of_power_law():
    x = np.array([0.2, 0.1, 0.05])
    slope, _ = loglog_slope(x, 3 * x ** 2)
    assert slope == pytest.approx(2.0)
