"""Acceptance gate: one test per criterion, bands read from the packaged acceptance.json.

Each test records a one-line verdict; the lines are printed in the terminal
summary (and directly when this file is run as a script).
"""
import sys

import numpy as np
import pytest

from parahom.analysis import StudySetup, expansion_gain, lipschitz_probe, rate_sweep
from parahom.cell import (TorusGrid, corrector, effective_tensor, lambda_comparison_sweep)
from parahom.coefficients import make_family
from parahom.fitting import observed_orders
from parahom.flux import flux_check, flux_lambda_scaling
from parahom.harness import ExperimentConfig, load_packaged, run
from parahom.pde import FineScale, PdeProblem, Resolution, solve_parabolic
from parahom.smoothing import TestFunction, TwoScaleSymbol, verify_smoothing_bounds

CRIT = load_packaged("acceptance.json")
VERDICTS = {}
RATE_PARTS = {}
XT = (0.5, 0.0)


def verdict(num: int, title: str, ok: bool, detail: str):
    line = f"criterion {num} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    VERDICTS[num] = line
    print(line)
    assert ok, line


def _in(v, band):
    return band[0] <= v <= band[1]


def test_criterion_1_effective_oracle():
    c = CRIT["effective_oracle"]
    f = make_family(c["family"])
    n = c["n"]
    vals = {}
    for kind in ("infinity", "zero"):
        corr = corrector(f, XT, TorusGrid(1, n, n), kind)
        vals[kind] = effective_tensor(f, XT, corr).matrix[0, 0]
    for lam in c["lambdas"]:
        corr = corrector(f, XT, TorusGrid(1, n, n, lam), "lambda")
        vals[f"lambda={lam:g}"] = effective_tensor(f, XT, corr).matrix[0, 0]
    err = max(abs(v - c["target"]) for v in vals.values())
    verdict(1, "effective coefficient equals the harmonic mean", err <= c["tol"],
            f"max |a_hat - sqrt 3| = {err:.2e} (tol {c['tol']:g}) over {len(vals)} cases")


def test_criterion_2_lambda_rates():
    c = CRIT["lambda_rates"]
    f = make_family(c["family"])
    grid = TorusGrid(1, c["n"], c["n"])
    s_inf = lambda_comparison_sweep(f, XT, c["inf_lambdas"], grid).fit_inf.slope
    s_zero = lambda_comparison_sweep(f, XT, c["zero_lambdas"], grid).fit_zero.slope
    ok = _in(s_inf, c["inf_band"]) and _in(s_zero, c["zero_band"])
    verdict(2, "lambda -> inf and lambda -> 0 rates", ok,
            f"slope_inf = {s_inf:.3f} (band {c['inf_band']}), slope_zero = {s_zero:.3f} (band {c['zero_band']})")


def test_criterion_3_flux_identities():
    c = CRIT["flux_identities"]
    f = make_family(c["family"])
    reps = [flux_check(f, XT, TorusGrid(1, n, n, 1.0)) for n in c["n"]]
    anti = max(r.antisymmetry for r in reps)
    order = float(np.min(-observed_orders(c["n"], [r.residual for r in reps])))
    spread = flux_lambda_scaling(f, XT, c["lambdas"], TorusGrid(1, 64, 64))["spread"]
    ok = anti <= c["antisymmetry"] and order >= c["min_order"] and spread <= c["spread"]
    verdict(3, "flux corrector identities", ok,
            f"antisymmetry {anti:.1e}, residual order {order:.2f} (>= {c['min_order']}), "
            f"time-row spread {spread:.2f} (<= {c['spread']})")


def test_criterion_4_smoothing_rate():
    c = CRIT["smoothing"]
    g = TwoScaleSymbol.from_coefficient(make_family(c["family"]))
    rep = verify_smoothing_bounds(g, TestFunction.sine(), c["deltas"], c["eps"])
    s = rep.fit.slope
    verdict(4, "smoothing approximation error vs delta", _in(s, c["band"]),
            f"slope = {s:.3f} (band {c['band']})")


@pytest.mark.parametrize("ell", ["2", "1", "2.5"])
def test_criterion_5_three_regime_rates(ell):
    c = CRIT["rates"]
    setup = StudySetup(make_family(c["family"]), time_factor=float(c["time_factor"][ell]))
    rep = rate_sweep(setup, float(ell), c["eps"])
    band = c["bands"][ell]
    ok = _in(rep.fit.slope, band)
    line = f"ell = {ell}: slope {rep.fit.slope:.3f} (band {band}, predicted {rep.predicted:g})"
    RATE_PARTS[ell] = (ok, line)
    state = all(v[0] for v in RATE_PARTS.values())
    VERDICTS[5] = (f"criterion 5 [{'PASS' if state else 'FAIL'}] homogenization rates: "
                   + "; ".join(v[1] for v in RATE_PARTS.values()))
    print(VERDICTS[5])
    assert ok, line


def test_criterion_6_lipschitz_uniformity():
    c = CRIT["lipschitz"]
    setup = StudySetup(make_family(c["family"]))
    rep = lipschitz_probe(setup, c["eps"], c["ell"], c["radii"])
    verdict(6, "large-scale Lipschitz probe is eps-uniform", rep.max_growth <= c["max_growth"],
            f"max growth {rep.max_growth:.3f} (<= {c['max_growth']})")


def test_criterion_7_expansion_gain():
    c = CRIT["expansion"]
    setup = StudySetup(make_family(c["family"]))
    reps = [expansion_gain(setup, e, c["lam"], max_delta=c["max_delta"]) for e in c["eps"]]
    ratios = [r.ratio for r in reps]
    spread = max(ratios) / min(ratios)
    gains = all(r.gain for r in reps)
    verdict(7, "two-scale expansion gain", spread <= c["ratio_spread"] and gains,
            f"ratio spread {spread:.2f} (<= {c['ratio_spread']}), "
            f"corrected gradient smaller at every eps: {gains}")


def test_criterion_8_property_suites(tmp_path):
    failures = []
    # ellipticity and mean-zero correctors over every kind and a range of families
    for spec in ({"family": "trig_product", "a0": 2.0, "c": 1.0},
                 {"family": "trig_product", "a0": 1.5, "b": 0.2, "c": 0.5, "e": 0.3},
                 {"family": "trig_product", "d": 2, "a0": 2.0, "c": 0.8},
                 {"family": "laminate2d", "d": 2}):
        f = make_family(spec)
        xt = XT if f.dim == 1 else ((0.5, 0.5), 0.0)
        for kind, lam in (("infinity", None), ("zero", None), ("lambda", 0.5), ("lambda", 4.0)):
            grid = TorusGrid(f.dim, 16 if f.dim == 2 else 32, 16, lam)
            corr = corrector(f, xt, grid, kind)
            tens = effective_tensor(f, xt, corr)
            if not tens.min_eig_sym() >= f.mu * (1 - 1e-10):
                failures.append(f"ellipticity {spec['family']} {kind}")
            if corr.mean_violation() > 1e-10:
                failures.append(f"mean {spec['family']} {kind}")
    # energy decay and positivity of the solver
    def g0(x, t):
        # initial data through the t = 0 boundary slot, zero lateral values
        v = np.sin(np.pi * x) ** 2
        return np.where(np.asarray(t) == 0.0, v, 0.0 * v)
    fine = FineScale(make_family({"family": "trig_product", "a0": 2.0, "c": 1.0}), 0.25, 0.25)
    sol = solve_parabolic(PdeProblem(1, 0.1, fine, 0.0, g0), Resolution(64, 400, 400))
    if not np.all(np.diff(np.sum(sol.u ** 2, axis=1)) <= 1e-15):
        failures.append("energy decay")
    pos = solve_parabolic(PdeProblem(1, 0.2, fine, 1.0, 0.0), Resolution(64, 256, 32))
    if pos.u.min() < -1e-13:
        failures.append("positivity")
    # determinism of the harness
    outs = []
    for k in range(2):
        cfg = ExperimentConfig.default("cell")
        cfg.params.update(n_y=16, n_s=16)
        cfg.out = str(tmp_path / f"run{k}")
        run(cfg)
        outs.append((tmp_path / f"run{k}" / "cell.csv").read_bytes())
    if outs[0] != outs[1]:
        failures.append("determinism")
    verdict(8, "property suites", not failures,
            "ellipticity, mean-zero correctors, energy decay, positivity, determinism"
            + ("" if not failures else f" -- failed: {', '.join(failures)}"))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
