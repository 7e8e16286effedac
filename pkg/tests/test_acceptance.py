"""Acceptance gate: one PASS/FAIL line per criterion at the stated tolerances.

Run under pytest (lines appear in the terminal summary) or directly with
``python3 tests/test_acceptance.py``.
"""

import math
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

from _report import record  # noqa: E402
from _stats import within_mc_bound  # noqa: E402
from rwmtune import analytic  # noqa: E402
from rwmtune.experiments import (  # noqa: E402
    NUM_SIZES,
    SUCCESS_WINDOW,
    SimulationScenario,
    design_table,
    exact_success_probability,
    lag1_autocorrelation,
    min_total_trials,
    run_anova_example,
    run_normal_example,
    simulate_tuning_design,
)
from rwmtune.model import RandomSource, TargetModel, linear, positive, probability  # noqa: E402
from rwmtune.sampler import ParameterUpdate, Sampler, SimplexUpdate  # noqa: E402
from rwmtune.tuner import (  # noqa: E402
    AcceptanceRecord,
    TrialDesign,
    UpdateTuner,
    fit_fixed_slope,
    fit_full,
    recommend_step,
)

SEED = 12345


def test_criterion_01_arctan_equals_integral():
    t0 = time.perf_counter()
    s = np.logspace(-2, 2, 50)
    err = max(abs(analytic.integral_acceptance(v) - 2 / math.pi * math.atan(2 / v)) for v in s)
    dt = time.perf_counter() - t0
    ok = err < 1e-8 and dt < 1.0
    assert record(1, "arctan law, analytic vs integral", ok, f"max |diff| {err:.2e} (< 1e-8), {dt:.2f} s (< 1 s)")


def test_criterion_02_arctan_equals_sampler():
    steps = (0.5, 1.0, 2.0, 4.0)
    n, x = analytic.empirical_acceptance("normal", steps, 100_000, RandomSource(SEED))
    diffs = [abs(xi / ni - analytic.arctan_acceptance(s)) for s, ni, xi in zip(steps, n, x)]
    ok = max(diffs) <= 0.01
    detail = ", ".join(f"s={s:g}: {xi / ni:.4f} vs {analytic.arctan_acceptance(s):.4f}" for s, ni, xi in zip(steps, n, x))
    assert record(2, "arctan law, analytic vs sampler", ok, f"{detail} (tol 0.01)")


def test_criterion_03_logit_linearization():
    icpt, slope = analytic.logit_linearization(analytic.LINEARIZATION_GRID)
    slopes = [analytic.logit_linearization(analytic.LINEARIZATION_GRID * sg, sg)[1] for sg in (0.1, 1.0, 10.0)]
    spread = max(slopes) - min(slopes)
    ok = abs(icpt - 0.76) <= 0.10 and abs(slope + 1.12) <= 0.05 and spread <= 1e-6
    assert record(3, "logit linearization", ok,
                  f"intercept {icpt:.4f} (0.76 +- 0.10), slope {slope:.4f} (-1.12 +- 0.05), "
                  f"slope spread over sigma {spread:.1e} (<= 1e-6)")


def test_criterion_04_closed_form_landmarks():
    cases = [(0.44, 2.4, 0.05), (1 / math.e, 3.1, 0.05), (0.23, 5.3, 0.1)]
    got = [analytic.closed_form_step(1.0, p) for p, _, _ in cases]
    ok = all(abs(g - want) <= tol for g, (_, want, tol) in zip(got, cases))
    detail = ", ".join(f"p={p:.3f}: {g:.4f} ({want} +- {tol})" for g, (p, want, tol) in zip(got, cases))
    assert record(4, "closed-form landmarks", ok, detail)


def _grid_search(rec, rounds=6):
    a_lo, a_hi, b_lo, b_hi = -10.0, 10.0, -6.0, 2.0
    ls = np.log(rec.step_sizes)
    for _ in range(rounds):
        A, B = np.meshgrid(np.linspace(a_lo, a_hi, 81), np.linspace(b_lo, b_hi, 81), indexing="ij")
        eta = A[..., None] + B[..., None] * ls
        ll = np.sum(-rec.acceptances * np.logaddexp(0, -eta) - (rec.attempts - rec.acceptances) * np.logaddexp(0, eta), axis=-1)
        i, j = np.unravel_index(np.argmax(ll), ll.shape)
        a0, b0 = A[i, j], B[i, j]
        da, db = (a_hi - a_lo) / 10, (b_hi - b_lo) / 10
        a_lo, a_hi, b_lo, b_hi = a0 - da, a0 + da, b0 - db, b0 + db
    return a0, b0


def test_criterion_05_newton_raphson_convergence():
    rng = np.random.default_rng(SEED)
    s = np.exp(np.linspace(-2.0, 4.0, 9))
    worst_it, worst_err, done = 0, 0.0, 0
    while done < 100:
        a, b = rng.uniform(0.0, 2.0), rng.uniform(-1.5, -0.8)
        x = rng.binomial(50, 1 / (1 + np.exp(-(a + b * np.log(s)))))
        if np.sum((x > 0) & (x < 50)) < 2:
            continue  # not well separated: the MLE may not exist
        rec = AcceptanceRecord(s, np.full(s.size, 50), x)
        fit = fit_full(rec)
        ga, gb = _grid_search(rec)
        worst_it = max(worst_it, fit.iterations_used if fit.converged else 10**6)
        worst_err = max(worst_err, abs(fit.intercept - ga), abs(fit.slope - gb))
        done += 1
    ok = worst_it < 20 and worst_err <= 1e-3
    assert record(5, "Newton-Raphson convergence", ok,
                  f"max iterations {worst_it} (< 20), max |fit - grid search| {worst_err:.1e} (<= 1e-3) over 100 records")


def test_criterion_06_zero_acceptance_edge_case():
    fit = fit_fixed_slope(AcceptanceRecord([0.64, 1.28, 2.56], [10] * 3, [0] * 3))
    s_hat = recommend_step(fit, 1 / math.e)
    ok = abs(s_hat - 0.011) <= 0.002
    assert record(6, "zero-acceptance edge case", ok, f"recommended step {s_hat:.5f} (0.011 +- 0.002)")


def test_criterion_07_worked_scenario():
    t0 = time.perf_counter()
    want = [73, 88, 84, 92, 91]
    attempts = (10, 20, 30, 40, 50)
    counts = [r.successes for r in design_table([4], [9], attempts, 100, RandomSource(SEED))]
    big = [np.array([r.rate for r in design_table([4], [9], attempts, 10_000, RandomSource(seed))])
           for seed in (SEED, SEED + 1)]
    spread = float(np.max(np.abs(big[0] - big[1])))
    dt = time.perf_counter() - t0
    ok = all(abs(c - w) <= 12 for c, w in zip(counts, want)) and spread <= 0.015 and dt < 60
    assert record(7, "worked scenario (guess 0.16, nine sizes)", ok,
                  f"counts {counts} vs {want} (+- 12); 10^4-replication proportions "
                  f"{np.round(big[0] * 100, 1).tolist()}%, seed-to-seed spread {spread * 100:.2f}% (<= 1.5%); {dt:.1f} s")


def test_criterion_08_design_table_properties():
    perfect = exact_success_probability(SimulationScenario(0, 3, 40))
    perfect_sim = simulate_tuning_design(SimulationScenario(0, 3, 40, replications=10_000), RandomSource(SEED)) / 10_000
    over7 = exact_success_probability(SimulationScenario(7, 3, 10))
    over7_sim = simulate_tuning_design(SimulationScenario(7, 3, 10, replications=10_000), RandomSource(SEED)) / 10_000
    # asymmetry: for each factor 2^j an underestimate needs no more trials than the overestimate
    rows = design_table(range(-6, 7), NUM_SIZES, (10, 20, 30, 40, 50), 1000, RandomSource(SEED))
    under = [min_total_trials(rows, -j) for j in range(1, 7)]
    over = [min_total_trials(rows, j) for j in range(1, 7)]
    exact_under = [exact_success_probability(SimulationScenario(-j, 3, 40)) for j in range(1, 7)]
    exact_over = [exact_success_probability(SimulationScenario(j, 3, 40)) for j in range(1, 7)]
    asym = all(u is not None and (o is None or u <= o) for u, o in zip(under, over)) and all(
        u >= o for u, o in zip(exact_under, exact_over))
    ok_perfect = perfect >= 0.95 and perfect_sim >= 0.95
    ok_over7 = over7 <= 0.05
    ok = ok_perfect and ok_over7 and asym
    assert record(8, "design-table properties", ok,
                  f"perfect guess 3x40 {perfect:.3f} exact / {perfect_sim:.3f} simulated (>= 0.95) "
                  f"[{'ok' if ok_perfect else 'FAIL'}]; overestimate 2^7 with 3x10 {over7:.3f} exact / "
                  f"{over7_sim:.3f} simulated (~0) [{'ok' if ok_over7 else 'FAIL'}]; "
                  f"min total trials under {under} vs over {over} [{'ok' if asym else 'FAIL'}]")


def test_criterion_09_end_to_end_examples():
    t0 = time.perf_counter()
    normal = run_normal_example(iterations=10_000, src=RandomSource(SEED))
    t_normal = time.perf_counter() - t0
    t0 = time.perf_counter()
    anova = run_anova_example(iterations=10_000, src=RandomSource(SEED))
    t_anova = time.perf_counter() - t0
    plain = run_anova_example(iterations=10_000, src=RandomSource(SEED), block=False)
    rho_block = lag1_autocorrelation(anova.trace.array("theta")[:, 0])
    rho_plain = lag1_autocorrelation(plain.trace.array("theta")[:, 0])
    lo, hi = SUCCESS_WINDOW
    rates_n, rates_a = normal.acceptance_rates, anova.acceptance_rates
    ok = (len(rates_n) == 2 and normal.in_window() and len(rates_a) == 7 and anova.in_window()
          and rho_block < rho_plain and t_normal < 60 and t_anova < 60)
    fmt = lambda rates: ", ".join(f"{k} {v:.3f}" for k, v in rates.items())  # noqa: E731
    assert record(9, "end-to-end examples", ok,
                  f"normal [{fmt(rates_n)}]; anova [{fmt(rates_a)}] (window [{lo}, {hi}]); "
                  f"theta lag-1 autocorrelation {rho_block:.3f} with block vs {rho_plain:.3f} without; "
                  f"{t_normal:.1f} s / {t_anova:.1f} s")


def test_criterion_10_alternative_target_slopes():
    b_exp = analytic.empirical_slope("exponential", src=RandomSource(SEED))
    b_t2 = analytic.empirical_slope("t2", src=RandomSource(SEED))
    ok = abs(b_exp + 1.08) <= 0.06 and abs(b_t2 + 1.08) <= 0.08
    assert record(10, "alternative-target slopes", ok,
                  f"exponential {b_exp:.4f} (-1.08 +- 0.06), t2 {b_t2:.4f} (-1.08 +- 0.08)")


def _tuned_chain(model, params, update, iterations, seed):
    tuner = UpdateTuner(update, design=TrialDesign())
    sampler = Sampler(model, params, [tuner], RandomSource(seed))
    for _ in range(tuner.trial_length):
        sampler.step()
    return sampler.run(iterations)


def test_criterion_11_stationarity_suite():
    cases = []
    x = linear("x", [0.0], 1.0)
    cases.append(("N(0,1)", TargetModel(lambda v: -0.5 * v["x"][0] ** 2, {"x": 1}), x, ParameterUpdate(x), [(0.0, 1.0)]))
    x = positive("x", [1.0], 1.0)
    cases.append(("Exp(1)", TargetModel(lambda v: -v["x"][0], {"x": 1}), x, ParameterUpdate(x), [(1.0, 2.0)]))
    x = probability("x", [0.5], 1.0)
    cases.append(("Beta(2,2)", TargetModel(lambda v: math.log(v["x"][0]) + math.log1p(-v["x"][0]), {"x": 1}), x,
                  ParameterUpdate(x), [(0.5, 0.3)]))
    x = probability("x", [1 / 3] * 3, 1.0)
    cases.append(("Dirichlet(1,1,1)", TargetModel(lambda v: 0.0, {"x": 3}), x, SimplexUpdate(x), [(1 / 3, 1 / 6)] * 3))
    results, ok = [], True
    for i, (name, model, param, update, moments) in enumerate(cases):
        arr = _tuned_chain(model, [param], update, 50_000, SEED + i).array("x")
        case_ok = True
        for j, (m1, m2) in enumerate(moments):
            case_ok &= within_mc_bound(arr[:, j], m1)[0] and within_mc_bound(arr[:, j] ** 2, m2)[0]
        ok &= case_ok
        results.append(f"{name} {'ok' if case_ok else 'FAIL'} (mean {arr[:, 0].mean():.4f})")
    assert record(11, "stationarity suite", ok, "; ".join(results) + " (4.5 batch-means standard errors)")


if __name__ == "__main__":
    failed = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_criterion_"):
            try:
                fn()
            except AssertionError:
                failed += 1
    sys.exit(1 if failed else 0)
