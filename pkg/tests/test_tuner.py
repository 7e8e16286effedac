import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq
from scipy.special import expit, log_expit

from rwmtune.model import RandomSource, StructureError, TargetModel, linear
from rwmtune.sampler import ParameterUpdate, Sampler
from rwmtune.tuner import (
    DEFAULT_TARGET,
    FIXED_SLOPE,
    AcceptanceRecord,
    DegenerateDesignError,
    InvalidFitError,
    LogisticFit,
    SlopePrior,
    TrialDesign,
    UpdateTuner,
    fit_fixed_slope,
    fit_full,
    fixed_slope_score,
    read_tun,
    recommend_step,
    run_trial_stage,
    trial_grid,
    tune_update,
    write_tun,
    write_tuning_report,
)


def test_trial_grid_centred_on_guess():
    g = trial_grid(0.5, TrialDesign(5, 10))
    assert np.allclose(g, [0.125, 0.25, 0.5, 1.0, 2.0])
    assert trial_grid(1.0).size == 13


@pytest.mark.parametrize("kw", [dict(num_step_sizes=4), dict(num_step_sizes=1), dict(attempts_per_size=0),
                                dict(cycles=0), dict(target_acceptance=1.0), dict(spacing_factor=1.0)])
def test_design_validation(kw):
    with pytest.raises(ValueError):
        TrialDesign(**kw)


def test_record_validation():
    with pytest.raises(StructureError):
        AcceptanceRecord([1.0, 1.0], [5, 5], [1, 1])
    with pytest.raises(StructureError):
        AcceptanceRecord([1.0, 2.0], [5, 5], [1, 6])
    with pytest.raises(StructureError):
        AcceptanceRecord([1.0, 2.0], [5], [1])


def _loglik(a, b, rec):
    eta = a + b * np.log(rec.step_sizes)
    return np.sum(rec.acceptances * log_expit(eta) + (rec.attempts - rec.acceptances) * log_expit(-eta))


def _grid_search(rec, a_range=(-10.0, 10.0), b_range=(-6.0, 2.0), rounds=6):
    """Zooming grid search for the unpenalized maximizer."""
    (a_lo, a_hi), (b_lo, b_hi) = a_range, b_range
    for _ in range(rounds):
        A, B = np.meshgrid(np.linspace(a_lo, a_hi, 81), np.linspace(b_lo, b_hi, 81), indexing="ij")
        ls = np.log(rec.step_sizes)
        eta = A[..., None] + B[..., None] * ls
        ll = np.sum(rec.acceptances * log_expit(eta) + (rec.attempts - rec.acceptances) * log_expit(-eta), axis=-1)
        i, j = np.unravel_index(np.argmax(ll), ll.shape)
        a0, b0 = A[i, j], B[i, j]
        da, db = (a_hi - a_lo) / 10, (b_hi - b_lo) / 10
        a_lo, a_hi, b_lo, b_hi = a0 - da, a0 + da, b0 - db, b0 + db
    return a0, b0


def _synthetic_record(rng, m=9, n=50):
    a, b = rng.uniform(0.0, 2.0), rng.uniform(-1.5, -0.8)
    s = np.exp(np.linspace(-2.0, 4.0, m))
    while True:
        x = rng.binomial(n, expit(a + b * np.log(s)))
        if np.sum((x > 0) & (x < n)) >= 2:
            return AcceptanceRecord(s, np.full(m, n), x)


def test_fit_full_converges_fast_and_matches_grid_search():
    rng = np.random.default_rng(2024)
    for _ in range(20):
        rec = _synthetic_record(rng)
        fit = fit_full(rec)
        assert fit.converged and fit.iterations_used < 20
        a, b = _grid_search(rec)
        assert fit.intercept == pytest.approx(a, abs=1e-3)
        assert fit.slope == pytest.approx(b, abs=1e-3)


def test_fit_full_score_equations_vanish():
    rec = _synthetic_record(np.random.default_rng(5))
    fit = fit_full(rec)
    r = rec.acceptances - rec.attempts * fit.predict(rec.step_sizes)
    assert abs(r.sum()) < 1e-8
    assert abs((r * np.log(rec.step_sizes)).sum()) < 1e-8


def test_fit_full_degenerate_designs():
    with pytest.raises(DegenerateDesignError):
        fit_full(AcceptanceRecord([1.0], [10], [5]))
    with pytest.raises(DegenerateDesignError):
        fit_full(AcceptanceRecord([1.0, 2.0], [10, 10], [0, 0]))
    with pytest.raises(DegenerateDesignError):
        fit_full(AcceptanceRecord([1.0, 2.0], [10, 10], [10, 10]))


def test_fit_full_separated_data_does_not_claim_convergence():
    fit = fit_full(AcceptanceRecord([1.0, 2.0, 4.0], [10, 10, 10], [10, 10, 0]))
    assert not fit.converged


records = st.integers(3, 13).flatmap(
    lambda m: st.tuples(
        st.floats(1e-3, 10.0),
        st.lists(st.integers(1, 80), min_size=m, max_size=m),
        st.lists(st.floats(0.0, 1.0), min_size=m, max_size=m),
    )
)


def _record(data):
    guess, n, frac = data
    s = trial_grid(guess, TrialDesign(len(n) if len(n) % 2 else len(n) + 1))[: len(n)]
    n = np.array(n)
    x = np.floor(np.array(frac) * (n + 1)).clip(0, n)
    return AcceptanceRecord(s, n, x)


@settings(max_examples=200, deadline=None)
@given(records)
def test_fixed_slope_fit_solves_score_equation(data):
    rec = _record(data)
    fit = fit_fixed_slope(rec)
    assert fit.converged and fit.slope == FIXED_SLOPE and math.isfinite(fit.intercept)
    # independent root of the penalized score by bracketing
    root = brentq(lambda a: fixed_slope_score(a, rec), -200.0, 200.0, xtol=1e-12)
    assert fit.intercept == pytest.approx(root, abs=1e-6)


def test_fixed_slope_all_zero_and_all_one_are_finite():
    s = trial_grid(0.64 * 2, TrialDesign(3, 10))
    for x in (0, 10):
        fit = fit_fixed_slope(AcceptanceRecord(s, [10] * 3, [x] * 3))
        assert fit.converged
        assert math.isfinite(recommend_step(fit))


def test_zero_acceptance_recommendation():
    fit = fit_fixed_slope(AcceptanceRecord([0.64, 1.28, 2.56], [10] * 3, [0] * 3))
    assert recommend_step(fit) == pytest.approx(0.011, abs=0.002)


def test_fixed_point_when_data_sit_on_the_curve():
    # huge counts exactly on a fixed-slope curve: the prior is negligible
    a_true = 1.3
    s = trial_grid(2.0)
    n = np.full(s.size, 1e7)
    rec = AcceptanceRecord(s, n, n * expit(a_true + FIXED_SLOPE * np.log(s)))
    fit = fit_fixed_slope(rec)
    assert fit.intercept == pytest.approx(a_true, abs=1e-5)
    s_star = recommend_step(fit)
    assert expit(a_true + FIXED_SLOPE * math.log(s_star)) == pytest.approx(DEFAULT_TARGET, abs=1e-5)


@given(st.floats(-5, 5), st.floats(-3, -0.1), st.floats(0.01, 0.99))
def test_recommend_inverts_fitted_curve(a, b, t):
    fit = LogisticFit(a, b, False, 1, True)
    s = recommend_step(fit, t)
    assume(1e-200 < s < 1e200)
    assert fit.predict(s) == pytest.approx(t, rel=1e-8)


def test_recommend_rejects_non_negative_slope():
    with pytest.raises(InvalidFitError):
        recommend_step(LogisticFit(0.0, 0.1, False, 1, True))
    with pytest.raises(ValueError):
        recommend_step(LogisticFit(0.0, -1.0, False, 1, True), 1.0)


def test_simulated_tuning_lands_near_target():
    # acceptance drawn from a known fixed-slope curve; guess one factor of 4 off
    rng = np.random.default_rng(77)
    a_true = 0.76
    hits = 0
    reps = 400
    for _ in range(reps):
        s = trial_grid(4 * math.exp((math.log(DEFAULT_TARGET / (1 - DEFAULT_TARGET)) - a_true) / FIXED_SLOPE))
        x = rng.binomial(50, expit(a_true + FIXED_SLOPE * np.log(s)))
        s_hat = recommend_step(fit_fixed_slope(AcceptanceRecord(s, np.full(s.size, 50), x)))
        hits += abs(expit(a_true + FIXED_SLOPE * math.log(s_hat)) - DEFAULT_TARGET) <= 0.15
    assert hits >= 0.95 * reps


def _normal_setup(start=0.0, step=1.0):
    x = linear("x", [start], step)
    return TargetModel(lambda v: -0.5 * v["x"][0] ** 2, {"x": 1}), x


def test_tune_update_on_normal_target_near_closed_form():
    model, x = _normal_setup(step=0.05)
    res = tune_update(ParameterUpdate(x), model, {"x": x.values}, TrialDesign(13, 200, cycles=2),
                      src=RandomSource(3))
    # closed form for N(0,1) at 1/e is about 3.07; the fitted curve is only approximately logistic
    assert 2.2 < res.step_sizes[0] < 4.2
    assert len(res.slots[0].fits) == 2
    assert x.step_sizes[0] == res.step_sizes[0]


def test_update_tuner_schedule_and_handover(tmp_path):
    model, x = _normal_setup()
    design = TrialDesign(3, 4, cycles=2)
    step = ParameterUpdate(x)
    tuner = UpdateTuner(step, initial_guesses=1.0, design=design, tun_path=tmp_path / "x.tun")
    sampler = Sampler(model, [x], [tuner], RandomSource(0))
    seen = []
    for _ in range(tuner.trial_length):
        assert not tuner.tuned
        sampler.step()
        seen.append(float(x.step_sizes[0]))
    assert tuner.tuned
    # first cycle: each grid size held for attempts_per_size iterations
    assert seen[:4] == [0.5] * 4 and seen[4:8] == [1.0] * 4 and seen[8:12] == [2.0] * 4
    rec = tuner.result.slots[0].records
    assert [r.attempts.tolist() for r in rec] == [[4, 4, 4], [4, 4, 4]]
    # second cycle was centred on the first recommendation
    assert rec[1].step_sizes[1] == pytest.approx(tuner.result.slots[0].recommendations[0])
    assert read_tun(tmp_path / "x.tun") == {"x": float(x.step_sizes[0])}
    assert step.attempts.sum() == 0
    sampler.step()
    assert step.attempts.sum() == 1


def test_trial_stage_batch_matches_incremental_schedule():
    model, x1 = _normal_setup()
    _, x2 = _normal_setup()
    design = TrialDesign(5, 7)
    recs = run_trial_stage(ParameterUpdate(x1), model, {"x": x1.values}, design, RandomSource(8))
    tuner = UpdateTuner(ParameterUpdate(x2), design=design)
    src = RandomSource(8)
    while not tuner.tuned:
        tuner.update(model, {"x": x2.values}, src)
    inc = tuner.result.slots[0].records[0]
    assert np.array_equal(recs[0].acceptances, inc.acceptances)


def test_tun_and_report_round_trip(tmp_path):
    vals = [0.1 + 2.0**-55, 1 / 3]
    p = write_tun(tmp_path / "a.tun", ["mu[0]", "mu[1]"], vals)
    assert read_tun(p) == {"mu[0]": vals[0], "mu[1]": vals[1]}
    model, x = _normal_setup()
    res = tune_update(ParameterUpdate(x), model, {"x": x.values}, TrialDesign(3, 5), src=RandomSource(1))
    text = write_tuning_report(tmp_path / "r.csv", [res]).read_text().splitlines()
    assert text[0].startswith("update,slot,cycle,step_size")
    assert len(text) == 1 + 3


def test_free_slope_option():
    model, x = _normal_setup()
    res = tune_update(ParameterUpdate(x), model, {"x": x.values}, TrialDesign(13, 100), src=RandomSource(2),
                      free_slope=True)
    fit = res.fits[0]
    assert not fit.fixed_slope and fit.slope < 0


def test_prior_validation():
    with pytest.raises(ValueError):
        SlopePrior(-3.0, 0.0)
