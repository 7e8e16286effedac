"""Trial-stage step-size tuning.

A tunable update is run at a geometric grid of step sizes around an initial
guess, the acceptance counts are fitted with a logistic regression of
acceptance on log step size, and the step size predicted to hit the target
acceptance rate is installed.  By default the slope is fixed at -1.12145 and
only the intercept is estimated, under a N(-3, 5^2) prior.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit, log_expit

from .model import StructureError

FIXED_SLOPE = -1.12145
DEFAULT_TARGET = math.exp(-1.0)
P_CLAMP = 1e-12


class DegenerateDesignError(ValueError):
    """The trial data cannot identify both intercept and slope."""


class InvalidFitError(ValueError):
    pass


@dataclass(frozen=True)
class TrialDesign:
    num_step_sizes: int = 13
    attempts_per_size: int = 50
    cycles: int = 1
    target_acceptance: float = DEFAULT_TARGET
    spacing_factor: float = 2.0

    def __post_init__(self):
        if self.num_step_sizes < 3 or self.num_step_sizes % 2 == 0:
            raise ValueError("num_step_sizes must be odd and at least 3")
        if self.attempts_per_size < 1 or self.cycles < 1:
            raise ValueError("attempts_per_size and cycles must be positive")
        if not 0 < self.target_acceptance < 1:
            raise ValueError("target acceptance must lie in (0, 1)")
        if not self.spacing_factor > 1:
            raise ValueError("spacing factor must exceed 1")


@dataclass(frozen=True)
class SlopePrior:
    """Normal prior on the intercept used by the fixed-slope fit."""

    mean: float = -3.0
    sd: float = 5.0

    def __post_init__(self):
        if not self.sd > 0:
            raise ValueError("prior sd must be positive")


@dataclass
class AcceptanceRecord:
    step_sizes: np.ndarray
    attempts: np.ndarray
    acceptances: np.ndarray

    def __post_init__(self):
        self.step_sizes = np.asarray(self.step_sizes, dtype=float).reshape(-1)
        self.attempts = np.asarray(self.attempts, dtype=float).reshape(-1)
        self.acceptances = np.asarray(self.acceptances, dtype=float).reshape(-1)
        m = self.step_sizes.size
        if m == 0 or self.attempts.size != m or self.acceptances.size != m:
            raise StructureError("record arrays must be non-empty and of equal length")
        if np.any(self.step_sizes <= 0):
            raise StructureError("step sizes must be positive")
        if np.any(np.diff(self.step_sizes) <= 0):
            raise StructureError("step sizes must be strictly increasing")
        if np.any(self.acceptances < 0) or np.any(self.acceptances > self.attempts):
            raise StructureError("need 0 <= acceptances <= attempts")

    @property
    def rates(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.acceptances / self.attempts


@dataclass
class LogisticFit:
    intercept: float
    slope: float
    fixed_slope: bool
    iterations_used: int
    converged: bool

    def predict(self, s):
        return expit(self.intercept + self.slope * np.log(s))

    def recommend(self, target: float = DEFAULT_TARGET) -> float:
        return recommend_step(self, target)


def trial_grid(initial_guess: float, design: TrialDesign = TrialDesign()) -> np.ndarray:
    """Step sizes guess * factor^k, k = -(m-1)/2 .. (m-1)/2."""
    if not initial_guess > 0:
        raise ValueError("initial guess must be positive")
    half = (design.num_step_sizes - 1) // 2
    k = np.arange(-half, half + 1, dtype=float)
    return initial_guess * design.spacing_factor**k


def _score_info(a, b, ls, n, x):
    eta = a + b * ls
    p = expit(eta)
    r = x - n * p
    pc = np.clip(p, P_CLAMP, 1.0 - P_CLAMP)
    w = n * pc * (1.0 - pc)
    return r, w


def fit_full(record: AcceptanceRecord, max_iter: int = 100, tol: float = 1e-10) -> LogisticFit:
    """Maximum-likelihood (intercept, slope) by Newton-Raphson from (0, 0)."""
    s, n, x = record.step_sizes, record.attempts, record.acceptances
    if np.unique(s).size < 2:
        raise DegenerateDesignError("need at least two distinct step sizes")
    if not 0 < x.sum() < n.sum():
        raise DegenerateDesignError("acceptances are all zero or all one")
    ls = np.log(s)
    a = b = 0.0
    for it in range(1, max_iter + 1):
        r, w = _score_info(a, b, ls, n, x)
        A, B, C = w.sum(), (w * ls).sum(), (w * ls * ls).sum()
        det = A * C - B * B
        if not det > 1e-12 * max(A * C, 1e-300):
            raise DegenerateDesignError("information matrix is singular")
        g0, g1 = r.sum(), (r * ls).sum()
        da = (C * g0 - B * g1) / det
        db = (A * g1 - B * g0) / det
        a = float(a + da)
        b = float(b + db)
        if not (math.isfinite(a) and math.isfinite(b)):
            return LogisticFit(a, b, False, it, False)
        if abs(da) < tol and abs(db) < tol:
            return LogisticFit(a, b, False, it, True)
    return LogisticFit(a, b, False, max_iter, False)


def penalized_loglik(a: float, record: AcceptanceRecord, slope: float, prior: SlopePrior) -> float:
    eta = a + slope * np.log(record.step_sizes)
    x, n = record.acceptances, record.attempts
    ll = np.sum(x * log_expit(eta) + (n - x) * log_expit(-eta))
    return float(ll - 0.5 * ((a - prior.mean) / prior.sd) ** 2)


def fixed_slope_score(a: float, record: AcceptanceRecord, slope: float = FIXED_SLOPE, prior: SlopePrior = SlopePrior()) -> float:
    """Derivative of the penalized log-likelihood in the intercept."""
    p = expit(a + slope * np.log(record.step_sizes))
    return float(np.sum(record.acceptances - record.attempts * p) - (a - prior.mean) / prior.sd**2)


def fit_fixed_slope(
    record: AcceptanceRecord,
    slope: float = FIXED_SLOPE,
    prior: SlopePrior = SlopePrior(),
    max_iter: int = 100,
    tol: float = 1e-10,
    max_halvings: int = 30,
) -> LogisticFit:
    """Posterior-mode intercept with the slope held fixed.

    Newton steps start from the prior mean; a step is halved while it lowers
    the penalized log-likelihood.
    """
    s, n, x = record.step_sizes, record.attempts, record.acceptances
    ls = np.log(s)
    prec = 1.0 / prior.sd**2
    a = prior.mean
    cur = penalized_loglik(a, record, slope, prior)
    for it in range(1, max_iter + 1):
        r, w = _score_info(a, slope, ls, n, x)
        step = (r.sum() - (a - prior.mean) * prec) / (w.sum() + prec)
        new = penalized_loglik(a + step, record, slope, prior)
        halvings = 0
        while new < cur and halvings < max_halvings and abs(step) > tol:
            step *= 0.5
            halvings += 1
            new = penalized_loglik(a + step, record, slope, prior)
        a = float(a + step)
        cur = new
        if abs(step) < tol:
            return LogisticFit(a, slope, True, it, True)
    return LogisticFit(a, slope, True, max_iter, False)


def recommend_step(fit: LogisticFit, target_acceptance: float = DEFAULT_TARGET) -> float:
    """Step size at which the fitted curve equals ``target_acceptance``."""
    if not fit.slope < 0:
        raise InvalidFitError(f"fitted slope {fit.slope} is not negative")
    if not 0 < target_acceptance < 1:
        raise ValueError("target acceptance must lie in (0, 1)")
    t = target_acceptance
    return math.exp((math.log(t) - math.log1p(-t) - fit.intercept) / fit.slope)


def run_trial_stage(step, model, values, design: TrialDesign, src, centers=None) -> list[AcceptanceRecord]:
    """Run the trial experiment on every slot of ``step``.

    All slots move to grid index i together and stay there for
    ``attempts_per_size`` calls before index i + 1.  Trial moves are real
    chain moves.
    """
    centers = np.asarray(step.step_sizes if centers is None else centers, dtype=float).copy()
    grids = [trial_grid(c, design) for c in centers]
    m = design.num_step_sizes
    n = np.zeros((step.n_slots, m), dtype=np.int64)
    x = np.zeros((step.n_slots, m), dtype=np.int64)
    for i in range(m):
        step.set_step_sizes([g[i] for g in grids])
        for _ in range(design.attempts_per_size):
            acc = step.update(model, values, src)
            n[:, i] += 1
            x[:, i] += acc
    return [AcceptanceRecord(grids[j], n[j], x[j]) for j in range(step.n_slots)]


@dataclass
class SlotReport:
    slot: str
    records: list[AcceptanceRecord] = field(default_factory=list)
    fits: list[LogisticFit] = field(default_factory=list)
    recommendations: list[float] = field(default_factory=list)

    @property
    def tuned_step(self) -> float:
        return self.recommendations[-1]


@dataclass
class TuningResult:
    update_name: str
    slots: list[SlotReport]

    @property
    def step_sizes(self) -> np.ndarray:
        return np.array([s.tuned_step for s in self.slots])

    @property
    def fits(self) -> list[LogisticFit]:
        return [s.fits[-1] for s in self.slots]

    def write_tun(self, path) -> Path:
        return write_tun(path, [s.slot for s in self.slots], self.step_sizes)

    def write_report(self, path) -> Path:
        return write_tuning_report(path, [self])


def _fit_and_recommend(record: AcceptanceRecord, design: TrialDesign, prior: SlopePrior, free_slope: bool):
    fit = fit_full(record) if free_slope else fit_fixed_slope(record, prior=prior)
    return fit, recommend_step(fit, design.target_acceptance)


class UpdateTuner:
    """Supervises a tunable update through its trial phase, then steps aside.

    Each call to ``update`` makes one trial call of the wrapped update at the
    scheduled grid index (all slots share the index; ``attempts_per_size``
    calls per index).  When a cycle's grid is exhausted every slot is fitted
    and its grid re-centred on the recommendation; after the last cycle the
    recommendations are installed, counters reset, and later calls go
    straight to the wrapped update.  Placed in a Sampler's update collection,
    all tuners therefore run their trials side by side while the rest of the
    chain moves.
    """

    def __init__(
        self,
        update,
        initial_guesses=None,
        design: TrialDesign = TrialDesign(),
        prior: SlopePrior = SlopePrior(),
        tun_path=None,
        free_slope: bool = False,
    ):
        self.inner = update
        self.name = update.name
        self.design = design
        self.prior = prior
        self.tun_path = tun_path
        self.free_slope = free_slope
        guesses = update.step_sizes if initial_guesses is None else initial_guesses
        self.centers = np.broadcast_to(np.asarray(guesses, dtype=float), (update.n_slots,)).copy()
        self.reports = [SlotReport(name) for name in update.slot_names]
        self.result: TuningResult | None = None
        self._cycle = 0
        self._start_cycle()

    @property
    def slot_names(self):
        return self.inner.slot_names

    @property
    def step_sizes(self):
        return self.inner.step_sizes

    @property
    def n_slots(self) -> int:
        return self.inner.n_slots

    @property
    def tuned(self) -> bool:
        return self.result is not None

    @property
    def trial_length(self) -> int:
        d = self.design
        return d.num_step_sizes * d.attempts_per_size * d.cycles

    def _start_cycle(self) -> None:
        m = self.design.num_step_sizes
        self._grids = np.array([trial_grid(c, self.design) for c in self.centers])
        self._n = np.zeros((self.n_slots, m), dtype=np.int64)
        self._x = np.zeros((self.n_slots, m), dtype=np.int64)
        self._calls = 0

    def _finish_cycle(self) -> None:
        for j, rep in enumerate(self.reports):
            rec = AcceptanceRecord(self._grids[j], self._n[j], self._x[j])
            fit, s_hat = _fit_and_recommend(rec, self.design, self.prior, self.free_slope)
            rep.records.append(rec)
            rep.fits.append(fit)
            rep.recommendations.append(s_hat)
            self.centers[j] = s_hat
        self._cycle += 1
        if self._cycle < self.design.cycles:
            self._start_cycle()
            return
        self.inner.set_step_sizes(self.centers)
        self.inner.reset_counts()
        self.result = TuningResult(self.name, self.reports)
        if self.tun_path is not None:
            self.result.write_tun(self.tun_path)

    def update(self, model, values, src):
        if self.result is not None:
            return self.inner.update(model, values, src)
        i, r = divmod(self._calls, self.design.attempts_per_size)
        if r == 0:
            self.inner.set_step_sizes(self._grids[:, i])
        acc = self.inner.update(model, values, src)
        self._n[:, i] += 1
        self._x[:, i] += acc
        self._calls += 1
        if self._calls == self.design.num_step_sizes * self.design.attempts_per_size:
            self._finish_cycle()
        return acc


def tune_update(
    step,
    model,
    values,
    design: TrialDesign = TrialDesign(),
    prior: SlopePrior = SlopePrior(),
    src=None,
    initial_guesses=None,
    free_slope: bool = False,
) -> TuningResult:
    """Tune ``step`` on its own: trial stage, fit and install, ``design.cycles`` times.

    Only ``step`` moves while it is being tuned.  Each cycle re-centres the
    grid on the previous recommendation; slots are fitted independently.
    """
    tuner = UpdateTuner(step, initial_guesses, design, prior, free_slope=free_slope)
    while not tuner.tuned:
        tuner.update(model, values, src)
    return tuner.result


def write_tun(path, slot_names: Sequence[str], step_sizes) -> Path:
    """``slot<TAB>step`` per line, full precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for name, s in zip(slot_names, step_sizes, strict=True):
            fh.write(f"{name}\t{format(float(s), '.17g')}\n")
    return path


def read_tun(path) -> dict[str, float]:
    out = {}
    with open(path) as fh:
        for line in fh:
            if line.strip():
                name, value = line.rstrip("\n").split("\t")
                out[name] = float(value)
    return out


REPORT_COLUMNS = [
    "update", "slot", "cycle", "step_size", "attempts", "acceptances",
    "intercept", "slope", "fixed_slope", "converged", "recommended_step",
]


def write_tuning_report(path, results: Sequence[TuningResult]) -> Path:
    """Long-format CSV: one row per (slot, cycle, trial step size)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for res in results:
            for slot in res.slots:
                for c, (rec, fit, s_hat) in enumerate(zip(slot.records, slot.fits, slot.recommendations)):
                    for s, n, x in zip(rec.step_sizes, rec.attempts, rec.acceptances):
                        w.writerow([
                            res.update_name, slot.slot, c + 1, format(s, ".17g"), int(n), int(x),
                            format(fit.intercept, ".17g"), format(fit.slope, ".17g"),
                            int(fit.fixed_slope), int(fit.converged), format(s_hat, ".17g"),
                        ])
    return path
