"""Reproduction harness: design-quality simulation and the two worked examples.

The design simulation assumes the logistic acceptance model is exact:
acceptances at each trial size are binomial draws from the true curve, the
intercept is re-estimated with the slope fixed, and a replication succeeds
when the true acceptance rate at the recommended step size falls inside the
success window.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit, log_expit
from scipy.stats import binom

from .model import RandomSource, StructureError, TargetModel, linear, positive
from .proposals import AddCommonPerturber
from .sampler import BlockUpdate, ChainTrace, ParameterUpdate, Sampler
from .tuner import (
    DEFAULT_TARGET,
    FIXED_SLOPE,
    P_CLAMP,
    SlopePrior,
    TrialDesign,
    TuningResult,
    UpdateTuner,
    write_tuning_report,
)

SUCCESS_WINDOW = (0.25, 0.45)
GUESS_EXPONENTS = tuple(range(-7, 8))
NUM_SIZES = (3, 5, 7, 9, 11, 13, 15)
ATTEMPTS = (10, 20, 30, 40, 50)


# ---------------------------------------------------------------------------
# design-quality simulation


@dataclass(frozen=True)
class SimulationScenario:
    guess_exponent: int = 0
    num_sizes: int = 13
    attempts: int = 50
    replications: int = 100
    true_intercept: float = -5.7
    true_slope: float = -1.12
    fit_slope: float = FIXED_SLOPE
    base_step: float = 0.01
    target: float = DEFAULT_TARGET
    window: tuple[float, float] = SUCCESS_WINDOW
    prior: SlopePrior = SlopePrior()

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be positive")
        if not 0 < self.window[0] < self.window[1] < 1:
            raise ValueError("success window must satisfy 0 < low < high < 1")
        if self.num_sizes < 3 or self.num_sizes % 2 == 0:
            raise ValueError("num_sizes must be odd and at least 3")

    @property
    def initial_guess(self) -> float:
        return self.base_step * 2.0**self.guess_exponent

    def grid(self) -> np.ndarray:
        half = (self.num_sizes - 1) // 2
        return self.initial_guess * 2.0 ** np.arange(-half, half + 1, dtype=float)

    def true_rate(self, s):
        return expit(self.true_intercept + self.true_slope * np.log(s))

    def truth_grid(self) -> tuple[np.ndarray, np.ndarray]:
        s = self.grid()
        return s, self.true_rate(s)


def fit_intercepts(s, n, x, slope: float = FIXED_SLOPE, prior: SlopePrior = SlopePrior(),
                   max_iter: int = 100, tol: float = 1e-10, max_halvings: int = 30) -> np.ndarray:
    """Row-wise version of ``tuner.fit_fixed_slope`` for a (replications, sizes) matrix."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = np.broadcast_to(np.asarray(n, dtype=float), x.shape)
    ls = np.log(np.asarray(s, dtype=float))
    prec = 1.0 / prior.sd**2

    a = np.full(x.shape[0], prior.mean)
    cur = _pll_rows(a, x, n, ls, slope, prior)
    active = np.ones(a.size, dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        p = expit(a[:, None] + slope * ls)
        pc = np.clip(p, P_CLAMP, 1.0 - P_CLAMP)
        g = np.sum(x - n * p, axis=1) - (a - prior.mean) * prec
        h = np.sum(n * pc * (1.0 - pc), axis=1) + prec
        step = np.where(active, g / h, 0.0)
        new = _pll_rows(a + step, x, n, ls, slope, prior)
        for _ in range(max_halvings):
            bad = active & (new < cur) & (np.abs(step) > tol)
            if not bad.any():
                break
            step[bad] *= 0.5
            new[bad] = _pll_rows(a[bad] + step[bad], x[bad], n[bad], ls, slope, prior)
        a = a + step
        cur = np.where(active, new, cur)
        active &= np.abs(step) >= tol
    return a


def _pll_rows(a, x, n, ls, slope, prior):
    eta = a[:, None] + slope * ls
    ll = np.sum(x * log_expit(eta) + (n - x) * log_expit(-eta), axis=1)
    return ll - 0.5 * ((a - prior.mean) / prior.sd) ** 2


def _recommended_rates(scenario: SimulationScenario, a_hat: np.ndarray) -> np.ndarray:
    t = scenario.target
    log_s = (math.log(t) - math.log1p(-t) - a_hat) / scenario.fit_slope
    return expit(scenario.true_intercept + scenario.true_slope * log_s)


def _successes(scenario: SimulationScenario, x: np.ndarray) -> np.ndarray:
    s = scenario.grid()
    a_hat = fit_intercepts(s, scenario.attempts, x, scenario.fit_slope, scenario.prior)
    q = _recommended_rates(scenario, a_hat)
    lo, hi = scenario.window
    return (q >= lo) & (q <= hi)


def simulate_acceptances(scenario: SimulationScenario, src: RandomSource) -> np.ndarray:
    _, p = scenario.truth_grid()
    return src.generator.binomial(scenario.attempts, p, size=(scenario.replications, p.size))


def simulate_tuning_design(scenario: SimulationScenario, src: RandomSource) -> int:
    """Number of replications whose recommended step lands in the success window."""
    x = simulate_acceptances(scenario, src)
    return int(np.sum(_successes(scenario, x)))


def exact_success_probability(scenario: SimulationScenario, max_outcomes: int = 500_000) -> float:
    """Success probability by enumerating every acceptance pattern (small designs only)."""
    m, n = scenario.num_sizes, scenario.attempts
    if (n + 1) ** m > max_outcomes:
        raise ValueError(f"{(n + 1) ** m} outcomes exceed the enumeration limit")
    _, p = scenario.truth_grid()
    pmf = [binom.pmf(np.arange(n + 1), n, pi) for pi in p]
    x = np.array(list(itertools.product(range(n + 1), repeat=m)), dtype=float)
    w = np.ones(x.shape[0])
    for i in range(m):
        w *= pmf[i][x[:, i].astype(int)]
    return float(np.sum(w[_successes(scenario, x)]))


@dataclass
class DesignRow:
    guess_exponent: int
    num_sizes: int
    attempts: int
    successes: int
    replications: int

    @property
    def rate(self) -> float:
        return self.successes / self.replications

    @property
    def total_trials(self) -> int:
        return self.num_sizes * self.attempts


DESIGN_COLUMNS = ["k", "num_sizes", "attempts", "successes", "replications"]


def design_table(guess_exponents=GUESS_EXPONENTS, num_sizes=NUM_SIZES, attempts=ATTEMPTS,
                 replications: int = 100, src: RandomSource | None = None, **scenario_kw) -> list[DesignRow]:
    """Full-factorial sweep; each cell draws from its own (k, m, n) substream."""
    src = src if src is not None else RandomSource(0)
    rows = []
    for k in guess_exponents:
        for m in num_sizes:
            for n in attempts:
                sc = SimulationScenario(k, m, n, replications, **scenario_kw)
                succ = simulate_tuning_design(sc, src.substream(f"design:{k}:{m}:{n}"))
                rows.append(DesignRow(k, m, n, succ, replications))
    return rows


def write_design_csv(path, rows: Sequence[DesignRow]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DESIGN_COLUMNS)
        for r in rows:
            w.writerow([r.guess_exponent, r.num_sizes, r.attempts, r.successes, r.replications])
    return path


def read_design_csv(path) -> list[DesignRow]:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        return [DesignRow(int(r["k"]), int(r["num_sizes"]), int(r["attempts"]),
                          int(r["successes"]), int(r["replications"])) for r in rd]


def min_total_trials(rows: Sequence[DesignRow], k: int, level: float = 0.95,
                     max_sizes: int | None = None) -> int | None:
    """Smallest sizes*attempts reaching ``level`` success for guess exponent k, or None."""
    ok = [r.total_trials for r in rows
          if r.guess_exponent == k and r.rate >= level and (max_sizes is None or r.num_sizes <= max_sizes)]
    return min(ok) if ok else None


# ---------------------------------------------------------------------------
# worked examples

DATA_SEEDS = {"normal": 20110419, "anova": 20110420}


def _gamma_logpdf(x: float, shape: float, scale: float) -> float:
    if not x > 0:
        return -math.inf
    return (shape - 1.0) * math.log(x) - x / scale - math.lgamma(shape) - shape * math.log(scale)


@dataclass
class NormalModelSpec:
    """y_i ~ N(mu, sigma^2); mu ~ N(mu_mean, mu_sd^2); sigma ~ Gamma(shape, scale).

    ``known_sigma`` pins sigma, leaving a conjugate model for mu alone.
    """

    y: np.ndarray
    mu_mean: float = 0.0
    mu_sd: float = 100.0
    sigma_shape: float = 2.0
    sigma_scale: float = 2.0
    known_sigma: float | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.y.size == 0:
            raise StructureError("normal example needs data")
        if not (self.mu_sd > 0 and self.sigma_shape > 0 and self.sigma_scale > 0):
            raise ValueError("prior scales must be positive")

    def model(self) -> TargetModel:
        y, n = self.y, self.y.size
        sy, syy = float(y.sum()), float(y @ y)
        m0, v0 = self.mu_mean, self.mu_sd**2
        a, b = self.sigma_shape, self.sigma_scale

        def loglik(mu, sigma):
            # far-out trial proposals can underflow sigma^2; the result is then -inf
            with np.errstate(over="ignore", divide="ignore"):
                ss = syy - 2.0 * mu * sy + n * mu * mu
                return -n * math.log(sigma) - 0.5 * ss / (sigma * sigma) - 0.5 * (mu - m0) ** 2 / v0

        if self.known_sigma is not None:
            sig = self.known_sigma
            return TargetModel(lambda v: loglik(v["mu"][0], sig), {"mu": 1})

        def fn(v):
            sigma = v["sigma"][0]
            if not sigma > 0:
                return -math.inf
            return loglik(v["mu"][0], sigma) + _gamma_logpdf(sigma, a, b)

        return TargetModel(fn, {"mu": 1, "sigma": 1})

    def conjugate_mu(self) -> tuple[float, float]:
        """Posterior mean and sd of mu when sigma is known."""
        if self.known_sigma is None:
            raise ValueError("conjugate posterior needs known_sigma")
        prec = 1.0 / self.mu_sd**2 + self.y.size / self.known_sigma**2
        mean = (self.mu_mean / self.mu_sd**2 + self.y.sum() / self.known_sigma**2) / prec
        return mean, 1.0 / math.sqrt(prec)


@dataclass
class AnovaModelSpec:
    """y_ij ~ N(mu_i, sigma^2), mu_i ~ N(theta, delta^2), flat theta, Gamma sigma and delta."""

    groups: list[np.ndarray]
    sigma_shape: float = 2.0
    sigma_scale: float = 1.0
    delta_shape: float = 10.0
    delta_scale: float = 0.01

    def __post_init__(self):
        self.groups = [np.asarray(g, dtype=float).reshape(-1) for g in self.groups]
        if len(self.groups) < 2:
            raise StructureError("ANOVA example needs at least two groups")
        if any(g.size == 0 for g in self.groups):
            raise StructureError("every group must be non-empty")

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    def model(self) -> TargetModel:
        n = np.array([g.size for g in self.groups], dtype=float)
        sums = np.array([g.sum() for g in self.groups])
        sumsq = np.array([g @ g for g in self.groups])
        ntot = float(n.sum())
        I = self.n_groups
        sa, sb, da, db = self.sigma_shape, self.sigma_scale, self.delta_shape, self.delta_scale

        def fn(v):
            mu, theta = v["mu"], v["theta"][0]
            sigma, delta = v["sigma"][0], v["delta"][0]
            if not (sigma > 0 and delta > 0):
                return -math.inf
            ss = float(np.sum(sumsq - 2.0 * mu * sums + n * mu * mu))
            dev = mu - theta
            return (
                -ntot * math.log(sigma) - 0.5 * ss / (sigma * sigma)
                - I * math.log(delta) - 0.5 * float(dev @ dev) / (delta * delta)
                + _gamma_logpdf(sigma, sa, sb) + _gamma_logpdf(delta, da, db)
            )

        return TargetModel(fn, {"mu": I, "theta": 1, "sigma": 1, "delta": 1})


def generate_normal_data(seed: int = DATA_SEEDS["normal"], n: int = 50, mu: float = 10.0, sigma: float = 2.0) -> np.ndarray:
    return np.random.default_rng(seed).normal(mu, sigma, n)


def generate_anova_data(seed: int = DATA_SEEDS["anova"], n_groups: int = 3, per_group: int = 5,
                        theta: float = 5.0, sigma: float = 1.0, delta: float = 0.1) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    mu = rng.normal(theta, delta, n_groups)
    return [rng.normal(m, sigma, per_group) for m in mu]


def _read_data(name: str) -> np.ndarray:
    text = resources.files("rwmtune").joinpath("data", name).read_text()
    rows = list(csv.reader(text.splitlines()))
    return rows


def load_normal_data() -> np.ndarray:
    rows = _read_data("normal_example.csv")
    return np.array([float(r[0]) for r in rows[1:]])


def load_anova_data() -> list[np.ndarray]:
    rows = _read_data("anova_example.csv")
    groups: dict[int, list[float]] = {}
    for g, y in rows[1:]:
        groups.setdefault(int(g), []).append(float(y))
    return [np.array(groups[k]) for k in sorted(groups)]


def write_example_data(data_dir) -> list[Path]:
    """Regenerate the shipped example data files from their documented seeds."""
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    p1 = data_dir / "normal_example.csv"
    with open(p1, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y"])
        for y in generate_normal_data():
            w.writerow([format(y, ".17g")])
    p2 = data_dir / "anova_example.csv"
    with open(p2, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "y"])
        for i, g in enumerate(generate_anova_data()):
            for y in g:
                w.writerow([i, format(y, ".17g")])
    return [p1, p2]


@dataclass
class ExampleResult:
    name: str
    sampler: Sampler
    trace: ChainTrace
    tuners: list
    extra_updates: list = field(default_factory=list)

    @property
    def tuning(self) -> list[TuningResult]:
        return [t.result for t in self.tuners]

    @property
    def tuned_steps(self) -> dict[str, float]:
        return {slot: float(s) for t in self.tuners for slot, s in zip(t.slot_names, t.step_sizes)}

    @property
    def acceptance_rates(self) -> dict[str, float]:
        """Production-phase acceptance rate of every tuned slot."""
        out = {}
        for t in self.tuners:
            for slot, r in zip(t.slot_names, t.inner.acceptance_rates()):
                out[slot] = float(r)
        return out

    def in_window(self, window=SUCCESS_WINDOW) -> bool:
        return all(window[0] <= r <= window[1] for r in self.acceptance_rates.values())

    def summary(self) -> str:
        lines = [f"example: {self.name}", f"iterations: {self.trace.iterations}", "",
                 "slot\ttuned_step\tacceptance_rate"]
        steps, rates = self.tuned_steps, self.acceptance_rates
        for slot in steps:
            lines.append(f"{slot}\t{steps[slot]:.6g}\t{rates[slot]:.4f}")
        lines += ["", "parameter\tposterior_mean\tposterior_sd"]
        for p in self.sampler.params:
            arr = self.trace.array(p.name)
            for j, cname in enumerate(p.component_names):
                lines.append(f"{cname}\t{arr[:, j].mean():.6g}\t{arr[:, j].std(ddof=1):.6g}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = [t.result.write_tun(out_dir / f"{t.name}.tun") for t in self.tuners]
        paths.append(write_tuning_report(out_dir / "tuning_report.csv", self.tuning))
        paths += self.trace.write_csv(out_dir / "traces")
        if self.name == "anova":
            paths.append(write_anova_figure_trace(out_dir / "figure_trace.csv", self.trace))
        summary = out_dir / "summary.txt"
        summary.write_text(self.summary())
        paths.append(summary)
        return paths


def _tune_then_run(sampler: Sampler, tuners, iterations: int) -> ChainTrace:
    # the trial phase is burn-in: its iterations are not traced
    for _ in range(max(t.trial_length for t in tuners)):
        sampler.step()
    return sampler.run(iterations)


def run_normal_example(spec: NormalModelSpec | None = None, design: TrialDesign = TrialDesign(),
                       iterations: int = 10_000, src: RandomSource | None = None,
                       initial_guesses: dict[str, float] | None = None,
                       prior: SlopePrior = SlopePrior()) -> ExampleResult:
    """Tune a linear move on mu and a log-scale move on sigma, then run the chain."""
    spec = spec if spec is not None else NormalModelSpec(load_normal_data())
    src = src if src is not None else RandomSource(1)
    guesses = {"mu": 0.5, "sigma": 0.1, **(initial_guesses or {})}
    ybar = float(spec.y.mean())
    mu = linear("mu", [ybar], guesses["mu"])
    params = [mu]
    tuners = [UpdateTuner(ParameterUpdate(mu), design=design, prior=prior)]
    if spec.known_sigma is None:
        sigma = positive("sigma", [max(float(spec.y.std()), 1e-3)], guesses["sigma"])
        params.append(sigma)
        tuners.append(UpdateTuner(ParameterUpdate(sigma), design=design, prior=prior))
    sampler = Sampler(spec.model(), params, tuners, src)
    trace = _tune_then_run(sampler, tuners, iterations)
    return ExampleResult("normal", sampler, trace, tuners)


def _anova_state(spec: AnovaModelSpec, guesses: dict[str, float]):
    grand = float(np.concatenate(spec.groups).mean())
    pooled = math.sqrt(sum(float(((g - g.mean()) ** 2).sum()) for g in spec.groups)
                       / max(sum(g.size - 1 for g in spec.groups), 1))
    mu = linear("mu", np.full(spec.n_groups, grand), guesses["mu"])
    theta = linear("theta", [grand], guesses["theta"])
    sigma = positive("sigma", [max(pooled, 1e-3)], guesses["sigma"])
    delta = positive("delta", [spec.delta_shape * spec.delta_scale], guesses["delta"])
    return mu, theta, sigma, delta


ANOVA_GUESSES = {"mu": 0.1, "theta": 0.1, "sigma": 0.1, "delta": 0.1, "mtu": 0.1}


def run_anova_example(spec: AnovaModelSpec | None = None, design: TrialDesign = TrialDesign(),
                      iterations: int = 10_000, src: RandomSource | None = None,
                      block: bool = True, initial_guesses: dict[str, float] | None = None,
                      prior: SlopePrior = SlopePrior()) -> ExampleResult:
    """Tune variable-at-a-time moves (and the add-common block move) and run the chain.

    The block move shifts every mu_i and theta by the same N(0, s^2) amount.
    """
    spec = spec if spec is not None else AnovaModelSpec(load_anova_data())
    src = src if src is not None else RandomSource(2)
    guesses = {**ANOVA_GUESSES, **(initial_guesses or {})}
    mu, theta, sigma, delta = _anova_state(spec, guesses)
    tuners = [UpdateTuner(ParameterUpdate(p), design=design, prior=prior) for p in (mu, theta, sigma, delta)]
    if block:
        pert = AddCommonPerturber([(mu, range(len(mu))), (theta, [0])], guesses["mtu"])
        tuners.append(UpdateTuner(BlockUpdate(pert, "mtu"), design=design, prior=prior))
    sampler = Sampler(spec.model(), [mu, theta, sigma, delta], tuners, src)
    trace = _tune_then_run(sampler, tuners, iterations)
    return ExampleResult("anova", sampler, trace, tuners)


def lag1_autocorrelation(x) -> float:
    x = np.asarray(x, dtype=float)
    d = x - x.mean()
    return float(d[1:] @ d[:-1] / (d @ d))


def anova_figure_columns(trace: ChainTrace) -> dict[str, np.ndarray]:
    """mu_1, theta, log sigma and log delta per iteration."""
    return {
        "mu1": trace.array("mu")[:, 0],
        "theta": trace.array("theta")[:, 0],
        "log_sigma": np.log(trace.array("sigma")[:, 0]),
        "log_delta": np.log(trace.array("delta")[:, 0]),
    }


def write_anova_figure_trace(path, trace: ChainTrace) -> Path:
    cols = anova_figure_columns(trace)
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(cols))
        for row in zip(*cols.values()):
            w.writerow([format(float(v), ".17g") for v in row])
    return path
