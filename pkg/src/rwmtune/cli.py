"""Command-line entry point.

    rwmtune validate
    rwmtune tune --config run.cfg
    rwmtune run-example normal --out-dir out/normal
    rwmtune simulate --guess-exponent 4 --sizes 9

Exit codes: 0 success, 1 failed check, 2 unreadable configuration,
3 model error.  Diagnostics go to stderr; results go to files.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analytic, experiments
from .model import RandomSource, StructureError, TargetModel, linear, positive, probability
from .sampler import InvalidStateError, ParameterUpdate, Sampler, SimplexUpdate
from .tuner import DEFAULT_TARGET, TrialDesign, UpdateTuner, write_tuning_report

DEFAULT_SEED = 12345
REFERENCE_SLOPE = -1.12
REFERENCE_INTERCEPT = 0.76

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_MODEL = 0, 1, 2, 3


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    """Flat ``key = value`` run configuration; ``#`` starts a comment."""

    command: str = "run-example"
    model: str = "normal"
    data: str = ""
    seed: int = DEFAULT_SEED
    iterations: int = 10_000
    sizes: int = 13
    attempts: int = 50
    cycles: int = 1
    target: float = DEFAULT_TARGET
    out_dir: str = "out"
    guess_exponent: str = ""
    replications: int = 100

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kw = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            conv = {"int": int, "float": float}.get(types[key], str)
            try:
                kw[key] = conv(value)
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: {exc}") from None
        return cls(**kw)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {format(v, '.17g') if isinstance(v, float) else v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from None
        return cls.from_text(text)

    def design(self) -> TrialDesign:
        return TrialDesign(self.sizes, self.attempts, self.cycles, self.target)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# validate

VALIDATE_STEPS = (0.5, 1.0, 2.0, 4.0)


def run_validation(reference_slope: float = REFERENCE_SLOPE, attempts: int = 100_000, seed: int = DEFAULT_SEED):
    """Analytic cross-checks plus an empirical acceptance table.

    Returns (list of (check name, passed, detail), table rows).
    """
    checks = []
    s_grid = np.logspace(-2, 2, 50)
    err = max(abs(analytic.integral_acceptance(s) - analytic.arctan_acceptance(s)) for s in s_grid)
    checks.append(("arctan-vs-integral", err < 1e-8, f"max |diff| = {err:.3g}"))

    ps = np.linspace(0.01, 0.99, 99)
    inv = max(abs(analytic.arctan_acceptance(analytic.closed_form_step(1.0, p)) - p) for p in ps)
    checks.append(("inverse", inv < 1e-12, f"max |diff| = {inv:.3g}"))

    icpt, slope = analytic.logit_linearization(analytic.LINEARIZATION_GRID)
    ok = abs(slope - reference_slope) <= 0.05 and abs(icpt - REFERENCE_INTERCEPT) <= 0.10
    checks.append(("linearization", ok, f"intercept {icpt:.4f}, slope {slope:.4f} (reference {reference_slope})"))

    n, x = analytic.empirical_acceptance("normal", VALIDATE_STEPS, attempts, RandomSource(seed))
    rows = []
    worst = 0.0
    for s, ni, xi in zip(VALIDATE_STEPS, n, x):
        p_exact = analytic.arctan_acceptance(s)
        worst = max(worst, abs(xi / ni - p_exact))
        rows.append((s, p_exact, xi / ni))
    checks.append(("sampler-acceptance", worst <= 0.01, f"max |empirical - analytic| = {worst:.4f}"))
    return checks, rows


def cmd_validate(args) -> int:
    checks, rows = run_validation(args.reference_slope, seed=args.seed)
    print("s\tanalytic_p\tempirical_p")
    for s, pa, pe in rows:
        print(f"{s:g}\t{pa:.6f}\t{pe:.6f}")
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "validate.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["s", "analytic_p", "empirical_p"])
            for r in rows:
                w.writerow([format(v, ".17g") for v in r])
    failed = [name for name, ok, _ in checks if not ok]
    for name, ok, detail in checks:
        _log(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    if failed:
        _log("failed checks: " + ", ".join(failed))
        return EXIT_CHECK
    return EXIT_OK


# ---------------------------------------------------------------------------
# tune


def _simple_target(name: str):
    """Single-parameter targets with a known answer, for trying the tuner."""
    if name == "gaussian":
        p = linear("x", [0.0], 1.0)
        return TargetModel(lambda v: -0.5 * v["x"][0] ** 2, {"x": 1}), [p], [ParameterUpdate(p)]
    if name == "exponential":
        p = positive("x", [1.0], 1.0)
        return TargetModel(lambda v: -v["x"][0], {"x": 1}), [p], [ParameterUpdate(p)]
    if name == "beta":
        p = probability("x", [0.5], 1.0)
        return (TargetModel(lambda v: math.log(v["x"][0]) + math.log1p(-v["x"][0]), {"x": 1}),
                [p], [ParameterUpdate(p)])
    if name == "dirichlet":
        p = probability("x", [1 / 3, 1 / 3, 1 / 3], 1.0)
        return TargetModel(lambda v: 0.0, {"x": 3}), [p], [SimplexUpdate(p)]
    raise ConfigError(f"unknown model {name!r}")


def _example_spec(cfg: RunConfig):
    if cfg.model == "normal":
        y = experiments.load_normal_data() if not cfg.data else _read_column(cfg.data)
        return experiments.NormalModelSpec(y)
    if cfg.model == "anova":
        groups = experiments.load_anova_data() if not cfg.data else _read_groups(cfg.data)
        return experiments.AnovaModelSpec(groups)
    raise ConfigError(f"unknown example {cfg.model!r}")


def _read_column(path) -> np.ndarray:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        return np.array([float(r[0]) for r in rows[1:]])
    except (OSError, ValueError, IndexError) as exc:
        raise ConfigError(f"cannot read data {path}: {exc}") from None


def _read_groups(path) -> list[np.ndarray]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        groups: dict[int, list[float]] = {}
        for g, y in rows[1:]:
            groups.setdefault(int(g), []).append(float(y))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read data {path}: {exc}") from None
    return [np.array(groups[k]) for k in sorted(groups)]


def cmd_tune(cfg: RunConfig) -> int:
    """Trial phase only: every update tuned side by side, step sizes written out."""
    design = cfg.design()
    src = RandomSource(cfg.seed)
    if cfg.model in ("normal", "anova"):
        spec = _example_spec(cfg)
        # zero production iterations: run_*_example stops right after tuning
        runner = experiments.run_normal_example if cfg.model == "normal" else experiments.run_anova_example
        res = runner(spec, design, iterations=0, src=src)
        tuners = res.tuners
    else:
        model, params, updates = _simple_target(cfg.model)
        tuners = [UpdateTuner(u, design=design) for u in updates]
        sampler = Sampler(model, params, tuners, src)
        for _ in range(max(t.trial_length for t in tuners)):
            sampler.step()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for t in tuners:
        t.result.write_tun(out / f"{t.name}.tun")
        for slot, s in zip(t.slot_names, t.step_sizes):
            _log(f"{slot}: tuned step {s:.6g}")
    write_tuning_report(out / "tuning_report.csv", [t.result for t in tuners])
    return EXIT_OK


def cmd_run_example(cfg: RunConfig) -> int:
    spec = _example_spec(cfg)
    src = RandomSource(cfg.seed)
    runner = experiments.run_normal_example if cfg.model == "normal" else experiments.run_anova_example
    res = runner(spec, cfg.design(), cfg.iterations, src)
    res.write(cfg.out_dir)
    for slot, r in res.acceptance_rates.items():
        _log(f"{slot}: step {res.tuned_steps[slot]:.6g}, acceptance {r:.4f}")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, sizes=None, attempts=None) -> int:
    ks = experiments.GUESS_EXPONENTS if cfg.guess_exponent == "" else [int(k) for k in str(cfg.guess_exponent).split(",")]
    rows = experiments.design_table(ks, sizes or experiments.NUM_SIZES, attempts or experiments.ATTEMPTS,
                                    cfg.replications, RandomSource(cfg.seed))
    path = experiments.write_design_csv(Path(cfg.out_dir) / "simulate.csv", rows)
    _log(f"wrote {len(rows)} scenario rows to {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rwmtune", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, design=True):
        p.add_argument("--config", help="key = value run configuration file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir")
        if design:
            p.add_argument("--iterations", type=int)
            p.add_argument("--sizes", type=int, help="number of trial step sizes (odd)")
            p.add_argument("--attempts", type=int, help="attempts per trial step size")
            p.add_argument("--cycles", type=int)
            p.add_argument("--target", type=float, help="target acceptance rate")

    p = sub.add_parser("validate", help="analytic and sampler cross-checks")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out-dir")
    p.add_argument("--reference-slope", type=float, default=REFERENCE_SLOPE, help=argparse.SUPPRESS)

    p = sub.add_parser("tune", help="run the trial phase and write .tun files")
    common(p)
    p.add_argument("--model", help="normal, anova, gaussian, exponential, beta or dirichlet")

    p = sub.add_parser("run-example", help="tune and run a worked example")
    p.add_argument("example", choices=["normal", "anova"])
    common(p)

    p = sub.add_parser("simulate", help="design-quality simulation sweep")
    common(p, design=False)
    p.add_argument("--guess-exponent", help="k or comma list; initial guess 0.01 * 2^k")
    p.add_argument("--sizes", help="comma list of numbers of trial sizes")
    p.add_argument("--attempts", help="comma list of attempts per size")
    p.add_argument("--replications", type=int)
    return parser


_FLAG_KEYS = ("seed", "out_dir", "iterations", "sizes", "attempts", "cycles", "target",
              "model", "guess_exponent", "replications")


def config_from_args(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    cfg.command = args.command
    if getattr(args, "example", None):
        cfg.model = args.example
    for key in _FLAG_KEYS:
        v = getattr(args, key, None)
        if v is None or (args.command == "simulate" and key in ("sizes", "attempts")):
            continue
        setattr(cfg, key, type(getattr(cfg, key))(v))
    return cfg


def _int_list(text):
    return [int(v) for v in text.split(",")] if text else None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            return cmd_validate(args)
        cfg = config_from_args(args)
        if args.command == "tune":
            return cmd_tune(cfg)
        if args.command == "run-example":
            return cmd_run_example(cfg)
        return cmd_simulate(cfg, _int_list(args.sizes), _int_list(args.attempts))
    except ConfigError as exc:
        _log(f"configuration error: {exc}")
        return EXIT_CONFIG
    except (StructureError, InvalidStateError, ValueError, FloatingPointError) as exc:
        _log(f"model error: {exc}")
        return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
