"""Metropolis-Hastings accept/reject, tunable updates and the chain loop."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .model import ParameterState, RandomSource, ScaleType, TargetModel
from .proposals import AddCommonPerturber, propose, sum_to_one_logit_perturb


class InvalidStateError(RuntimeError):
    """The chain sits at a point of zero target density."""


def accept_reject(log_f_current: float, log_f_candidate: float, log_hastings_ratio: float, src) -> bool:
    if log_f_current == -math.inf:
        raise InvalidStateError("current state has zero density")
    if log_f_candidate == -math.inf:
        return False
    log_r = log_f_candidate - log_f_current + log_hastings_ratio
    if log_r >= 0.0:
        return True
    return math.log(src.uniform()) < log_r


class TunableUpdate:
    """Base for updates with one acceptance counter per tunable step size.

    Subclasses implement ``_attempt_all`` which tries each slot exactly once
    and returns the boolean acceptance vector.
    """

    name: str
    slot_names: list[str]

    def __init__(self, n_slots: int):
        self.attempts = np.zeros(n_slots, dtype=np.int64)
        self.acceptances = np.zeros(n_slots, dtype=np.int64)

    @property
    def n_slots(self) -> int:
        return self.attempts.size

    @property
    def step_sizes(self) -> np.ndarray:
        raise NotImplementedError

    def set_step_sizes(self, sizes) -> None:
        sizes = np.broadcast_to(np.asarray(sizes, dtype=float), (self.n_slots,))
        if np.any(~(sizes > 0)):
            raise ValueError("step sizes must be positive")
        self.step_sizes[:] = sizes

    def set_step_size(self, slot: int, size: float) -> None:
        if not size > 0:
            raise ValueError("step sizes must be positive")
        self.step_sizes[slot] = size

    def reset_counts(self) -> None:
        self.attempts[:] = 0
        self.acceptances[:] = 0

    def acceptance_rates(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.acceptances / self.attempts

    def update(self, model: TargetModel, values: Mapping[str, np.ndarray], src) -> np.ndarray:
        accepted = self._attempt_all(model, values, src)
        self.attempts += 1
        self.acceptances += accepted
        return accepted

    def _attempt_all(self, model, values, src) -> np.ndarray:
        raise NotImplementedError

    def write_tun(self, path) -> Path:
        from .tuner import write_tun

        return write_tun(path, self.slot_names, self.step_sizes)


def _current(model, values) -> float:
    lf = model.fn(values)
    if lf == -math.inf:
        raise InvalidStateError("current state has zero density")
    return lf


class ParameterUpdate(TunableUpdate):
    """Variable-at-a-time sweep over one ParameterState, ascending component order.

    Each component is moved with the kernel matching its scale type.
    """

    def __init__(self, param: ParameterState, name: str | None = None):
        super().__init__(len(param))
        self.param = param
        self.name = name or param.name
        self.slot_names = list(param.component_names)

    @property
    def step_sizes(self) -> np.ndarray:
        return self.param.step_sizes

    def _move(self, k: int, src):
        p = self.param
        return propose(p.scales[k], float(p.values[k]), float(p.step_sizes[k]), src)

    def _attempt_all(self, model, values, src) -> np.ndarray:
        vals = self.param.values
        accepted = np.zeros(vals.size, dtype=bool)
        lf = _current(model, values)
        for k in range(vals.size):
            out = self._move(k, src)
            scalar = np.ndim(out.candidate) == 0
            old = vals[k] if scalar else vals.copy()
            if scalar:
                vals[k] = out.candidate
            else:
                vals[:] = out.candidate
            lf_new = model.fn(values)
            if accept_reject(lf, lf_new, out.log_hastings_ratio, src):
                lf = lf_new
                accepted[k] = True
            elif scalar:
                vals[k] = old
            else:
                vals[:] = old
        return accepted


class SimplexUpdate(ParameterUpdate):
    """Sweep of sum-to-one moves, one per coordinate, on a probability vector."""

    def __init__(self, param: ParameterState, name: str | None = None):
        if any(sc is not ScaleType.LOGIT for sc in param.scales):
            raise ValueError("simplex components must be on the logit scale")
        if abs(float(np.sum(param.values)) - 1.0) > 1e-12:
            raise ValueError("simplex values must sum to one")
        super().__init__(param, name)

    def _move(self, k: int, src):
        p = self.param
        return sum_to_one_logit_perturb(p.values, k, float(p.step_sizes[k]), src)


class BlockUpdate(TunableUpdate):
    """Metropolis move of several parameters at once through a perturber.

    Each perturber group is attempted once per call, in ascending group order.
    """

    def __init__(self, perturber: AddCommonPerturber, name: str, slot_names: Sequence[str] | None = None):
        super().__init__(perturber.n_groups)
        self.perturber = perturber
        self.name = name
        if slot_names is None:
            slot_names = [name] if perturber.n_groups == 1 else [f"{name}[{j}]" for j in range(perturber.n_groups)]
        self.slot_names = list(slot_names)

    @property
    def step_sizes(self) -> np.ndarray:
        return self.perturber.step_sizes

    def _attempt_all(self, model, values, src) -> np.ndarray:
        accepted = np.zeros(self.n_slots, dtype=bool)
        lf = _current(model, values)
        for j in range(self.n_slots):
            out = self.perturber.perturb(j, src)
            saved = {}
            for pname, new in out.candidate.items():
                saved[pname] = values[pname].copy()
                values[pname][:] = new
            lf_new = model.fn(values)
            if accept_reject(lf, lf_new, out.log_hastings_ratio, src):
                lf = lf_new
                accepted[j] = True
            else:
                for pname, old in saved.items():
                    values[pname][:] = old
        return accepted


def run_update(step: TunableUpdate, model: TargetModel, params: Sequence[ParameterState], src) -> np.ndarray:
    """Attempt every slot of ``step`` once; returns which attempts were accepted."""
    values = {p.name: p.values for p in params}
    model.log_density(values)
    return step.update(model, values, src)


class ChainTrace:
    """Per-iteration snapshots of every ParameterState in the chain."""

    def __init__(self, params: Sequence[ParameterState]):
        self.params = list(params)
        self.rows: dict[str, list[np.ndarray]] = {p.name: [] for p in self.params}

    def record(self) -> None:
        for p in self.params:
            self.rows[p.name].append(p.values.copy())

    @property
    def iterations(self) -> int:
        return len(next(iter(self.rows.values()))) if self.rows else 0

    def __len__(self) -> int:
        return self.iterations

    def array(self, name: str) -> np.ndarray:
        n = len(next(p for p in self.params if p.name == name))
        rows = self.rows[name]
        return np.array(rows) if rows else np.empty((0, n))

    def write_csv(self, out_dir) -> list[Path]:
        """One CSV per parameter: header of component names, one row per iteration."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for p in self.params:
            path = out_dir / f"{p.name}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(p.component_names)
                for row in self.rows[p.name]:
                    w.writerow([format(float(v), ".17g") for v in row])
            paths.append(path)
        return paths


def read_trace_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [[float(v) for v in row] for row in r]
    return header, np.array(rows).reshape(-1, len(header))


class Sampler:
    """Holds the chain state, the ordered update collection and their random streams.

    One call to ``step`` is one iteration: every update in order, then one
    trace row.  Each update draws from its own substream keyed by its name.
    """

    def __init__(self, model: TargetModel, params: Sequence[ParameterState], updates: Sequence, src: RandomSource):
        self.model = model
        self.params = list(params)
        self.updates = list(updates)
        names = [u.name for u in self.updates]
        if len(set(names)) != len(names):
            raise ValueError(f"update names must be unique: {names}")
        self.values = {p.name: p.values for p in self.params}
        model.log_density(self.values)
        self.streams = {u.name: src.substream(u.name) for u in self.updates}

    def step(self) -> None:
        for u in self.updates:
            u.update(self.model, self.values, self.streams[u.name])

    def run(self, iterations: int, trace: ChainTrace | None = None) -> ChainTrace:
        if iterations < 0:
            raise ValueError("iterations must be non-negative")
        trace = trace if trace is not None else ChainTrace(self.params)
        for _ in range(iterations):
            self.step()
            trace.record()
        return trace


def run_chain(updates, model: TargetModel, params, iterations: int, src: RandomSource, trace=None) -> ChainTrace:
    return Sampler(model, params, updates, src).run(iterations, trace)
