"""Parameter containers, the target-density wrapper and the seeded random source."""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np


class StructureError(ValueError):
    """Raised when parameters, groups or records have an invalid shape."""


class ScaleType(enum.Enum):
    LINEAR = "linear"
    LOG = "log"
    LOGIT = "logit"


@dataclass
class ParameterState:
    """A named vector of scalar unknowns, each with its own scale and step size.

    The state is mutable: updates change ``values`` in place and the tuner
    rewrites ``step_sizes``.
    """

    name: str
    values: np.ndarray
    scales: list[ScaleType]
    step_sizes: np.ndarray
    component_names: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.values = np.array(self.values, dtype=float).reshape(-1)
        n = self.values.size
        if isinstance(self.scales, (ScaleType, str)):
            self.scales = [self.scales] * n
        self.scales = [ScaleType(s) for s in self.scales]
        self.step_sizes = np.array(
            np.broadcast_to(np.asarray(self.step_sizes, dtype=float), (n,)), dtype=float
        )
        if not self.component_names:
            if n == 1:
                self.component_names = [self.name]
            else:
                self.component_names = [f"{self.name}[{i}]" for i in range(n)]
        if n < 1:
            raise StructureError(f"{self.name}: at least one component required")
        if len(self.scales) != n or len(self.component_names) != n:
            raise StructureError(f"{self.name}: scales/names length mismatch")
        if np.any(~(self.step_sizes > 0)):
            raise StructureError(f"{self.name}: step sizes must be positive")
        self.check_support()

    def check_support(self) -> None:
        for v, sc, cname in zip(self.values, self.scales, self.component_names):
            if sc is ScaleType.LOG and not v > 0:
                raise StructureError(f"{cname}: log-scale component must be positive")
            if sc is ScaleType.LOGIT and not 0 < v < 1:
                raise StructureError(f"{cname}: logit-scale component must lie in (0, 1)")

    def __len__(self) -> int:
        return self.values.size

    def copy(self) -> "ParameterState":
        return ParameterState(
            self.name,
            self.values.copy(),
            list(self.scales),
            self.step_sizes.copy(),
            list(self.component_names),
        )


def linear(name: str, values, step_sizes, component_names=None) -> ParameterState:
    return ParameterState(name, values, ScaleType.LINEAR, step_sizes, component_names or [])


def positive(name: str, values, step_sizes, component_names=None) -> ParameterState:
    return ParameterState(name, values, ScaleType.LOG, step_sizes, component_names or [])


def probability(name: str, values, step_sizes, component_names=None) -> ParameterState:
    return ParameterState(name, values, ScaleType.LOGIT, step_sizes, component_names or [])


class TargetModel:
    """Log posterior density over a fixed set of named parameters.

    ``fn`` receives a mapping from parameter name to its current value array
    and returns a log density.  Points outside the support should return
    ``-inf``; NaN and ``+inf`` are treated as modelling errors.
    """

    def __init__(self, fn: Callable[[Mapping[str, np.ndarray]], float], sizes: Mapping[str, int]):
        self.fn = fn
        self.sizes = dict(sizes)

    def _values(self, config) -> dict[str, np.ndarray]:
        if isinstance(config, Mapping):
            items = config.items()
        else:
            items = ((p.name, p) for p in config)
        out = {}
        for name, v in items:
            arr = v.values if isinstance(v, ParameterState) else np.asarray(v, dtype=float)
            out[name] = arr
        if set(out) != set(self.sizes):
            raise StructureError(
                f"configuration has parameters {sorted(out)}, model expects {sorted(self.sizes)}"
            )
        for name, n in self.sizes.items():
            if np.size(out[name]) != n:
                raise StructureError(f"{name}: expected {n} components, got {np.size(out[name])}")
        return out

    def log_density(self, config) -> float:
        value = float(self.fn(self._values(config)))
        if math.isnan(value) or value == math.inf:
            raise ValueError(f"log density evaluated to {value}")
        return value


def log_density(model: TargetModel, config) -> float:
    """Evaluate ``model`` at ``config`` (a sequence of ParameterStates or a name->values map)."""
    return model.log_density(config)


def _name_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")


class RandomSource:
    """Seeded stream of standard normal and uniform(0, 1) deviates.

    ``substream(name)`` derives an independent stream from (seed, name), so a
    named update draws the same numbers no matter where it sits in the
    update collection.  Two sources built from the same seed replay each
    other exactly.
    """

    def __init__(self, seed: int = 0, _key: Sequence[int] = ()):
        self.seed = int(seed)
        self._key = tuple(_key)
        ss = np.random.SeedSequence([self.seed & (2**64 - 1), *self._key])
        self.generator = np.random.Generator(np.random.PCG64(ss))
        self._children: dict[str, RandomSource] = {}

    def substream(self, name: str) -> "RandomSource":
        # cached, so asking twice for the same name continues the same stream
        if name not in self._children:
            self._children[name] = RandomSource(self.seed, (*self._key, _name_key(name)))
        return self._children[name]

    def normal(self) -> float:
        return float(self.generator.standard_normal())

    def uniform(self) -> float:
        u = self.generator.random()
        while u == 0.0:
            u = self.generator.random()
        return float(u)

    def normals(self, n: int) -> np.ndarray:
        return self.generator.standard_normal(n)

    def uniforms(self, n: int) -> np.ndarray:
        u = self.generator.random(n)
        while np.any(u == 0.0):
            u[u == 0.0] = self.generator.random(int(np.sum(u == 0.0)))
        return u


def draw_normal(src: RandomSource) -> float:
    return src.normal()


def draw_uniform(src: RandomSource) -> float:
    return src.uniform()
