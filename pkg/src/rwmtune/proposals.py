"""Proposal kernels and block perturbers.

Every kernel returns the candidate together with log T(y, x) / T(x, y).
Passing ``z`` replaces the random normal deviate, which makes identity and
shift moves exactly reproducible in tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import ParameterState, RandomSource, ScaleType, StructureError


@dataclass
class ProposalOutcome:
    candidate: object
    log_hastings_ratio: float


def _z(src, z):
    return src.normal() if z is None else float(z)


def _logit(p: float) -> float:
    return math.log(p) - math.log1p(-p)


def _expit(t: float) -> float:
    if t >= 0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


def propose_linear(x: float, s: float, src: RandomSource | None = None, z=None) -> ProposalOutcome:
    return ProposalOutcome(x + s * _z(src, z), 0.0)


def propose_log(x: float, s: float, src: RandomSource | None = None, z=None) -> ProposalOutcome:
    # T(x, y) carries a 1/y factor, so T(y, x) / T(x, y) = y / x.
    step = s * _z(src, z)
    y = x * math.exp(step) if step < 709.0 else math.inf
    if not 0.0 < y < math.inf:
        # over- or underflow at huge trial step sizes; stay put
        return ProposalOutcome(x, 0.0)
    return ProposalOutcome(y, step)


def propose_logit(x: float, s: float, src: RandomSource | None = None, z=None) -> ProposalOutcome:
    y = _expit(_logit(x) + s * _z(src, z))
    if y <= 0.0 or y >= 1.0:
        # the logistic map saturated in floating point; stay put
        return ProposalOutcome(x, 0.0)
    lhr = math.log(y) + math.log1p(-y) - math.log(x) - math.log1p(-x)
    return ProposalOutcome(y, lhr)


KERNELS = {
    ScaleType.LINEAR: propose_linear,
    ScaleType.LOG: propose_log,
    ScaleType.LOGIT: propose_logit,
}


def propose(scale: ScaleType, x: float, s: float, src=None, z=None) -> ProposalOutcome:
    return KERNELS[scale](x, s, src, z)


def add_common_perturb(components, groups, step_sizes, src=None, z=None) -> ProposalOutcome:
    """Shift every component in group j by s_j * Z_j, one Z_j per group.

    ``components`` is a sequence of (ParameterState, indices); ``groups`` holds,
    for each entry, the group label of each listed index.  The candidate is a
    list of full value arrays, one per entry of ``components``.
    """
    step_sizes = np.asarray(step_sizes, dtype=float)
    if len(components) == 0:
        raise StructureError("add-common move needs at least one component")
    labels = set()
    for (param, idx), grp in zip(components, groups, strict=True):
        if len(idx) != len(grp):
            raise StructureError(f"{param.name}: group map length does not match indices")
        labels.update(int(g) for g in grp)
    n_groups = step_sizes.size
    if any(g < 0 or g >= n_groups for g in labels):
        raise StructureError("group label out of range")
    if labels != set(range(n_groups)):
        raise StructureError("every group must contain at least one component")
    if np.any(~(step_sizes > 0)):
        raise ValueError("step sizes must be positive")
    if z is None:
        zs = np.array([src.normal() for _ in range(n_groups)])
    else:
        zs = np.broadcast_to(np.asarray(z, dtype=float), (n_groups,))
    shift = step_sizes * zs
    out = []
    for (param, idx), grp in zip(components, groups):
        new = np.array(param.values, dtype=float)
        new[np.asarray(idx, dtype=int)] += shift[np.asarray(grp, dtype=int)]
        out.append(new)
    return ProposalOutcome(out, 0.0)


def sum_to_one_logit_perturb(x, i: int, s: float, src=None, z=None) -> ProposalOutcome:
    """Random walk on logit(x_i) with the other coordinates rescaled to keep sum one.

    Writing the simplex point as (x_i, r) with r_j = x_j / (1 - x_i), the move
    changes x_i only.  Lebesgue measure on the simplex picks up a factor
    (1 - x_i)^(K-2) in those coordinates, which enters the ratio next to the
    logit-kernel Jacobian y_i (1 - y_i) / (x_i (1 - x_i)).
    """
    x = np.asarray(x, dtype=float)
    k = x.size
    if k < 2:
        raise StructureError("sum-to-one move needs at least two coordinates")
    xi = float(x[i])
    yi = _expit(_logit(xi) + s * _z(src, z))
    if yi <= 0.0 or yi >= 1.0:
        return ProposalOutcome(x.copy(), 0.0)
    rest = np.delete(x, i)
    # rescale by the actual sum of the others so rounding error cannot compound
    y = x * ((1.0 - yi) / rest.sum())
    y[i] = yi
    if np.any(y <= 0.0) or np.any(y >= 1.0):
        # another coordinate underflowed; treat like saturation of the logit map
        return ProposalOutcome(x.copy(), 0.0)
    log1m_y, log1m_x = math.log1p(-yi), math.log1p(-xi)
    lhr = (math.log(yi) + log1m_y) - (math.log(xi) + log1m_x) + (k - 2) * (log1m_y - log1m_x)
    return ProposalOutcome(y, lhr)


class AddCommonPerturber:
    """Block move adding a common N(0, s_j^2) shift to every component in group j.

    ``components`` lists (ParameterState, indices); ``groups`` gives the group
    label of each index (default: everything in group 0).  Each group is one
    tunable step size.
    """

    def __init__(
        self,
        components: Sequence[tuple[ParameterState, Sequence[int]]],
        step_sizes,
        groups: Sequence[Sequence[int]] | None = None,
    ):
        self.components = [(p, np.asarray(idx, dtype=int)) for p, idx in components]
        if groups is None:
            groups = [np.zeros(len(idx), dtype=int) for _, idx in self.components]
        self.groups = [np.asarray(g, dtype=int) for g in groups]
        self.step_sizes = np.array(np.atleast_1d(step_sizes), dtype=float)
        # validates the group map once
        add_common_perturb(self.components, self.groups, self.step_sizes, z=0.0)

    @property
    def parameters(self) -> list[ParameterState]:
        seen: dict[str, ParameterState] = {}
        for p, _ in self.components:
            seen.setdefault(p.name, p)
        return list(seen.values())

    @property
    def n_groups(self) -> int:
        return self.step_sizes.size

    def perturb(self, group: int, src=None, z=None) -> ProposalOutcome:
        """Propose a move of group ``group`` only; candidate maps parameter name to values."""
        shift = self.step_sizes[group] * _z(src, z)
        cand: dict[str, np.ndarray] = {}
        for (p, idx), g in zip(self.components, self.groups):
            sel = idx[g == group]
            if sel.size:
                arr = cand.setdefault(p.name, p.values.copy())
                arr[sel] += shift
        return ProposalOutcome(cand, 0.0)
