"""Auxiliary level sequence {g_k} from an accelerated projected gradient run
on the lower-level objective, plus the constant-last-value variant.

The sequence certifies upper bounds on the lower-level optimum: each entry is
the running minimum of lower-level values at feasible iterates, so it is
nonincreasing and never drops below the true optimum, while the accelerated
run gives the O(1/k^2) decay the outer solver's guarantees rely on.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Iterator, Tuple

import numpy as np

from .errors import ContractViolationError, DivergenceError
from .geometry import FeasibleSet, WholeSpace
from .oracles import CompositeObjective, Objective


class AuxMode(enum.Enum):
    PER_ITERATION = "per_iteration"
    CONSTANT_LAST = "constant_last"


@dataclass(frozen=True)
class AuxSequence:
    """Precomputed level sequence g_0..g_K with its guarantee mode."""

    values: np.ndarray
    mode: AuxMode
    source_x0: np.ndarray
    certified_feasible: bool = True

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        x0 = np.array(self.source_x0, dtype=float)
        x0.flags.writeable = False
        object.__setattr__(self, "source_x0", x0)

    def __len__(self) -> int:
        return self.values.shape[0]

    def get(self, k: int) -> float:
        if k < 0 or k >= len(self):
            raise ContractViolationError(
                f"aux sequence index {k} out of range [0, {len(self) - 1}]"
            )
        return float(self.values[k])


def get(seq: AuxSequence, k: int) -> float:
    """Level value g_k, honoring the sequence's mode."""
    return seq.get(k)


def freeze_to_last(seq: AuxSequence) -> AuxSequence:
    """Constant sequence pinned at the final (smallest) value.

    Trades the per-iteration levels for g_K everywhere, which removes the
    logarithmic factors from the outer bounds at the cost of committing to
    the horizon in advance.
    """
    if len(seq) == 0:
        raise ContractViolationError("cannot freeze an empty sequence")
    last = seq.values[-1]
    return AuxSequence(
        values=np.full(len(seq), last),
        mode=AuxMode.CONSTANT_LAST,
        source_x0=seq.source_x0,
        certified_feasible=seq.certified_feasible,
    )


def apg_iterates(
    gradient: Callable[[np.ndarray], np.ndarray],
    lipschitz: float,
    prox: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    K: int,
) -> Iterator[Tuple[int, np.ndarray]]:
    """FISTA-style accelerated proximal gradient iterates.

    Yields (j, x_j) for j = 1..K using the fixed step 1/lipschitz and the
    standard momentum recursion t_{j+1} = (1 + sqrt(1 + 4 t_j^2)) / 2.
    """
    if lipschitz <= 0:
        raise ContractViolationError("lipschitz constant must be positive")
    step = 1.0 / lipschitz
    x_prev = np.array(x0, dtype=float)
    y = x_prev
    t = 1.0
    for j in range(1, K + 1):
        x = prox(y - step * np.asarray(gradient(y), dtype=float))
        t_next = (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0
        y = x + ((t - 1.0) / t_next) * (x - x_prev)
        t = t_next
        x_prev = x
        yield j, x


def run_lower_apg(lower: Objective, set_: FeasibleSet, x0, K: int) -> AuxSequence:
    """Accelerated projected/proximal gradient run on the lower level.

    g_k is the running minimum of lower-level values over feasible iterates
    through iteration k (g_0 at the start point), which preserves the
    O(1/k^2) certificate while guaranteeing monotonicity even though the
    accelerated iterates themselves are not monotone.
    """
    if K < 1:
        raise ContractViolationError("K must be >= 1")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (set_.dim,):
        raise ContractViolationError("x0 dimension mismatch")

    if isinstance(lower, CompositeObjective):
        if not isinstance(set_, WholeSpace):
            raise ContractViolationError(
                "composite lower-level objectives carry their set in the "
                "nonsmooth term; pass the whole space"
            )
        smooth = lower.smooth
        if lower.nonsmooth.kind == "indicator":
            x0 = lower.nonsmooth.prox(1.0, x0)
        prox = lambda v: lower.nonsmooth.prox(1.0 / smooth.lipschitz, v)
        val = lambda x: lower.total_value(x)
    else:
        smooth = lower
        if not set_.contains(x0):
            x0 = set_.project(x0)
        prox = set_.project
        val = lambda x: float(lower.value(x))

    if smooth.lipschitz <= 0:
        raise ContractViolationError("lower-level lipschitz constant must be positive")

    values = np.empty(K + 1)
    best = val(x0)
    if not math.isfinite(best):
        raise DivergenceError("non-finite lower-level value at the start point", iteration=0)
    values[0] = best
    for j, x in apg_iterates(smooth.gradient, smooth.lipschitz, prox, x0, K):
        v = val(x)
        if not math.isfinite(v):
            raise DivergenceError("non-finite lower-level value", iteration=j)
        best = min(best, v)
        values[j] = best

    return AuxSequence(
        values=values,
        mode=AuxMode.PER_ITERATION,
        source_x0=x0,
        certified_feasible=True,
    )
