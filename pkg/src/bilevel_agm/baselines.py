"""Scalarization baselines: accelerated projected gradient on a weighted
combination of the two objectives.

r_apm minimizes g + eta * f with step 1/(L_g + eta L_f); the small default
eta = 1/(K+1) biases toward lower-level feasibility.  pb_apg minimizes
f + penalty * g with step 1/(L_f + penalty L_g) and a large fixed penalty.
Both keep every iterate inside the feasible set; neither adapts its weight,
which is what produces the accuracy floors the dynamic solver can pass.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .agm_bio import _make_record, prepare_x0
from .aux_bound import apg_iterates
from .errors import ContractViolationError, DivergenceError
from .oracles import BilevelProblem
from .trace import IterateTrace, TraceRecord


@dataclass(frozen=True)
class ScalarizedRun:
    """Bookkeeping for one scalarized run: the combination weight, the
    combined gradient Lipschitz constant, and the horizon."""

    weight: float
    combined_lipschitz: float
    K: int


def _scalarized_solve(
    problem: BilevelProblem,
    K: int,
    combined_grad,
    combined_L: float,
    label: str,
    x0,
    on_record,
) -> IterateTrace:
    if K < 1:
        raise ContractViolationError("K must be >= 1")
    if not problem.is_smooth():
        raise ContractViolationError("scalarization baselines require smooth objectives")
    x0 = prepare_x0(problem, x0)
    step = 1.0 / combined_L

    trace = IterateTrace(solver=label)
    t0 = time.perf_counter()

    def emit(k, x, wall):
        f_val = problem.upper_value(x)
        g_val = problem.lower_value(x)
        if not (math.isfinite(f_val) and math.isfinite(g_val)):
            raise DivergenceError("non-finite objective value", iteration=k)
        rec = _make_record(problem, k, wall, f_val, g_val, step, k * step)
        trace.records.append(rec)
        if on_record is not None:
            on_record(rec)

    emit(0, x0, 0.0)
    x = x0
    for j, x in apg_iterates(combined_grad, combined_L, problem.set.project, x0, K):
        emit(j, x, time.perf_counter() - t0)
    trace.x_final = x
    return trace


def r_apm_solve(
    problem: BilevelProblem,
    K: int,
    eta: Optional[float] = None,
    x0=None,
    on_record: Optional[Callable[[TraceRecord], None]] = None,
) -> IterateTrace:
    """Accelerated projected gradient on g + eta * f over the feasible set.

    eta defaults to 1/(K+1); the step size is 1/(L_g + eta L_f).
    """
    if not problem.is_smooth():
        raise ContractViolationError("scalarization baselines require smooth objectives")
    if eta is None:
        eta = 1.0 / (K + 1)
    if eta < 0:
        raise ContractViolationError("eta must be nonnegative")
    upper, lower = problem.upper, problem.lower
    L = lower.lipschitz + eta * upper.lipschitz

    def grad(x):
        return np.asarray(lower.gradient(x), dtype=float) + eta * np.asarray(
            upper.gradient(x), dtype=float
        )

    return _scalarized_solve(problem, K, grad, L, "r-apm", x0, on_record)


def pb_apg_solve(
    problem: BilevelProblem,
    K: int,
    penalty: Optional[float] = None,
    x0=None,
    on_record: Optional[Callable[[TraceRecord], None]] = None,
) -> IterateTrace:
    """Accelerated projected gradient on f + penalty * g over the feasible set.

    The penalty defaults to 1e4; the step size is 1/(L_f + penalty L_g).
    """
    if not problem.is_smooth():
        raise ContractViolationError("scalarization baselines require smooth objectives")
    if penalty is None:
        penalty = 1e4
    if penalty < 0:
        raise ContractViolationError("penalty must be nonnegative")
    upper, lower = problem.upper, problem.lower
    L = upper.lipschitz + penalty * lower.lipschitz

    def grad(x):
        return np.asarray(upper.gradient(x), dtype=float) + penalty * np.asarray(
            lower.gradient(x), dtype=float
        )

    return _scalarized_solve(problem, K, grad, L, "pb-apg", x0, on_record)
