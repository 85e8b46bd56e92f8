"""Proximal composite variant of the cutting-plane solver.

Handles upper and lower objectives split as smooth + prox-friendly parts.
The projection of the smooth solver becomes a proximal step onto
f2 + indicator(X_k), where X_k couples the lower-level linearization with
the nonsmooth lower part.  Only combinations with exact (or bisection-
certified) proximal maps are shipped; everything else is rejected loudly,
since silently approximating the prox would invalidate the bound tests.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .agm_bio import (
    SolverConfig,
    SolverState,
    _cut_from_values,
    _make_record,
    _project_onto_cut,
    _safeguarded_cut,
    prepare_x0,
    step_size,
)
from .aux_bound import AuxMode, freeze_to_last, run_lower_apg
from .errors import (
    CapabilityError,
    ContractViolationError,
    DivergenceError,
)
from .geometry import (
    FeasibleSet,
    Halfspace,
    ProxFriendlyTerm,
    WholeSpace,
    l1_term,
    project_halfspace,
    set_indicator,
    zero_term,
)
from .oracles import BilevelProblem, CompositeObjective, SmoothOracle
from .trace import IterateTrace, TraceRecord

__all__ = [
    "CompositeCutSet",
    "build_composite_cut",
    "cut_restricted_term",
    "prox_step",
    "p_agm_bio_solve",
    "zero_term",
    "l1_term",
    "set_indicator",
]


@dataclass(frozen=True)
class CompositeCutSet:
    """Surrogate set {z : g1(y) + <grad g1(y), z - y> + g2(z) <= level}.

    ``linear`` carries the smooth linearization as a halfspace in z; the set
    is that halfspace warped by the nonsmooth term g2.  When g2 is an
    indicator the set is exactly halfspace-intersect-domain; when g2 is zero
    it is the plain halfspace.
    """

    anchor: np.ndarray
    g1_value: float
    g1_gradient: np.ndarray
    level: float
    g2: ProxFriendlyTerm
    linear: Halfspace

    def contains(self, z, tol: float = 1e-10) -> bool:
        z = np.asarray(z, dtype=float)
        lhs = (
            self.g1_value
            + float(self.g1_gradient @ (z - self.anchor))
            + float(self.g2.value(z))
        )
        return lhs <= self.level + tol


def build_composite_cut(
    lower: CompositeObjective, y, level: float, grad_tol: float
) -> CompositeCutSet:
    """Composite cut at anchor ``y`` with the given level."""
    y = np.asarray(y, dtype=float)
    g1_value = float(lower.smooth.value(y))
    g1_gradient = np.asarray(lower.smooth.gradient(y), dtype=float)
    linear = _cut_from_values(g1_gradient, g1_value, y, level, grad_tol)
    return CompositeCutSet(
        anchor=y,
        g1_value=g1_value,
        g1_gradient=g1_gradient,
        level=level,
        g2=lower.nonsmooth,
        linear=linear,
    )


def _prox_l1_halfspace(weight: float, h: Halfspace, eta: float, v: np.ndarray) -> np.ndarray:
    # argmin_u ||u - v||^2 / (2 eta) + weight ||u||_1  s.t.  <a, u> <= b,
    # solved by bisection on the constraint multiplier; u(mu) is the soft
    # threshold of v - mu a, and <a, u(mu)> is piecewise linear nonincreasing.
    t = eta * weight
    a = h.normal
    b = h.offset

    def soft(w):
        return np.sign(w) * np.maximum(np.abs(w) - t, 0.0)

    def phi(mu):
        return float(a @ soft(v - mu * a)) - b

    u = soft(v)
    if float(a @ u) <= b:
        return u

    lo, hi = 0.0, 1.0
    for _ in range(200):
        if phi(hi) <= 0.0:
            break
        lo, hi = hi, hi * 2.0
    else:
        raise CapabilityError("could not bracket the halfspace multiplier")
    for _ in range(600):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:  # adjacent floats; interval exhausted
            break
        if phi(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return soft(v - hi * a)


def cut_restricted_term(f2: ProxFriendlyTerm, cut: CompositeCutSet) -> ProxFriendlyTerm:
    """The term f2 + indicator(X_k) with an exact proximal map.

    Shipped combinations:
      * f2 zero, g2 an indicator of a simple set: prox is the exact
        projection onto set-intersect-halfspace (or the set alone for a
        trivial cut);
      * f2 zero, g2 zero: prox is the halfspace projection;
      * f2 = weight * l1, g2 zero: prox by one-dimensional dual bisection;
      * any prox-friendly f2 when the cut is trivial and g2 is zero.
    Anything else raises CapabilityError.
    """
    f2_kind = f2.kind
    g2_kind = cut.g2.kind
    linear = cut.linear

    def value(z):
        base = float(f2.value(z))
        return base if cut.contains(z) else math.inf

    if g2_kind == "indicator":
        base_set: FeasibleSet = cut.g2.param
        if f2_kind == "zero":
            return ProxFriendlyTerm(
                value=value,
                prox=lambda eta, v: _project_onto_cut(base_set, linear, np.asarray(v, dtype=float)),
                kind="cut-projection",
            )
        raise CapabilityError(
            f"no exact proximal map for f2 kind {f2_kind!r} with an "
            "indicator lower nonsmooth part"
        )
    if g2_kind == "zero":
        if linear.trivial:
            return ProxFriendlyTerm(
                value=value,
                prox=lambda eta, v: f2.prox(eta, np.asarray(v, dtype=float)),
                kind="free-prox",
            )
        if f2_kind == "zero":
            return ProxFriendlyTerm(
                value=value,
                prox=lambda eta, v: project_halfspace(linear, np.asarray(v, dtype=float)),
                kind="cut-projection",
            )
        if f2_kind == "l1":
            weight = float(f2.param)
            if weight == 0.0:
                return ProxFriendlyTerm(
                    value=value,
                    prox=lambda eta, v: project_halfspace(linear, np.asarray(v, dtype=float)),
                    kind="cut-projection",
                )
            return ProxFriendlyTerm(
                value=value,
                prox=lambda eta, v: _prox_l1_halfspace(weight, linear, eta, np.asarray(v, dtype=float)),
                kind="l1-halfspace",
            )
        raise CapabilityError(
            f"no exact proximal map for f2 kind {f2_kind!r} over a halfspace cut"
        )
    raise CapabilityError(
        f"no exact proximal map for lower nonsmooth kind {g2_kind!r}"
    )


def prox_step(f2_plus_indicator: ProxFriendlyTerm, a_k: float, point) -> np.ndarray:
    """Proximal step with weight a_k on the cut-restricted term."""
    if not (a_k > 0.0):
        raise ContractViolationError("prox step size must be positive")
    return f2_plus_indicator.prox(a_k, np.asarray(point, dtype=float))


def _as_composite(obj) -> CompositeObjective:
    if isinstance(obj, CompositeObjective):
        return obj
    if isinstance(obj, SmoothOracle):
        return CompositeObjective(smooth=obj, nonsmooth=zero_term())
    raise ContractViolationError(f"not an objective: {obj!r}")


def p_agm_bio_solve(
    problem: BilevelProblem,
    config: SolverConfig,
    on_record: Optional[Callable[[TraceRecord], None]] = None,
) -> IterateTrace:
    """Run the proximal composite solver for K iterations.

    Identical recursion to the smooth solver with the projection replaced by
    the prox of f2 + indicator(X_k) and the cut built from the smooth and
    nonsmooth lower parts separately.  With f2 = 0 and g2 the indicator of
    the feasible set it reproduces the smooth solver's iterates exactly.
    """
    if config.K < 0:
        raise ContractViolationError("K must be >= 0")
    upper = _as_composite(problem.upper)
    lower = _as_composite(problem.lower)
    if not isinstance(problem.set, WholeSpace):
        raise ContractViolationError(
            "the composite solver works on the whole space; encode the set "
            "as an indicator term in the lower objective"
        )
    gamma = config.policy.gamma
    L_f = upper.smooth.lipschitz
    x0 = prepare_x0(problem, config.x0)
    if lower.nonsmooth.kind == "indicator":
        x0 = lower.nonsmooth.prox(1.0, x0)

    trace = IterateTrace(solver=config.label)
    if config.record_iterates:
        trace.iterates = [x0]

    def objective_pair(x):
        return (
            upper.smooth.value(x) + upper.nonsmooth.value(x),
            lower.smooth.value(x) + lower.nonsmooth.value(x),
        )

    t0 = time.perf_counter()
    f0, g0 = objective_pair(x0)
    rec = _make_record(problem, 0, 0.0, float(f0), float(g0), step_size(gamma, 0, L_f), 0.0)
    trace.records.append(rec)
    if on_record is not None:
        on_record(rec)
    if config.K == 0:
        trace.x_final = x0
        return trace

    aux = run_lower_apg(lower, problem.set, x0, config.K)
    if config.aux_mode == AuxMode.CONSTANT_LAST:
        aux = freeze_to_last(aux)
    grad_tol = 1e-12 * (1.0 + float(np.linalg.norm(lower.smooth.gradient(x0))))

    state = SolverState(k=0, x=x0, y=x0, z=x0, A=0.0, a=0.0)
    for k in range(config.K):
        a_k = step_size(gamma, k, L_f)
        total = state.A + a_k
        y = (state.A * state.x + a_k * state.z) / total
        cut = build_composite_cut(lower, y, aux.get(k), grad_tol)
        if cut.g2.kind == "indicator":
            linear = _safeguarded_cut(
                cut.g2.param, cut.linear, k, cut.g1_value, cut.level
            )
            if linear is not cut.linear:
                cut = CompositeCutSet(
                    anchor=cut.anchor, g1_value=cut.g1_value,
                    g1_gradient=cut.g1_gradient, level=cut.level,
                    g2=cut.g2, linear=linear,
                )
        term = cut_restricted_term(upper.nonsmooth, cut)
        v = state.z - a_k * np.asarray(upper.smooth.gradient(y), dtype=float)
        z_next = prox_step(term, a_k, v)
        x_next = (state.A * state.x + a_k * z_next) / total
        state = SolverState(k=k + 1, x=x_next, y=y, z=z_next, A=total, a=a_k)

        f_val, g_val = objective_pair(state.x)
        if not (math.isfinite(f_val) and math.isfinite(g_val)):
            raise DivergenceError("non-finite objective value", iteration=state.k)
        rec = _make_record(
            problem, state.k, time.perf_counter() - t0, float(f_val), float(g_val),
            step_size(gamma, state.k, L_f), state.A,
        )
        trace.records.append(rec)
        if on_record is not None:
            on_record(rec)
        if config.record_iterates:
            trace.iterates.append(state.x)

    trace.x_final = state.x
    return trace
