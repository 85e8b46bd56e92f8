"""Objective oracles, bilevel problem containers, and gradient validation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .errors import ContractViolationError, EstimationError
from .geometry import FeasibleSet, ProxFriendlyTerm


@dataclass(frozen=True)
class SmoothOracle:
    """A convex, continuously differentiable objective.

    ``lipschitz`` is a Lipschitz constant for the gradient; solvers take
    their step sizes from it, so an overestimate is safe while an
    underestimate voids the convergence certificates.
    """

    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    lipschitz: float


@dataclass(frozen=True)
class CompositeObjective:
    """smooth + nonsmooth objective; the nonsmooth part carries its prox."""

    smooth: SmoothOracle
    nonsmooth: ProxFriendlyTerm

    def total_value(self, x) -> float:
        return float(self.smooth.value(x)) + float(self.nonsmooth.value(x))


Objective = Union[SmoothOracle, CompositeObjective]


def smooth_part(obj: Objective) -> SmoothOracle:
    return obj.smooth if isinstance(obj, CompositeObjective) else obj


def objective_value(obj: Objective, x) -> float:
    if isinstance(obj, CompositeObjective):
        return obj.total_value(x)
    return float(obj.value(x))


@dataclass(frozen=True)
class Truth:
    """Ground truth for a bilevel instance: optimal point and values."""

    x_star: np.ndarray
    g_star: float
    f_star: Optional[float] = None

    def __post_init__(self):
        x = np.array(self.x_star, dtype=float)
        x.flags.writeable = False
        object.__setattr__(self, "x_star", x)


@dataclass(frozen=True)
class HolderParams:
    """Holderian error bound parameters for the lower level.

    (alpha / r) * dist(x, solution set)^r <= g(x) - g*; r = 1 is weak
    sharpness, r = 2 quadratic growth.  M bounds the upper-level gradient
    norm over the lower-level solution set.
    """

    r: float
    alpha: float
    M: float = 0.0

    def __post_init__(self):
        if not (self.r >= 1.0):
            raise ContractViolationError("holder.r must be >= 1")
        if not (self.alpha > 0.0):
            raise ContractViolationError("holder.alpha must be > 0")
        if self.M < 0.0:
            raise ContractViolationError("holder.M must be >= 0")


@dataclass(frozen=True)
class BilevelProblem:
    """min upper(x) subject to x minimizing lower over the feasible set."""

    upper: Objective
    lower: Objective
    set: FeasibleSet
    truth: Optional[Truth] = None
    holder: Optional[HolderParams] = None

    def __post_init__(self):
        if self.truth is not None:
            x_star = self.truth.x_star
            if x_star.shape != (self.set.dim,):
                raise ContractViolationError("truth.x_star dimension mismatch")
            if not self.set.contains(x_star, tol=1e-10):
                raise ContractViolationError("truth.x_star is not in the feasible set")
            g_at_star = objective_value(self.lower, x_star)
            if abs(g_at_star - self.truth.g_star) > 1e-10:
                raise ContractViolationError(
                    "lower value at x_star disagrees with g_star "
                    f"({g_at_star!r} vs {self.truth.g_star!r})"
                )
            if self.truth.f_star is None:
                f_star = objective_value(self.upper, x_star)
                object.__setattr__(self, "truth", Truth(x_star, self.truth.g_star, f_star))

    @property
    def dim(self) -> int:
        return self.set.dim

    @property
    def L_f(self) -> float:
        return smooth_part(self.upper).lipschitz

    @property
    def L_g(self) -> float:
        return smooth_part(self.lower).lipschitz

    def upper_value(self, x) -> float:
        return objective_value(self.upper, x)

    def lower_value(self, x) -> float:
        return objective_value(self.lower, x)

    def is_smooth(self) -> bool:
        return isinstance(self.upper, SmoothOracle) and isinstance(self.lower, SmoothOracle)


def _power_iteration_sym(matvec, n: int, tol: float = 1e-8, max_iter: int = 5000) -> float:
    # Largest eigenvalue of a PSD operator; the fixed internal seed keeps the
    # estimate (and everything downstream) reproducible run to run.
    rng = np.random.default_rng(0x5EED)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = matvec(v)
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            return 0.0
        v = w / nw
        lam_new = float(v @ matvec(v))
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-30):
            return lam_new
        lam = lam_new
    raise EstimationError(
        f"power iteration did not converge within {max_iter} iterations"
    )


def least_squares_oracle(A, b, lipschitz: Optional[float] = None) -> SmoothOracle:
    """Oracle for 0.5 * ||A x - b||^2.

    The gradient Lipschitz constant is the largest eigenvalue of A^T A,
    estimated by power iteration unless an explicit constant is supplied.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise ContractViolationError("A must be a nonempty matrix")
    if b.shape != (A.shape[0],):
        raise ContractViolationError("b length must match the rows of A")
    if lipschitz is None:
        lipschitz = _power_iteration_sym(lambda v: A.T @ (A @ v), A.shape[1])

    def value(x):
        r = A @ x - b
        return 0.5 * float(r @ r)

    def gradient(x):
        return A.T @ (A @ x - b)

    return SmoothOracle(value=value, gradient=gradient, lipschitz=float(lipschitz))


def quadratic_norm_oracle(n: int) -> SmoothOracle:
    """Oracle for 0.5 * ||x||^2 on R^n (gradient x, constant 1)."""
    if n < 1:
        raise ContractViolationError("dimension must be >= 1")
    return SmoothOracle(
        value=lambda x: 0.5 * float(np.asarray(x) @ np.asarray(x)),
        gradient=lambda x: np.array(x, dtype=float),
        lipschitz=1.0,
    )


@dataclass(frozen=True)
class GradientCheckReport:
    max_rel_err: float
    probes: int


def check_gradient(oracle: SmoothOracle, probes: int, seed: int, dim: int) -> GradientCheckReport:
    """Compare the oracle gradient against central finite differences.

    Probes are seeded standard-normal points; the step is 1e-6 scaled by the
    coordinate magnitude.  Reports the worst relative error over all probes.
    """
    if probes < 1:
        raise ContractViolationError("probes must be >= 1")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(probes):
        x = rng.standard_normal(dim)
        g = np.asarray(oracle.gradient(x), dtype=float)
        fd = np.empty(dim)
        for i in range(dim):
            h = 1e-6 * max(1.0, abs(x[i]))
            e = np.zeros(dim)
            e[i] = h
            fd[i] = (oracle.value(x + e) - oracle.value(x - e)) / (2.0 * h)
        denom = max(float(np.linalg.norm(fd)), 1e-12)
        worst = max(worst, float(np.linalg.norm(g - fd)) / denom)
    return GradientCheckReport(max_rel_err=worst, probes=probes)
