"""Feasible-set geometry: exact Euclidean projections, Dykstra's scheme,
and the proximal-map contract used by the composite solver.

All sets are immutable after construction and all operations are pure, so
values can be shared freely across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    ContractViolationError,
    DegenerateHalfspaceError,
    DykstraNonConvergenceError,
    InfeasibleRegionError,
)


def _as_vector(p, dim: int, what: str = "point") -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape != (dim,):
        raise ContractViolationError(
            f"{what} has shape {p.shape}, expected ({dim},)"
        )
    if not np.all(np.isfinite(p)):
        raise ContractViolationError(f"{what} contains non-finite entries")
    return p


def _frozen_array(obj, name, value):
    arr = np.array(value, dtype=float)
    arr.flags.writeable = False
    object.__setattr__(obj, name, arr)
    return arr


@dataclass(frozen=True)
class Halfspace:
    """Closed halfspace {z : <normal, z> <= offset}.

    A zero normal is only legal together with ``trivial=True``, which stands
    for "constraint absent" (the whole space); its projection is the identity.
    """

    normal: np.ndarray
    offset: float
    trivial: bool = False

    def __post_init__(self):
        a = _frozen_array(self, "normal", self.normal)
        if a.ndim != 1:
            raise ContractViolationError("halfspace normal must be a vector")
        if not np.all(np.isfinite(a)) or not np.isfinite(self.offset):
            raise ContractViolationError("halfspace data must be finite")
        if not self.trivial and not np.any(a != 0.0):
            raise DegenerateHalfspaceError(
                "zero normal is only allowed for the trivial halfspace"
            )

    @property
    def dim(self) -> int:
        return self.normal.shape[0]

    def contains(self, p, tol: float = 1e-12) -> bool:
        if self.trivial:
            return True
        return float(self.normal @ np.asarray(p, dtype=float)) <= self.offset + tol

    def project(self, p) -> np.ndarray:
        return project_halfspace(self, p)


def trivial_halfspace(dim: int) -> Halfspace:
    """The 'constraint absent' halfspace covering all of R^dim."""
    return Halfspace(np.zeros(dim), 0.0, trivial=True)


class FeasibleSet:
    """Base class for the supported feasible-set geometries.

    Subclasses provide an exact Euclidean projection, a membership test,
    the support minimum min_{z in Z} <a, z> (used to detect empty cut
    intersections), and an exact diameter for the bounded variants.
    """

    dim: int

    def project(self, p: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def contains(self, p, tol: float = 1e-10) -> bool:
        raise NotImplementedError

    def support_min(self, a: np.ndarray) -> float:
        """min over the set of <a, z>; -inf on unbounded directions."""
        raise NotImplementedError

    @property
    def diameter(self) -> Optional[float]:
        return None


@dataclass(frozen=True)
class WholeSpace(FeasibleSet):
    dim: int

    def project(self, p):
        return np.array(p, dtype=float)

    def contains(self, p, tol: float = 1e-10) -> bool:
        return bool(np.all(np.isfinite(np.asarray(p, dtype=float))))

    def support_min(self, a):
        a = np.asarray(a, dtype=float)
        return 0.0 if not np.any(a != 0.0) else -np.inf


@dataclass(frozen=True)
class Ball(FeasibleSet):
    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = _frozen_array(self, "center", self.center)
        if c.ndim != 1 or not np.all(np.isfinite(c)):
            raise ContractViolationError("ball center must be a finite vector")
        if not (self.radius > 0):
            raise ContractViolationError("ball radius must be positive")

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    def project(self, p):
        p = np.asarray(p, dtype=float)
        d = p - self.center
        n = float(np.linalg.norm(d))
        if n <= self.radius:
            return p.copy()
        return self.center + d * (self.radius / n)

    def contains(self, p, tol: float = 1e-10) -> bool:
        return float(np.linalg.norm(np.asarray(p, dtype=float) - self.center)) <= self.radius + tol

    def support_min(self, a):
        a = np.asarray(a, dtype=float)
        return float(a @ self.center) - self.radius * float(np.linalg.norm(a))


@dataclass(frozen=True)
class NonnegOrthant(FeasibleSet):
    dim: int

    def project(self, p):
        return np.maximum(np.asarray(p, dtype=float), 0.0)

    def contains(self, p, tol: float = 1e-10) -> bool:
        return bool(np.min(np.asarray(p, dtype=float)) >= -tol)

    def support_min(self, a):
        a = np.asarray(a, dtype=float)
        return 0.0 if np.all(a >= 0.0) else -np.inf


@dataclass(frozen=True)
class Box(FeasibleSet):
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = _frozen_array(self, "lower", self.lower)
        hi = _frozen_array(self, "upper", self.upper)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ContractViolationError("box bounds must be vectors of equal length")
        if not np.all(lo <= hi):
            raise ContractViolationError("box requires lower <= upper componentwise")

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    def project(self, p):
        return np.clip(np.asarray(p, dtype=float), self.lower, self.upper)

    def contains(self, p, tol: float = 1e-10) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= self.lower - tol) and np.all(p <= self.upper + tol))

    def support_min(self, a):
        a = np.asarray(a, dtype=float)
        return float(np.sum(np.where(a > 0.0, a * self.lower, a * self.upper)))


def project_set(fs: FeasibleSet, p) -> np.ndarray:
    """Exact Euclidean projection of ``p`` onto the feasible set ``fs``."""
    p = _as_vector(p, fs.dim)
    return fs.project(p)


def project_halfspace(h: Halfspace, p) -> np.ndarray:
    """Exact Euclidean projection of ``p`` onto the halfspace ``h``.

    Returns ``p`` unchanged when it is already feasible, otherwise drops the
    point orthogonally onto the boundary hyperplane.
    """
    p = _as_vector(p, h.dim)
    if h.trivial:
        return p.copy()
    a = h.normal
    slack = float(a @ p) - h.offset
    if slack <= 0.0:
        return p.copy()
    return p - (slack / float(a @ a)) * a


def project_ball_halfspace(ball: Ball, h: Halfspace, p) -> np.ndarray:
    """Closed-form Euclidean projection onto Ball `intersect` halfspace.

    Runs the four-way KKT case analysis: the point itself (both constraints
    slack), the ball face, the halfspace face, and the edge where both are
    active.  For the edge, the multiplier system reduces to a quadratic for
    the in-plane radius, solved analytically.  The unique projection is the
    nearest primal-feasible stationary candidate.

    Raises InfeasibleRegionError when the intersection is empty.
    """
    p = _as_vector(p, ball.dim)
    if h.trivial:
        return ball.project(p)
    if h.dim != ball.dim:
        raise ContractViolationError("halfspace / ball dimension mismatch")

    a = h.normal
    b = h.offset
    c = ball.center
    R = ball.radius
    na2 = float(a @ a)
    na = np.sqrt(na2)
    beta = b - float(a @ c)  # hyperplane offset in ball-centered coordinates

    if beta < -R * na:
        raise InfeasibleRegionError(
            "ball and halfspace do not intersect "
            f"(offset gap {beta + R * na:.3e})"
        )

    d = p - c
    nd = float(np.linalg.norm(d))
    scale = 1.0 + abs(b) + na * (float(np.linalg.norm(c)) + R)
    feas_tol = 1e-12 * scale

    # Case 1: both constraints slack at p.
    if nd <= R and float(a @ p) <= b:
        return p.copy()

    candidates = []

    # Case 2: ball face active only (valid multiplier requires p outside).
    if nd > R:
        u = c + d * (R / nd)
        if float(a @ u) - b <= feas_tol:
            candidates.append(u)

    # Case 3: halfspace face active only.
    slack = float(a @ p) - b
    if slack > 0.0:
        u = p - (slack / na2) * a
        if float(np.linalg.norm(u - c)) - R <= 1e-12 * (1.0 + R):
            candidates.append(u)

    # Case 4: edge of both; the boundary circle exists iff |beta| <= R*||a||.
    rho2 = R * R - beta * beta / na2
    if rho2 >= -1e-15 * (R * R + 1.0):
        w_par = (beta / na2) * a
        d_perp = d - (float(a @ d) / na2) * a
        n_perp = float(np.linalg.norm(d_perp))
        if n_perp > 0.0:
            direction = d_perp / n_perp
        else:
            # p - c parallel to a: every edge point is equidistant; pick a
            # deterministic direction orthogonal to a.
            e = np.zeros_like(a)
            e[int(np.argmin(np.abs(a)))] = 1.0
            direction = e - (float(a @ e) / na2) * a
            direction = direction / float(np.linalg.norm(direction))
        rho = np.sqrt(max(rho2, 0.0))
        candidates.append(c + w_par + rho * direction)

    if not candidates:
        raise InfeasibleRegionError("no feasible KKT candidate found")
    dists = [float(np.linalg.norm(u - p)) for u in candidates]
    return candidates[int(np.argmin(dists))]


def _projector(s) -> Callable[[np.ndarray], np.ndarray]:
    if hasattr(s, "project"):
        return s.project
    if callable(s):
        return s
    raise ContractViolationError(f"not a projector: {s!r}")


def dykstra_project(
    sets: Sequence,
    p,
    tol: float = 1e-10,
    max_sweeps: int = 10000,
) -> np.ndarray:
    """Dykstra's alternating-projection scheme for an intersection of sets.

    Each entry of ``sets`` is a FeasibleSet, a Halfspace, or a bare projector
    callable.  Correction variables are kept per set; the sweep order is the
    given list order.  Stops when both the iterate displacement and the
    correction-variable increments vanish over a full sweep (the iterate
    displacement alone can transiently stall near zero while the corrections
    are still drifting, which returns a point far from the projection).
    """
    projectors = [_projector(s) for s in sets]
    x = np.array(p, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ContractViolationError("point contains non-finite entries")
    corrections = [np.zeros_like(x) for _ in projectors]

    for _ in range(max_sweeps):
        x_prev = x
        drift = 0.0
        for i, proj in enumerate(projectors):
            shifted = x + corrections[i]
            y = proj(shifted)
            new_correction = shifted - y
            drift += float(np.sum((new_correction - corrections[i]) ** 2))
            corrections[i] = new_correction
            x = y
        residual = math.sqrt(float(np.sum((x - x_prev) ** 2)) + drift)
        if residual <= tol:
            return x
    raise DykstraNonConvergenceError(
        f"no convergence within {max_sweeps} sweeps",
        last_iterate=x,
        residual=residual,
    )


@dataclass(frozen=True)
class ProxFriendlyTerm:
    """A convex term h with an exact proximal map.

    ``value`` maps a point to an extended-real value; ``prox`` maps
    (step eta > 0, point) to argmin_u ||u - point||^2 / (2 eta) + h(u).
    ``kind`` tags the shipped terms ("zero", "l1", "indicator") so the
    composite solver can recognize combinations it has exact maps for;
    custom terms leave it None.
    """

    value: Callable[[np.ndarray], float]
    prox: Callable[[float, np.ndarray], np.ndarray]
    kind: Optional[str] = None
    param: object = field(default=None)


def zero_term() -> ProxFriendlyTerm:
    """The identically-zero term; its prox is the identity."""
    return ProxFriendlyTerm(
        value=lambda x: 0.0,
        prox=lambda eta, x: np.array(x, dtype=float),
        kind="zero",
    )


def l1_term(weight: float) -> ProxFriendlyTerm:
    """weight * ||.||_1 with the soft-threshold prox."""
    if weight < 0:
        raise ContractViolationError("l1 weight must be nonnegative")

    def value(x):
        return weight * float(np.sum(np.abs(x)))

    def prox(eta, x):
        x = np.asarray(x, dtype=float)
        t = eta * weight
        return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)

    return ProxFriendlyTerm(value=value, prox=prox, kind="l1", param=weight)


def set_indicator(fs: FeasibleSet) -> ProxFriendlyTerm:
    """Indicator of a feasible set; its prox is the exact projection."""

    def value(x):
        return 0.0 if fs.contains(x) else np.inf

    return ProxFriendlyTerm(
        value=value,
        prox=lambda eta, x: project_set(fs, x),
        kind="indicator",
        param=fs,
    )
