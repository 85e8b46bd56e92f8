import numpy as np
import pytest

from bilevel_agm.errors import ContractViolationError, EstimationError
from bilevel_agm.geometry import NonnegOrthant
from bilevel_agm.oracles import (
    BilevelProblem,
    CompositeObjective,
    HolderParams,
    SmoothOracle,
    Truth,
    check_gradient,
    least_squares_oracle,
    quadratic_norm_oracle,
)
from bilevel_agm.geometry import l1_term


def test_least_squares_identity_system():
    o = least_squares_oracle(np.eye(2), np.zeros(2))
    x = np.array([1.0, 1.0])
    assert o.value(x) == pytest.approx(1.0)
    np.testing.assert_allclose(o.gradient(x), [1.0, 1.0], atol=1e-15)
    assert o.lipschitz == pytest.approx(1.0, rel=1e-7)


def test_least_squares_all_ones_row():
    # 1 x n all-ones design has curvature n along the ones direction.
    for n in (3, 10, 100):
        o = least_squares_oracle(np.ones((1, n)), np.ones(1))
        assert o.lipschitz == pytest.approx(n, rel=1e-7)


def test_least_squares_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((5, 3))
    b = rng.standard_normal(5)
    o = least_squares_oracle(A, b)
    rep = check_gradient(o, probes=20, seed=0, dim=3)
    assert rep.max_rel_err < 1e-6


def test_least_squares_shape_validation():
    with pytest.raises(ContractViolationError):
        least_squares_oracle(np.eye(2), np.zeros(3))
    with pytest.raises(ContractViolationError):
        least_squares_oracle(np.zeros((0, 2)), np.zeros(0))


def test_least_squares_explicit_lipschitz_override():
    o = least_squares_oracle(np.ones((1, 4)), np.ones(1), lipschitz=4.0)
    assert o.lipschitz == 4.0


def test_lipschitz_pair_inequality():
    # ||grad(x) - grad(y)|| <= (1 + 1e-6) L ||x - y|| on random pairs.
    rng = np.random.default_rng(11)
    A = rng.standard_normal((6, 4))
    o = least_squares_oracle(A, rng.standard_normal(6))
    L = o.lipschitz
    for _ in range(100):
        x, y = rng.standard_normal(4), rng.standard_normal(4)
        lhs = np.linalg.norm(o.gradient(x) - o.gradient(y))
        assert lhs <= (L + 1e-6 * L) * np.linalg.norm(x - y)


def test_quadratic_norm_oracle():
    o = quadratic_norm_oracle(3)
    assert o.value(np.zeros(3)) == 0.0
    np.testing.assert_allclose(o.gradient(np.zeros(3)), np.zeros(3), atol=0)
    x = np.full(3, 1.0 / 3.0)
    assert o.value(x) == pytest.approx(1.0 / 6.0)
    o2 = quadratic_norm_oracle(2)
    assert o2.value(np.array([3.0, 4.0])) == pytest.approx(12.5)
    np.testing.assert_allclose(o2.gradient(np.array([3.0, 4.0])), [3.0, 4.0], atol=0)
    with pytest.raises(ContractViolationError):
        quadratic_norm_oracle(0)


def test_check_gradient_quadratic():
    rep = check_gradient(quadratic_norm_oracle(3), probes=10, seed=1, dim=3)
    assert rep.max_rel_err < 1e-6


def test_check_gradient_negative_control():
    base = quadratic_norm_oracle(3)
    broken = SmoothOracle(
        value=base.value,
        gradient=lambda x: 2.0 * np.asarray(x, dtype=float),
        lipschitz=1.0,
    )
    rep = check_gradient(broken, probes=10, seed=1, dim=3)
    assert rep.max_rel_err > 0.5


def test_check_gradient_validates_probes():
    with pytest.raises(ContractViolationError):
        check_gradient(quadratic_norm_oracle(2), probes=0, seed=0, dim=2)


def test_convexity_spot_check():
    rng = np.random.default_rng(17)
    A = rng.standard_normal((4, 6))
    o = least_squares_oracle(A, rng.standard_normal(4))
    for _ in range(100):
        x, y = rng.standard_normal(6), rng.standard_normal(6)
        mid = 0.5 * (x + y)
        assert o.value(mid) <= 0.5 * (o.value(x) + o.value(y)) + 1e-10


def test_power_iteration_nonconvergence_surfaces():
    # Nearly-degenerate leading eigenvalues converge too slowly for a tiny
    # iteration budget; the failure must surface, not default silently.
    from bilevel_agm.oracles import _power_iteration_sym

    d = np.array([1.0, 1.0 - 1e-6])
    with pytest.raises(EstimationError):
        _power_iteration_sym(lambda v: d * v, 2, tol=1e-14, max_iter=10)


def test_bilevel_problem_truth_validation():
    n = 3
    upper = quadratic_norm_oracle(n)
    lower = least_squares_oracle(np.ones((1, n)), np.ones(1), lipschitz=float(n))
    x_star = np.full(n, 1.0 / n)
    prob = BilevelProblem(
        upper=upper, lower=lower, set=NonnegOrthant(n),
        truth=Truth(x_star=x_star, g_star=0.0),
    )
    # f_star filled in from the upper oracle when omitted
    assert prob.truth.f_star == pytest.approx(1.0 / 6.0)

    with pytest.raises(ContractViolationError):
        BilevelProblem(
            upper=upper, lower=lower, set=NonnegOrthant(n),
            truth=Truth(x_star=-x_star, g_star=0.0),
        )
    with pytest.raises(ContractViolationError):
        BilevelProblem(
            upper=upper, lower=lower, set=NonnegOrthant(n),
            truth=Truth(x_star=x_star, g_star=1.0),
        )


def test_truth_lower_optimality_sampled():
    n = 4
    lower = least_squares_oracle(np.ones((1, n)), np.ones(1), lipschitz=float(n))
    prob = BilevelProblem(
        upper=quadratic_norm_oracle(n),
        lower=lower,
        set=NonnegOrthant(n),
        truth=Truth(x_star=np.full(n, 1.0 / n), g_star=0.0),
    )
    rng = np.random.default_rng(23)
    assert abs(prob.lower_value(prob.truth.x_star) - prob.truth.g_star) <= 1e-10
    for _ in range(100):
        z = rng.random(n) * 2.0
        assert prob.lower_value(z) >= prob.truth.g_star - 1e-10


def test_holder_params_validation():
    with pytest.raises(ContractViolationError):
        HolderParams(r=0.5, alpha=1.0)
    with pytest.raises(ContractViolationError):
        HolderParams(r=1.0, alpha=0.0)
    h = HolderParams(r=2.0, alpha=1.0, M=0.5)
    assert h.r == 2.0


def test_composite_objective_total_value():
    smooth = quadratic_norm_oracle(2)
    comp = CompositeObjective(smooth=smooth, nonsmooth=l1_term(0.5))
    x = np.array([1.0, -2.0])
    assert comp.total_value(x) == pytest.approx(2.5 + 1.5)
