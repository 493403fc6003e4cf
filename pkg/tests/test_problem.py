import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evqr.problem import (
    Coupling,
    DiscreteProblem,
    Potentials,
    ProblemError,
    compute_cost_matrix,
    cost_summary,
    coupling,
    dual_objective,
    iota,
    neg_gradients,
    primal_objective,
    residuals,
)
from instances import random_potentials, random_problem, two_atom_problem, with_raw_covariates
from oracles import central_gradient, dual_direct

# (1 + e^{-1/2}) / 2 from a direct two-term sum
IOTA_TWO_ATOM = 0.8032653298563167


def test_cost_matrix_examples():
    assert compute_cost_matrix([[0.0, 0.0]], [[3.0, 4.0]])[0, 0] == 12.5
    u = np.array([[0.3, -1.2, 2.0]])
    assert compute_cost_matrix(u, u)[0, 0] == 0.0
    np.testing.assert_array_equal(compute_cost_matrix([[0.0], [1.0]], [[2.0]]), [[2.0], [0.5]])


def test_cost_matrix_dimension_mismatch():
    with pytest.raises(ProblemError, match="dimension mismatch"):
        compute_cost_matrix(np.zeros((2, 2)), np.zeros((3, 1)))


def test_cost_summary():
    U = np.array([[0.0, 0.0], [3.0, 0.0], [0.0, 4.0], [1.0, 1.0]])
    Y = np.array([[1.0, 0.0], [0.0, -2.0]])
    cs = cost_summary(U, Y)
    assert cs.diam_U == pytest.approx(5.0)
    assert cs.L_c == pytest.approx(2.0 + 4.0)
    assert cs.c_inf == pytest.approx(0.5 * 36.0)


def test_iota_examples():
    one = DiscreteProblem.from_arrays([[0.0]], [[-1.0], [1.0]], [[0.0], [0.0]], 1.0)
    assert iota(Potentials.zeros(one), one) == pytest.approx(1.0, abs=1e-15)
    prob = two_atom_problem()
    assert iota(Potentials.zeros(prob), prob) == pytest.approx(IOTA_TWO_ATOM, abs=1e-15)
    assert IOTA_TWO_ATOM == pytest.approx((1 + math.exp(-0.5)) / 2, abs=1e-15)


def test_iota_shift_between_f_and_h():
    prob = random_problem(3)
    p = random_potentials(prob, 4)
    q = Potentials(p.f + 0.7, p.G, p.h - 0.7)
    assert iota(q, prob) == pytest.approx(iota(p, prob), rel=1e-13)


def test_dual_objective_examples():
    prob = two_atom_problem()
    assert dual_objective(Potentials.zeros(prob), prob) == pytest.approx(1 - IOTA_TWO_ATOM, abs=1e-15)
    assert dual_objective(Potentials.zeros(prob), prob) == pytest.approx(0.196735, abs=1e-6)


def test_dual_matches_direct_loop():
    prob = random_problem(11, max_size=8)
    p = random_potentials(prob, 12)
    ref = dual_direct(p.f, p.G, p.h, prob.U, prob.a, prob.X, prob.Y, prob.b, prob.epsilon)
    assert dual_objective(p, prob) == pytest.approx(ref, rel=1e-12, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    alpha=st.floats(-5, 5),
    v=st.lists(st.floats(-3, 3), min_size=3, max_size=3),
)
def test_affine_shift_invariance(seed, alpha, v):
    prob = random_problem(seed, max_size=12)
    p = random_potentials(prob, seed + 1)
    v = np.array(v[: prob.d_x])
    q = Potentials(p.f + alpha, p.G + v, p.h - alpha - prob.X @ v)
    D = dual_objective(p, prob)
    assert dual_objective(q, prob) == pytest.approx(D, abs=1e-11 * (1 + abs(D)))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), eps=st.sampled_from([0.5, 1.0, 2.0]))
def test_weak_duality(seed, eps):
    prob = random_problem(seed, max_size=15, epsilon=eps)
    p = random_potentials(prob, seed + 7, scale=1.0)
    assert dual_objective(p, prob) <= prob.a @ prob.C @ prob.b + 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_finite_differences(seed):
    prob = random_problem(seed, max_size=20, epsilon=1.0)
    p = random_potentials(prob, seed + 100)
    g = neg_gradients(p, prob)
    m, d = prob.m, prob.d_x

    def D(z):
        return dual_objective(Potentials(z[:m], z[m : m + m * d].reshape(m, d), z[m + m * d :]), prob)

    z = np.concatenate([p.f, p.G.ravel(), p.h])
    fd = central_gradient(D, z)
    analytic = np.concatenate([-prob.a * g.f, (-prob.a[:, None] * g.G).ravel(), -prob.b * g.h])
    assert np.abs(fd - analytic).max() <= 1e-5 * np.abs(analytic).max()


def test_coupling_examples():
    prob = random_problem(2, max_size=6)
    zero_cost = DiscreteProblem(prob.U, prob.a, prob.X, prob.Y, prob.b, 1.0, np.zeros_like(prob.C))
    np.testing.assert_allclose(coupling(Potentials.zeros(zero_cost), zero_cost).pi, np.outer(prob.a, prob.b), rtol=1e-14)
    one = DiscreteProblem.from_arrays([[0.0]], [[-1.0], [1.0]], [[0.0], [0.0]], 1.0)
    np.testing.assert_allclose(coupling(Potentials.zeros(one), one).pi.sum(), 1.0)
    two = two_atom_problem()
    np.testing.assert_allclose(coupling(Potentials.zeros(two), two).pi, [[0.5, 0.5 * math.exp(-0.5)]], rtol=1e-14)


def test_log_domain_stability():
    prob = random_problem(5, max_size=10)
    p = random_potentials(prob, 6)
    big = Potentials(p.f + 600.0, p.G, p.h + 90.0)
    assert math.isfinite(iota(big, prob))
    assert np.all(np.isfinite(coupling(big, prob).pi))


def test_residuals_of_product_coupling():
    prob = random_problem(8, max_size=12)
    res = residuals(Coupling(np.outer(prob.a, prob.b)), prob)
    assert res.row <= 1e-15 and res.col <= 1e-15 and res.mean_independence <= 1e-14


def test_residuals_uncentered_mean():
    prob = random_problem(9, max_size=12)
    mu = np.arange(1, prob.d_x + 1) * 0.3
    prob = with_raw_covariates(prob, prob.X + mu)
    res = residuals(Coupling(np.outer(prob.a, prob.b)), prob)
    assert res.mean_independence == pytest.approx(np.linalg.norm(mu), rel=1e-12)


def test_primal_objective_examples():
    prob = random_problem(10, max_size=8)
    pi = np.outer(prob.a, prob.b)
    assert primal_objective(Coupling(pi), prob) == pytest.approx(prob.a @ prob.C @ prob.b, rel=1e-13)
    zero = DiscreteProblem(prob.U, prob.a, prob.X, prob.Y, prob.b, 1.0, np.zeros_like(prob.C))
    assert abs(primal_objective(Coupling(pi), zero)) <= 1e-14


def test_primal_objective_rejects_mass_off_support():
    prob = DiscreteProblem.from_arrays([[0.0], [1.0]], [[-1.0], [1.0]], [[0.0], [1.0]], 1.0, a=[1.0, 0.0])
    pi = np.array([[0.25, 0.25], [0.25, 0.25]])
    with pytest.raises(ProblemError, match="support"):
        primal_objective(Coupling(pi), prob)


@pytest.mark.parametrize("seed", range(3))
def test_primal_at_least_dual_when_iota_is_one(seed):
    prob = random_problem(seed, max_size=10)
    p = random_potentials(prob, seed)
    p = Potentials(p.f - prob.epsilon * math.log(iota(p, prob)), p.G, p.h)
    assert primal_objective(coupling(p, prob), prob) >= dual_objective(p, prob) - 1e-12


def test_problem_validation():
    with pytest.raises(ProblemError, match="singular"):
        DiscreteProblem.from_arrays([[0.0]], [[1.0], [1.0]], [[0.0], [1.0]], 1.0)
    with pytest.raises(ProblemError, match="centered"):
        DiscreteProblem.from_arrays([[0.0]], [[0.0], [1.0]], [[0.0], [1.0]], 1.0, center=False)
    with pytest.raises(ProblemError, match="epsilon"):
        DiscreteProblem.from_arrays([[0.0]], [[-1.0], [1.0]], [[0.0], [1.0]], 0.0)
    with pytest.raises(ProblemError, match="nonnegative"):
        DiscreteProblem.from_arrays([[0.0]], [[-1.0], [1.0]], [[0.0], [1.0]], 1.0, b=[1.5, -0.5])


def test_problem_arrays_are_read_only():
    prob = two_atom_problem()
    with pytest.raises(ValueError):
        prob.C[0, 0] = 1.0


def test_normalization_keeps_dual_value():
    prob = random_problem(21, max_size=15)
    p = random_potentials(prob, 22)
    q = p.normalized(prob.a, prob.X)
    assert q.is_normalized(prob.a)
    assert dual_objective(q, prob) == pytest.approx(dual_objective(p, prob), abs=1e-12)
