import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evqr.bounds import compute_bounds, default_eta, problem_constants
from evqr.modified import modified_step, modified_step_parts, resolve_eta, run_modified
from evqr.problem import DiscreteProblem, Potentials, coupling, dual_objective, neg_gradients
from evqr.projection import ProjectionConfig
from evqr.trace import SolverConfig
from evqr.vanilla import run_vanilla
from instances import random_potentials, random_problem, tiny_problem, two_atom_problem
from oracles import central_gradient, modified_step_scalar


def scalar_lists(prob):
    return [float(v) for v in prob.U[:, 0]], list(prob.a), [float(v) for v in prob.X[:, 0]], [
        float(v) for v in prob.Y[:, 0]
    ], list(prob.b)


def test_two_atom_step_matches_transcription():
    prob = two_atom_problem()
    step = modified_step_parts(Potentials.zeros(prob), prob, 1.0, ProjectionConfig(radius=10.0))
    u, a, x, y, b = scalar_lists(prob)
    f1, g_pre, h1, d_g = modified_step_scalar([0.0], [0.0], [0.0, 0.0], u, a, x, y, b, 1.0, 1.0)
    np.testing.assert_allclose(step.pre_projection.f, f1, atol=1e-14)
    np.testing.assert_allclose(step.pre_projection.h, h1, atol=1e-14)
    np.testing.assert_allclose(step.direction[:, 0], d_g, atol=1e-14)
    # with a single reference atom the projection maps onto the mean-zero set {0}
    np.testing.assert_allclose(step.result.G, 0.0, atol=1e-15)


@pytest.mark.parametrize("seed", range(3))
def test_step_matches_transcription_on_scalar_instances(seed):
    rng = np.random.default_rng(seed)
    m, n = 4, 6
    prob = DiscreteProblem.from_arrays(
        rng.normal(size=(m, 1)), rng.normal(size=(n, 1)), rng.normal(size=(n, 1)), 0.8,
        a=rng.dirichlet(np.ones(m)), b=rng.dirichlet(np.ones(n)),
    )
    p = random_potentials(prob, seed, scale=0.3).normalized(prob.a, prob.X)
    u, a, x, y, b = scalar_lists(prob)
    f1, g_pre, h1, d_g = modified_step_scalar(list(p.f), list(p.G[:, 0]), list(p.h), u, a, x, y, b, 0.8, 0.05)
    step = modified_step_parts(p, prob, 0.05, ProjectionConfig(radius=100.0))
    np.testing.assert_allclose(step.pre_projection.f, f1, atol=1e-12)
    np.testing.assert_allclose(step.pre_projection.h, h1, atol=1e-12)
    np.testing.assert_allclose(step.direction[:, 0], d_g, atol=1e-12)
    # radius 100 never binds, so the projection only removes the weighted mean
    g_pre = np.array(g_pre)
    np.testing.assert_allclose(step.result.G[:, 0], g_pre - prob.a @ g_pre, atol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_naive_mode_agrees_with_log_domain(seed):
    prob = random_problem(seed, max_size=15)
    p = random_potentials(prob, seed, scale=0.2).normalized(prob.a, prob.X)
    pcfg = ProjectionConfig(radius=50.0)
    log_step = modified_step_parts(p, prob, 0.1, pcfg)
    naive = modified_step_parts(p, prob, 0.1, pcfg, naive_exp=True)
    np.testing.assert_allclose(naive.result.f, log_step.result.f, atol=1e-12)
    np.testing.assert_allclose(naive.result.G, log_step.result.G, atol=1e-12)
    np.testing.assert_allclose(naive.result.h, log_step.result.h, atol=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_row_marginal_and_direction(seed):
    prob = random_problem(seed, max_size=20)
    p = random_potentials(prob, seed, scale=0.3).normalized(prob.a, prob.X)
    step = modified_step_parts(p, prob, 0.01, ProjectionConfig(radius=50.0))
    pi = coupling(step.pre_projection, prob).pi
    assert np.abs(pi.sum(1) / prob.a - 1).max() <= 1e-10
    np.testing.assert_allclose(step.direction, neg_gradients(step.pre_projection, prob).G, rtol=1e-12, atol=1e-14)
    m, d = prob.m, prob.d_x
    pre = step.pre_projection

    def D(z):
        return dual_objective(Potentials(pre.f, z.reshape(m, d), pre.h), prob)

    fd = central_gradient(D, pre.G.ravel()).reshape(m, d)
    analytic = -prob.a[:, None] * step.direction
    assert np.abs(fd - analytic).max() <= 1e-5 * np.abs(analytic).max()


def test_fixed_point_at_optimum():
    prob = tiny_problem(1)
    p, _ = run_vanilla(prob, SolverConfig(mode="vanilla", tol=1e-12, max_iters=5000))
    radius = 2 * np.linalg.norm(p.G, axis=1).max()
    q = modified_step(p, prob, SolverConfig(eta=prob.epsilon), ProjectionConfig(radius=radius))
    assert max(np.abs(q.f - p.f).max(), np.abs(q.G - p.G).max(), np.abs(q.h - p.h).max()) <= 1e-8


def test_default_eta_examples():
    prob = two_atom_problem()
    assert problem_constants(prob).M_x == 1.0
    eta, violated = default_eta(prob, 0.0)
    assert eta == pytest.approx(0.9) and violated
    eta, violated = default_eta(prob.with_epsilon(2.0), 1.0)
    assert eta == pytest.approx(0.6621829941, rel=1e-9) and violated
    assert eta == pytest.approx(0.9 * 2 / np.e, rel=1e-14)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), radius=st.floats(0.01, 20.0))
def test_guard_flag_always_raised_for_eta_eps(seed, radius):
    prob = random_problem(seed, max_size=10)
    assert default_eta(prob, radius)[1]


def test_auto_eta_logs_warning(caplog):
    prob = tiny_problem(0)
    with caplog.at_level(logging.WARNING, logger="evqr.modified"):
        eta, ok = resolve_eta(prob, SolverConfig(), 1.0)
    assert eta == prob.epsilon and not ok
    assert "guard" in caplog.text


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), eps=st.sampled_from([0.5, 1.0, 2.0]))
def test_guarded_run_monotone_contained_and_bounded(seed, eps):
    prob = random_problem(seed, max_size=15, epsilon=eps)
    radius = 1.0
    eta, _ = default_eta(prob, radius)
    p, trace = run_modified(prob, SolverConfig(eta=eta, max_iters=15), ProjectionConfig(radius=radius))
    assert trace.header["guard_ok"]
    D = trace.duals
    assert np.all(np.diff(D) >= -1e-10 * (1 + np.abs(D[1:])))
    assert trace.column("g_sup").max() <= radius + 1e-12
    assert np.linalg.norm(prob.a @ p.G) <= 1e-8
    b = compute_bounds(prob, radius=radius, eta=eta)
    assert trace.column("f_sup").max() <= b.K_hat_f
    assert trace.column("h_sup").max() <= b.K_hat_h


@pytest.mark.parametrize("seed", range(3))
def test_agrees_with_vanilla(seed):
    prob = tiny_problem(seed)
    M_x = problem_constants(prob).M_x
    pv, tv = run_vanilla(prob, SolverConfig(mode="vanilla", tol=1e-12, max_iters=5000))
    pm, tm = run_modified(prob, SolverConfig(eta=prob.epsilon / M_x**2, tol=1e-12, max_iters=20000))
    assert tv.converged and tm.converged
    assert abs(tv.rows[-1].dual - tm.rows[-1].dual) <= 1e-8
    assert pv.h_distance(pm, prob.a, prob.b) <= 1e-6


def test_rejects_unnormalized_or_outside_init():
    prob = tiny_problem(0)
    p = random_potentials(prob, 0)
    with pytest.raises(ValueError, match="normalized"):
        run_modified(prob, SolverConfig(eta=0.1), ProjectionConfig(radius=1.0), init=p)
    q = Potentials(np.zeros(prob.m), np.zeros((prob.m, prob.d_x)), np.zeros(prob.n))
    q.G[0, 0], q.G[1, 0] = 50.0 * prob.a[1], -50.0 * prob.a[0]
    with pytest.raises(ValueError, match="radius"):
        run_modified(prob, SolverConfig(eta=0.1), ProjectionConfig(radius=1.0), init=q)


def test_step_requires_numeric_eta():
    prob = tiny_problem(0)
    with pytest.raises(ValueError, match="numeric"):
        modified_step(Potentials.zeros(prob), prob, SolverConfig(), ProjectionConfig(radius=1.0))


def test_trace_header_and_displacement():
    prob = tiny_problem(3)
    _, trace = run_modified(prob, SolverConfig(eta=0.05, max_iters=5, tol=1e-14), ProjectionConfig(radius=2.0))
    h = trace.header
    assert h["eta"] == 0.05 and h["radius"] == 2.0 and h["projection"] == "joint-ball"
    assert trace.rows[0].g_displacement is None
    assert all(r.g_displacement >= 0 for r in trace.rows[1:])
