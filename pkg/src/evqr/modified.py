"""Modified Sinkhorn: h then f half-steps, normalization, projected gradient step in g."""

from __future__ import annotations

import logging
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.special import logsumexp

from .bounds import (
    compute_bounds,
    default_eta,
    eta_guard,
    optimal_potential_bounds,
    problem_constants,
)
from .problem import DiscreteProblem, Potentials
from .projection import ProjectionConfig, Variant, project
from .trace import IterateTrace, SolverConfig, has_converged, make_row

log = logging.getLogger(__name__)


class ModifiedStep(NamedTuple):
    """One modified step.

    ``pre_projection`` is ``(f^{t+1}, G^t, h^{t+1})``: its coupling has row
    marginal exactly ``a``, which is where the conditional-moment estimators
    are evaluated. ``direction`` is the negative g-gradient there.
    """

    pre_projection: Potentials
    direction: np.ndarray
    result: Potentials


def _half_steps_log(p: Potentials, prob: DiscreteProblem):
    eps = prob.epsilon
    GX = p.G @ prob.X.T
    h_half = -eps * logsumexp((p.f[:, None] + GX - prob.C) / eps + prob.log_a[:, None], axis=0)
    S = (GX + h_half[None, :] - prob.C) / eps + prob.log_b[None, :]
    f_half = -eps * logsumexp(S, axis=1)
    shift = prob.a @ f_half
    f1, h1 = f_half - shift, h_half + shift
    # d_g = e^{f1/eps} sum_j b_j x_j e^{(<G,x_j> + h1_j - C_ij)/eps}
    S1 = (GX + h1[None, :] - prob.C) / eps + prob.log_b[None, :]
    row_max = S1.max(axis=1, keepdims=True)
    W = np.exp(S1 - row_max)
    d_g = np.exp(f1 / eps + row_max[:, 0])[:, None] * (W @ prob.X)
    return f1, h1, d_g


def _half_steps_naive(p: Potentials, prob: DiscreteProblem):
    # literal matrix transcription with plain exponentials; overflows on hard instances
    eps, a, b, X, C = prob.epsilon, prob.a, prob.b, prob.X, prob.C
    H = (p.f[:, None] + p.G @ X.T - C) / eps
    h_tilde = -eps * np.log(a @ np.exp(H))
    F = (p.G @ X.T + h_tilde[None, :] - C) / eps
    f_tilde = -eps * np.log(np.exp(F) @ b)
    shift = a @ f_tilde
    f1, h1 = f_tilde - shift, h_tilde + shift
    W = np.exp((p.G @ X.T + h1[None, :] - C) / eps) * b[None, :]
    d_g = np.exp(f1 / eps)[:, None] * (W @ X)
    return f1, h1, d_g


def modified_step_parts(
    p: Potentials,
    prob: DiscreteProblem,
    eta: float,
    pcfg: ProjectionConfig,
    naive_exp: bool = False,
) -> ModifiedStep:
    f1, h1, d_g = (_half_steps_naive if naive_exp else _half_steps_log)(p, prob)
    G_next = project(p.G - eta * d_g, prob.a, pcfg)
    return ModifiedStep(Potentials(f1, p.G, h1), d_g, Potentials(f1, G_next, h1))


def modified_step(
    p: Potentials,
    prob: DiscreteProblem,
    cfg: SolverConfig,
    pcfg: ProjectionConfig,
) -> Potentials:
    """One modified Sinkhorn step with the explicit ``cfg.eta``."""
    if isinstance(cfg.eta, str):
        raise ValueError("modified_step needs a numeric eta; resolve 'auto' first")
    return modified_step_parts(p, prob, cfg.eta, pcfg, cfg.naive_exp).result


def resolve_radius(prob: DiscreteProblem, cfg: SolverConfig) -> float:
    if cfg.radius == "auto":
        return optimal_potential_bounds(prob)[1]
    return float(cfg.radius)


def resolve_eta(prob: DiscreteProblem, cfg: SolverConfig, radius: float) -> tuple[float, bool]:
    """Numeric step size and whether it satisfies the monotonicity guard.

    ``"auto"`` means ``eta = epsilon``; a warning is logged when that breaks the guard.
    """
    guarded, violated = default_eta(prob, radius)
    if cfg.eta == "auto":
        if violated:
            log.warning(
                "eta = epsilon = %g exceeds the step-size guard (guarded value %.3e); "
                "monotonicity is not guaranteed",
                prob.epsilon,
                guarded,
            )
        return prob.epsilon, not violated
    eta = float(cfg.eta)
    k = problem_constants(prob)
    return eta, eta < eta_guard(k.M_x, radius, prob.epsilon)


def run_modified(
    prob: DiscreteProblem,
    cfg: Optional[SolverConfig] = None,
    pcfg: Optional[ProjectionConfig] = None,
    init: Optional[Potentials] = None,
    callback: Optional[Callable[[int, ModifiedStep], None]] = None,
) -> tuple[Potentials, IterateTrace]:
    """Iterate modified steps until convergence or ``cfg.max_iters``.

    ``callback(t, step)`` sees every step, including its pre-projection triple.
    """
    cfg = cfg or SolverConfig()
    radius = pcfg.radius if pcfg is not None else resolve_radius(prob, cfg)
    pcfg = pcfg or ProjectionConfig(radius=radius)
    eta, guard_ok = resolve_eta(prob, cfg, radius)

    p = init if init is not None else Potentials.zeros(prob)
    if not p.is_normalized(prob.a, 1e-8):
        raise ValueError("initial potentials are not normalized")
    if np.linalg.norm(p.G, axis=1).max(initial=0.0) > radius * (1 + 1e-12):
        raise ValueError("initial G has rows outside the projection radius")

    bounds = compute_bounds(prob, init=p, radius=radius, eta=eta)
    trace = IterateTrace(
        header={
            "mode": "modified",
            "m": prob.m,
            "n": prob.n,
            "d_x": prob.d_x,
            "d_y": prob.d_y,
            "epsilon": prob.epsilon,
            "eta": eta,
            "radius": radius,
            "projection": Variant(pcfg.variant).value,
            "naive_exp": cfg.naive_exp,
            "guard_ok": guard_ok,
            "tol": cfg.tol,
            "max_iters": cfg.max_iters,
            "bounds": bounds.to_dict(),
        }
    )
    prev = make_row(0, p, prob)
    trace.rows.append(prev)
    for t in range(1, cfg.max_iters + 1):
        step = modified_step_parts(p, prob, eta, pcfg, cfg.naive_exp)
        if callback:
            callback(t - 1, step)
        disp = float(np.sqrt(prob.a @ ((step.result.G - p.G) ** 2).sum(1)))
        p = step.result
        row = make_row(t, p, prob, g_displacement=disp)
        trace.rows.append(row)
        if has_converged(prev, row, cfg.tol, prob.epsilon):
            trace.converged = True
            break
        prev = row
    trace.header["converged"] = trace.converged
    trace.header["iterations"] = trace.rows[-1].t
    return p, trace
