"""Vanilla Sinkhorn for entropic VQR: exact g-solve, then f, then h, then normalize."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.special import logsumexp

from .bounds import compute_bounds
from .problem import DiscreteProblem, Potentials, tilted_rows
from .trace import IterateTrace, SolverConfig, has_converged, make_row

log = logging.getLogger(__name__)


class NewtonError(RuntimeError):
    """The implicit g-equation was not solved to tolerance."""

    def __init__(self, msg: str, rows=None, residual: float = float("nan")):
        super().__init__(msg)
        self.rows = rows
        self.residual = residual


@dataclass(frozen=True)
class NewtonConfig:
    """Damped Newton settings for the per-atom implicit equation.

    ``ridge`` is relative: the Hessian of row ``i`` gets ``ridge * tr(H_i) * I``
    added when its smallest eigenvalue falls below that level. Steps are halved
    until the convex objective decreases; where it is flat to roundoff a
    decrease of the residual norm is accepted instead.
    """

    grad_tol: float = 1e-10
    max_iters: int = 50
    ridge: float = 1e-12
    backtrack: float = 0.5
    max_backtracks: int = 60
    min_iters: int = 1

    def __post_init__(self):
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack must lie in (0, 1)")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")


def _tilted_moments(base: np.ndarray, G: np.ndarray, X: np.ndarray, epsilon: float):
    """Row log-masses, tilted means and tilted covariances of ``x``.

    ``base`` holds ``(h_j - C_ij)/epsilon + log b_j`` for the rows in play.
    """
    S = base + (G @ X.T) / epsilon
    lse = logsumexp(S, axis=1)
    W = np.exp(S - lse[:, None])
    mean = W @ X
    second = np.einsum("ij,jk,jl->ikl", W, X, X)
    cov = second - mean[:, :, None] * mean[:, None, :]
    return lse, mean, cov


def _solve_rows(base, G0, X, epsilon, cfg: NewtonConfig):
    G = np.array(G0, dtype=float, copy=True)
    m, d = G.shape
    obj, grad, cov = _tilted_moments(base, G, X, epsilon)
    res = np.linalg.norm(grad, axis=1)
    # warm starts already inside grad_tol still take min_iters polishing steps
    active = res > (0.0 if cfg.min_iters > 0 else cfg.grad_tol)
    eye = np.eye(d)
    # per-row trust radius: when the tilt collapses onto one atom the Hessian
    # underflows and raw Newton steps are astronomically long
    trust = np.maximum(1.0, np.linalg.norm(G, axis=1))
    for it in range(max(cfg.max_iters, cfg.min_iters)):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        H = cov[idx] / epsilon
        w, V = np.linalg.eigh(H)
        tr = w.sum(axis=1)
        # floor the spectrum at ridge * tr; cancellation can even make it negative
        floor = cfg.ridge * np.maximum(tr, 0.0) + np.finfo(float).tiny
        w = np.maximum(w, floor[:, None])
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            coef = np.einsum("ikl,ik->il", V, grad[idx]) / w
            step = -np.einsum("ikl,il->ik", V, coef)
            length = np.linalg.norm(step, axis=1)
        bad = ~np.isfinite(length)
        step[bad] = -grad[idx][bad]
        length[bad] = np.linalg.norm(step[bad], axis=1)
        capped = length > trust[idx]
        step[capped] *= (trust[idx][capped] / length[capped])[:, None]

        scale = np.ones(idx.size)
        pending = np.ones(idx.size, dtype=bool)
        cand_grad = grad[idx].copy()
        cand_cov = cov[idx].copy()
        cand_G = G[idx].copy()
        cand_obj = obj[idx].copy()
        for _ in range(cfg.max_backtracks):
            p = np.flatnonzero(pending)
            if p.size == 0:
                break
            trial = G[idx[p]] + scale[p, None] * step[p]
            o_t, g_t, c_t = _tilted_moments(base[idx[p]], trial, X, epsilon)
            o_cur = obj[idx[p]]
            # descent on the convex objective; once it is flat to roundoff, on the residual
            flat = o_t <= o_cur + 1e-15 * (1.0 + np.abs(o_cur))
            ok = (o_t < o_cur) | (flat & (np.linalg.norm(g_t, axis=1) < res[idx[p]]))
            acc = p[ok]
            cand_G[acc], cand_grad[acc], cand_cov[acc] = trial[ok], g_t[ok], c_t[ok]
            cand_obj[acc] = o_t[ok]
            pending[acc] = False
            scale[p[~ok]] *= cfg.backtrack
        moved = ~pending
        # grow the trust radius after a full capped step, shrink it after backtracking
        grow = moved & capped & (scale == 1.0)
        trust[idx[grow]] *= 2.0
        shrink = moved & (scale < 1.0)
        trust[idx[shrink]] = np.maximum(scale[shrink] * np.linalg.norm(step[shrink], axis=1), 1e-12)
        rows = idx[moved]
        G[rows], grad[rows], cov[rows] = cand_G[moved], cand_grad[moved], cand_cov[moved]
        obj[rows] = cand_obj[moved]
        res[rows] = np.linalg.norm(grad[rows], axis=1)
        # rows where no step reduced the residual are stuck at machine precision
        stuck = idx[~moved]
        active[:] = res > (cfg.grad_tol if it + 1 >= cfg.min_iters else 0.0)
        active[stuck] = False
    return G, res


def solve_g_implicit(
    i: int, h, prob: DiscreteProblem, init=None, cfg: Optional[NewtonConfig] = None
) -> np.ndarray:
    """Solve the mean-independence equation for reference atom ``i``.

    Finds ``g`` with ``sum_j b_j x_j exp((<g, x_j> + h_j - C_ij)/eps) = 0`` by damped
    Newton on the strictly convex ``g -> eps * log sum_j b_j exp(...)``.
    """
    cfg = cfg or NewtonConfig()
    h = np.asarray(h, dtype=float)
    init = np.zeros(prob.d_x) if init is None else np.asarray(init, dtype=float)
    base = ((h - prob.C[i]) / prob.epsilon + prob.log_b)[None, :]
    G, res = _solve_rows(base, init[None, :], prob.X, prob.epsilon, cfg)
    if res[0] > cfg.grad_tol:
        raise NewtonError(
            f"Newton did not reach grad_tol={cfg.grad_tol:.1e} at row {i} "
            f"(residual {res[0]:.3e})",
            rows=[i],
            residual=float(res[0]),
        )
    return G[0]


def solve_g_all(h, prob: DiscreteProblem, init, cfg: Optional[NewtonConfig] = None) -> np.ndarray:
    """Row-batched :func:`solve_g_implicit` for every reference atom."""
    cfg = cfg or NewtonConfig()
    base = (h[None, :] - prob.C) / prob.epsilon + prob.log_b[None, :]
    G, res = _solve_rows(base, init, prob.X, prob.epsilon, cfg)
    bad = np.flatnonzero(res > cfg.grad_tol)
    if bad.size:
        raise NewtonError(
            f"Newton did not reach grad_tol={cfg.grad_tol:.1e} at rows {bad[:10].tolist()} "
            f"(worst residual {res[bad].max():.3e})",
            rows=bad.tolist(),
            residual=float(res[bad].max()),
        )
    return G


class VanillaParts(NamedTuple):
    """Un-normalized intermediates of one vanilla step."""

    g_tilde: np.ndarray
    f_tilde: np.ndarray
    h_tilde: np.ndarray
    result: Potentials


def vanilla_step_parts(p: Potentials, prob: DiscreteProblem, ncfg: Optional[NewtonConfig] = None) -> VanillaParts:
    eps = prob.epsilon
    g_t = solve_g_all(p.h, prob, p.G, ncfg)
    E = (g_t @ prob.X.T + p.h[None, :] - prob.C) / eps
    row_lse, _ = tilted_rows(E, prob.log_b)
    f_t = -eps * row_lse
    E_col = (f_t[:, None] + g_t @ prob.X.T - prob.C) / eps
    h_t = -eps * logsumexp(E_col + prob.log_a[:, None], axis=0)
    out = Potentials(f_t, g_t, h_t).normalized(prob.a, prob.X)
    return VanillaParts(g_t, f_t, h_t, out)


def vanilla_step(p: Potentials, prob: DiscreteProblem, ncfg: Optional[NewtonConfig] = None) -> Potentials:
    """One vanilla Sinkhorn step ``g -> f -> h`` followed by normalization."""
    return vanilla_step_parts(p, prob, ncfg).result


def run_vanilla(
    prob: DiscreteProblem,
    cfg: Optional[SolverConfig] = None,
    ncfg: Optional[NewtonConfig] = None,
    init: Optional[Potentials] = None,
    callback: Optional[Callable[[int, Potentials], None]] = None,
) -> tuple[Potentials, IterateTrace]:
    """Iterate :func:`vanilla_step` until convergence or ``cfg.max_iters``.

    Row ``t`` of the trace describes the iterate after ``t`` steps.
    """
    cfg = cfg or SolverConfig(mode="vanilla")
    ncfg = ncfg or NewtonConfig()
    p = init if init is not None else Potentials.zeros(prob)
    bounds = compute_bounds(prob, init=p)
    trace = IterateTrace(
        header={
            "mode": "vanilla",
            "m": prob.m,
            "n": prob.n,
            "d_x": prob.d_x,
            "d_y": prob.d_y,
            "epsilon": prob.epsilon,
            "tol": cfg.tol,
            "max_iters": cfg.max_iters,
            "bounds": bounds.to_dict(),
        }
    )
    prev = make_row(0, p, prob)
    trace.rows.append(prev)
    if callback:
        callback(0, p)
    for t in range(1, cfg.max_iters + 1):
        p = vanilla_step(p, prob, ncfg)
        row = make_row(t, p, prob)
        trace.rows.append(row)
        if callback:
            callback(t, p)
        if has_converged(prev, row, cfg.tol, prob.epsilon):
            trace.converged = True
            break
        prev = row
    trace.header["converged"] = trace.converged
    trace.header["iterations"] = trace.rows[-1].t
    log.debug("vanilla finished after %d steps (converged=%s)", trace.rows[-1].t, trace.converged)
    return p, trace
