"""Projection of a vector potential onto mean-zero, norm-bounded sets.

The joint-ball set is ``{G : ||G_i|| <= K for all i, sum_i a_i G_i = 0}``.
Its L2(a) projection clips ``G_i - v*`` radially at ``K``, where ``v*``
minimizes the a-weighted Huber loss ``sum_i a_i phi(G_i - v)``. ``v*`` is
found by iterative reweighting.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq


class ProjectionWarning(RuntimeWarning):
    """Iterative reweighting hit its cap or the Huber loss increased."""


class Variant(str, enum.Enum):
    JOINT_BALL = "joint-ball"
    COORDINATEWISE_BOX = "coordinatewise-box"


@dataclass(frozen=True)
class ProjectionConfig:
    radius: float
    tol: float = 1e-12
    max_iters: int = 200
    variant: Variant = Variant.JOINT_BALL
    post_tol: float = 1e-10

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        object.__setattr__(self, "variant", Variant(self.variant))


def huber(x, delta: float) -> float:
    """Huber function: quadratic inside the ``delta``-ball, linear outside."""
    r = float(np.linalg.norm(np.atleast_1d(x)))
    if r <= delta:
        return 0.5 * r * r
    return delta * r - 0.5 * delta * delta


def huber_loss(G: np.ndarray, a: np.ndarray, v: np.ndarray, delta: float) -> float:
    """``sum_i a_i phi(G_i - v)``, vectorized."""
    r = np.linalg.norm(G - v, axis=1)
    phi = np.where(r <= delta, 0.5 * r * r, delta * r - 0.5 * delta * delta)
    return float(a @ phi)


def _clip_weights(r: np.ndarray, radius: float) -> np.ndarray:
    # r == 0 is a removable singularity of min(1, K / r); its limit is 1.
    w = np.ones_like(r)
    far = r > radius
    w[far] = radius / r[far]
    return w


def clip_rows(G: np.ndarray, v: np.ndarray, radius: float) -> np.ndarray:
    D = G - v
    return _clip_weights(np.linalg.norm(D, axis=1), radius)[:, None] * D


def huber_shift(G: np.ndarray, a: np.ndarray, cfg: ProjectionConfig):
    """Minimize the weighted Huber loss by iterative reweighting.

    Returns:
        ``(v, iterations, converged)``.
    """
    live = a > 0
    G_live, a_live = G[live], a[live]
    v = a_live @ G_live
    loss = huber_loss(G_live, a_live, v, cfg.radius)
    for k in range(1, cfg.max_iters + 1):
        w = a_live * _clip_weights(np.linalg.norm(G_live - v, axis=1), cfg.radius)
        v_new = (w @ G_live) / w.sum()
        new_loss = huber_loss(G_live, a_live, v_new, cfg.radius)
        if new_loss > loss * (1 + 1e-14) + 1e-300:
            warnings.warn(
                f"Huber loss increased at reweighting step {k}: {loss!r} -> {new_loss!r}",
                ProjectionWarning,
                stacklevel=3,
            )
        step = np.linalg.norm(v_new - v)
        v, loss = v_new, new_loss
        if step <= cfg.tol * (1.0 + np.linalg.norm(v)):
            return v, k, True
    # reweighting is sublinear when almost every row is clipped; finish with Newton
    v, ok = _newton_polish(G_live, a_live, v, cfg)
    return v, cfg.max_iters, ok


def _huber_grad_hess(G, a, v, radius):
    D = G - v
    r = np.linalg.norm(D, axis=1)
    w = _clip_weights(r, radius)
    grad = -(a * w) @ D
    d = G.shape[1]
    H = np.zeros((d, d))
    inside = r <= radius
    H += a[inside].sum() * np.eye(d)
    out = ~inside
    if out.any():
        U = D[out] / r[out, None]
        c = a[out] * radius / r[out]
        H += c.sum() * np.eye(d) - np.einsum("i,ij,ik->jk", c, U, U)
    return grad, H


def _newton_polish(G, a, v, cfg: ProjectionConfig, max_iters=100):
    """Damped Newton on the weighted Huber loss; returns ``(v, converged)``."""
    gtol = 0.01 * cfg.post_tol
    loss = huber_loss(G, a, v, cfg.radius)
    for _ in range(max_iters):
        grad, H = _huber_grad_hess(G, a, v, cfg.radius)
        if np.linalg.norm(grad) <= gtol:
            return v, True
        H = H + 1e-12 * (1.0 + np.trace(H)) * np.eye(len(v))
        step = -np.linalg.solve(H, grad)
        t = 1.0
        while t > 1e-20:
            cand = v + t * step
            new_loss = huber_loss(G, a, cand, cfg.radius)
            if new_loss <= loss:
                break
            t *= 0.5
        else:
            break
        v, loss = cand, new_loss
    grad, _ = _huber_grad_hess(G, a, v, cfg.radius)
    return v, bool(np.linalg.norm(grad) <= gtol)


def project(G, a, cfg: ProjectionConfig) -> np.ndarray:
    """L2(a) projection of ``G`` (shape ``(m, d_x)``) onto the configured set."""
    G = np.asarray(G, dtype=float)
    a = np.asarray(a, dtype=float)
    if cfg.variant is Variant.COORDINATEWISE_BOX:
        return project_coordinatewise(G, a, cfg)
    v, iters, converged = huber_shift(G, a, cfg)
    out = clip_rows(G, v, cfg.radius)
    mean_res = float(np.linalg.norm(a @ out))
    if not converged or mean_res > cfg.post_tol:
        warnings.warn(
            f"projection stopped after {iters} reweighting steps "
            f"(converged={converged}, mean residual {mean_res:.3e})",
            ProjectionWarning,
            stacklevel=2,
        )
    return out


def _clipped_mean(v: float, col: np.ndarray, a: np.ndarray, radius: float) -> float:
    return float(a @ np.clip(col - v, -radius, radius))


def project_coordinatewise(G, a, cfg: ProjectionConfig) -> np.ndarray:
    """Projection onto the per-coordinate box set.

    Each column is shifted by the root of its (monotone, piecewise linear)
    clipped weighted mean and then clipped to ``[-K, K]``.
    """
    G = np.asarray(G, dtype=float)
    a = np.asarray(a, dtype=float)
    K = cfg.radius
    out = np.empty_like(G)
    for j in range(G.shape[1]):
        col = G[:, j]
        v0 = a @ col
        if np.abs(col - v0).max() <= K:
            # no clipping: the weighted mean is the exact shift
            out[:, j] = col - v0
            continue
        lo, hi = col.min() - K, col.max() + K
        f_lo, f_hi = _clipped_mean(lo, col, a, K), _clipped_mean(hi, col, a, K)
        assert f_lo >= 0 >= f_hi, "bisection bracket does not straddle zero"
        if f_lo == 0:
            v = lo
        elif f_hi == 0:
            v = hi
        else:
            v = brentq(_clipped_mean, lo, hi, args=(col, a, K), xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        out[:, j] = np.clip(col - v, -K, K)
    return out
