"""Conditional-moment estimators of the quantile-regression coefficients.

For a triple whose coupling has row marginal ``a`` (the pre-projection triple of
a modified step), the conditional law of (x, y) given ``u_i`` has weights
``w_ij ∝ b_j exp(E_ij)``. The intercept estimate is ``E[y | u_i]`` and the slope
estimate is ``E[x x^T | u_i]^{-1} E[x y^T | u_i]``.
"""

from __future__ import annotations

import warnings
from typing import NamedTuple, Optional

import numpy as np

from .problem import DiscreteProblem, Potentials, exponent, tilted_rows


class DegenerateTiltWarning(RuntimeWarning):
    pass


def conditional_weights(p: Potentials, prob: DiscreteProblem) -> np.ndarray:
    """Row-normalized weights ``w_ij``; every row sums to one."""
    _, W = tilted_rows(exponent(p, prob), prob.log_b)
    return W


def conditional_moments(p: Potentials, prob: DiscreteProblem, i: int):
    """``(E[y | u_i], E[x x^T | u_i], E[x y^T | u_i])`` under the tilted weights."""
    E = exponent(p, prob)[i : i + 1]
    _, W = tilted_rows(E, prob.log_b)
    w = W[0]
    assert w.sum() > 0, "conditional weights vanish"
    X, Y = prob.X, prob.Y
    return w @ Y, (X * w[:, None]).T @ X, (X * w[:, None]).T @ Y


class BEstimates(NamedTuple):
    B0: np.ndarray  # (m, d_y)
    B1: np.ndarray  # (m, d_x, d_y)
    degenerate: np.ndarray  # (m,) bool, rows whose conditional second moment is near singular


def b_estimators(p: Potentials, prob: DiscreteProblem, lambda_tol: Optional[float] = None) -> BEstimates:
    """Per-row intercept and slope estimates.

    Rows whose conditional second moment of ``x`` has an eigenvalue below
    ``lambda_tol`` (default ``1e-10 * tr(Sigma_X)``) are flagged and get NaN slopes.
    """
    W = conditional_weights(p, prob)
    X, Y = prob.X, prob.Y
    B0 = W @ Y
    Sxx = np.einsum("ij,jk,jl->ikl", W, X, X)
    Sxy = np.einsum("ij,jk,jl->ikl", W, X, Y)
    if lambda_tol is None:
        lambda_tol = 1e-10 * float(np.trace(prob.sigma_x))
    evals, evecs = np.linalg.eigh(Sxx)
    bad = evals[:, 0] < lambda_tol
    inv = np.einsum("ikl,il,iml->ikm", evecs, 1.0 / np.where(evals > 0, evals, np.inf), evecs)
    B1 = inv @ Sxy
    if bad.any():
        B1[bad] = np.nan
        warnings.warn(
            f"{int(bad.sum())} rows have a near-singular conditional second moment",
            DegenerateTiltWarning,
            stacklevel=2,
        )
    return BEstimates(B0, B1, bad)


def l2_op_distance(B1: np.ndarray, B1_other: np.ndarray, a: np.ndarray) -> float:
    """``sqrt(sum_i a_i ||B1_i - B1'_i||_op^2)``."""
    ops = np.linalg.norm(B1 - B1_other, ord=2, axis=(1, 2))
    return float(np.sqrt(a @ ops**2))


def l2_distance(B0: np.ndarray, B0_other: np.ndarray, a: np.ndarray) -> float:
    return float(np.sqrt(a @ ((B0 - B0_other) ** 2).sum(1)))
