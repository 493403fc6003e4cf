"""Discrete entropic VQR problem, dual objective, gradients and coupling.

Everything here works on the exponent matrix

    E_ij = (f_i + <G_i, x_j> + h_j - C_ij) / epsilon

and reduces it with max-shifted log-sum-exp, so no intermediate ``exp`` can
overflow as long as the final quantity itself is representable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import logsumexp

# Weights below this are treated as exact zeros in residual denominators.
WEIGHT_FLOOR = 1e-15


class ProblemError(ValueError):
    """Raised for malformed or degenerate problem data."""


def compute_cost_matrix(U, Y):
    """Squared-Euclidean half cost ``C_ij = ||u_i - y_j||^2 / 2``.

    Args:
        U: Reference atoms, shape ``(m, d_y)``.
        Y: Response atoms, shape ``(n, d_y)``.

    Returns:
        Cost matrix, shape ``(m, n)``.
    """
    U = np.atleast_2d(np.asarray(U, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if U.shape[1] != Y.shape[1]:
        raise ProblemError(
            f"dimension mismatch: U has d_y={U.shape[1]}, Y has d_y={Y.shape[1]}"
        )
    diff = U[:, None, :] - Y[None, :, :]
    return 0.5 * np.einsum("ijk,ijk->ij", diff, diff)


class CostSummary(NamedTuple):
    c_inf: float
    L_c: float
    diam_U: float


def _diameter(U: np.ndarray) -> float:
    m, d = U.shape
    if m < 2:
        return 0.0
    if d == 1:
        return float(U.max() - U.min())
    pts = U
    if m > d + 1:
        from scipy.spatial import ConvexHull, QhullError

        try:
            pts = U[ConvexHull(U).vertices]
        except QhullError:
            pts = U
    best = 0.0
    # chunked pairwise scan keeps memory at O(chunk * m)
    chunk = max(1, 2_000_000 // max(len(pts), 1))
    for start in range(0, len(pts), chunk):
        block = pts[start : start + chunk]
        d2 = ((block[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
        best = max(best, float(d2.max()))
    return float(np.sqrt(best))


def cost_summary(U, Y, C=None) -> CostSummary:
    """Scalar cost features used by the bound calculators."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if C is None:
        C = compute_cost_matrix(U, Y)
    L_c = float(np.linalg.norm(Y, axis=1).max() + np.linalg.norm(U, axis=1).max())
    return CostSummary(float(C.max()), L_c, _diameter(U))


def _as_weights(w, size: int, name: str) -> np.ndarray:
    if w is None:
        return np.full(size, 1.0 / size)
    w = np.asarray(w, dtype=float).ravel()
    if w.shape != (size,):
        raise ProblemError(f"{name} has length {w.size}, expected {size}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ProblemError(f"{name} must be finite and nonnegative")
    total = w.sum()
    if total <= 0:
        raise ProblemError(f"{name} sums to zero")
    return w / total


@dataclass(frozen=True, eq=False)
class DiscreteProblem:
    """Discrete reference measure ``mu`` and joint measure ``nu`` of (X, Y).

    Construct with :meth:`from_arrays`, which normalizes weights, centers the
    covariates under ``b`` and builds the cost matrix. The plain constructor
    only validates.

    Attributes:
        U: Reference atoms, shape ``(m, d_y)``.
        a: Reference weights, shape ``(m,)``.
        X: Covariate atoms, shape ``(n, d_x)``.
        Y: Response atoms, shape ``(n, d_y)``.
        b: Joint weights, shape ``(n,)``.
        epsilon: Entropic regularization.
        C: Cost matrix, shape ``(m, n)``.
    """

    U: np.ndarray
    a: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    b: np.ndarray
    epsilon: float
    C: np.ndarray
    lambda_tol: Optional[float] = None

    def __post_init__(self):
        for name in ("U", "a", "X", "Y", "b", "C"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)):
                raise ProblemError(f"{name} contains non-finite values")
            arr.setflags(write=False)
        m, n = self.C.shape
        if self.U.shape[0] != m or self.a.shape != (m,):
            raise ProblemError("U, a and C disagree on m")
        if self.X.shape[0] != n or self.Y.shape[0] != n or self.b.shape != (n,):
            raise ProblemError("X, Y, b and C disagree on n")
        if not self.epsilon > 0:
            raise ProblemError(f"epsilon must be positive, got {self.epsilon}")
        for name, w in (("a", self.a), ("b", self.b)):
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ProblemError(f"{name} is not a probability vector")
        mean_x = self.b @ self.X
        scale = 1.0 + float(np.abs(self.X).max(initial=0.0))
        if np.linalg.norm(mean_x) > 1e-12 * scale:
            raise ProblemError(f"covariates are not centered under b (mean {mean_x})")
        eig = np.linalg.eigvalsh(self.sigma_x)
        tol = self.lambda_tol
        if tol is None:
            tol = 1e-10 * float(np.trace(self.sigma_x))
        if eig[0] <= max(tol, 0.0) or eig[0] <= 0:
            raise ProblemError(
                f"covariate second moment is singular (smallest eigenvalue {eig[0]:.3e})"
            )

    @classmethod
    def from_arrays(
        cls, U, X, Y, epsilon, a=None, b=None, center=True, lambda_tol=None
    ) -> "DiscreteProblem":
        """Build a problem, normalizing weights and centering ``X`` under ``b``."""
        U = np.atleast_2d(np.array(U, dtype=float))
        X = np.array(X, dtype=float)
        Y = np.array(Y, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.shape[0] != Y.shape[0]:
            raise ProblemError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
        a = _as_weights(a, U.shape[0], "a")
        b = _as_weights(b, X.shape[0], "b")
        if center:
            X = X - b @ X
        C = compute_cost_matrix(U, Y)
        return cls(U, a, X, Y, b, float(epsilon), C, lambda_tol)

    @property
    def m(self) -> int:
        return self.C.shape[0]

    @property
    def n(self) -> int:
        return self.C.shape[1]

    @property
    def d_x(self) -> int:
        return self.X.shape[1]

    @property
    def d_y(self) -> int:
        return self.Y.shape[1]

    @property
    def sigma_x(self) -> np.ndarray:
        return (self.X * self.b[:, None]).T @ self.X

    @property
    def log_a(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.a)

    @property
    def log_b(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.b)

    def with_epsilon(self, epsilon: float) -> "DiscreteProblem":
        return DiscreteProblem(
            self.U, self.a, self.X, self.Y, self.b, float(epsilon), self.C, self.lambda_tol
        )


@dataclass(frozen=True, eq=False)
class Potentials:
    """Dual triple on the discrete atoms: ``f`` (m,), ``G`` (m, d_x), ``h`` (n,)."""

    f: np.ndarray
    G: np.ndarray
    h: np.ndarray

    @classmethod
    def zeros(cls, prob: DiscreteProblem) -> "Potentials":
        return cls(np.zeros(prob.m), np.zeros((prob.m, prob.d_x)), np.zeros(prob.n))

    def normalized(self, a: np.ndarray, X: np.ndarray) -> "Potentials":
        """Affine shift to ``sum a f = 0`` and ``sum a G = 0``; the dual value is unchanged."""
        alpha = a @ self.f
        v = a @ self.G
        return Potentials(self.f - alpha, self.G - v, self.h + alpha + X @ v)

    def is_normalized(self, a: np.ndarray, tol: float = 1e-10) -> bool:
        return abs(a @ self.f) <= tol and np.linalg.norm(a @ self.G) <= tol

    def sup_norms(self) -> tuple[float, float, float]:
        return (
            float(np.abs(self.f).max(initial=0.0)),
            float(np.linalg.norm(self.G, axis=1).max(initial=0.0)),
            float(np.abs(self.h).max(initial=0.0)),
        )

    def h_distance(self, other: "Potentials", a, b) -> float:
        """Distance in the product L2(a) x L2(a) x L2(b) norm."""
        df = self.f - other.f
        dG = self.G - other.G
        dh = self.h - other.h
        return float(np.sqrt(a @ df**2 + a @ (dG**2).sum(1) + b @ dh**2))


@dataclass(frozen=True, eq=False)
class Coupling:
    """Discrete coupling ``pi_ij`` induced by a set of potentials."""

    pi: np.ndarray


def _check_finite(p: Potentials) -> None:
    if not (np.all(np.isfinite(p.f)) and np.all(np.isfinite(p.G)) and np.all(np.isfinite(p.h))):
        raise FloatingPointError("potentials contain non-finite values")


def exponent(p: Potentials, prob: DiscreteProblem) -> np.ndarray:
    """The matrix ``(f_i + <G_i, x_j> + h_j - C_ij) / epsilon``."""
    _check_finite(p)
    return (p.f[:, None] + p.G @ prob.X.T + p.h[None, :] - prob.C) / prob.epsilon


def log_iota(p: Potentials, prob: DiscreteProblem) -> float:
    E = exponent(p, prob)
    return float(logsumexp(E + prob.log_a[:, None] + prob.log_b[None, :]))


def iota(p: Potentials, prob: DiscreteProblem) -> float:
    """Total mass ``sum_ij a_i b_j exp(E_ij)`` of the unnormalized coupling."""
    return float(np.exp(log_iota(p, prob)))


def dual_objective(p: Potentials, prob: DiscreteProblem) -> float:
    """``<a, f> + <b, h> - epsilon * (iota - 1)``."""
    return float(prob.a @ p.f + prob.b @ p.h - prob.epsilon * (iota(p, prob) - 1.0))


class NegGradients(NamedTuple):
    """Negative gradients of the dual in the L2(a) x L2(a) x L2(b) geometry."""

    f: np.ndarray
    G: np.ndarray
    h: np.ndarray

    def sq_norm(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(a @ self.f**2 + a @ (self.G**2).sum(1) + b @ self.h**2)


def tilted_rows(E: np.ndarray, log_b: np.ndarray):
    """Row-wise log masses and row-normalized tilted weights of ``b_j exp(E_ij)``."""
    S = E + log_b[None, :]
    row_lse = logsumexp(S, axis=1)
    W = np.exp(S - row_lse[:, None])
    return row_lse, W


def neg_gradients(p: Potentials, prob: DiscreteProblem) -> NegGradients:
    """Compute ``(l_f, l_g, l_h)``.

    ``dD/df_i = -a_i l_f[i]``, ``dD/dG_i = -a_i l_g[i]`` and ``dD/dh_j = -b_j l_h[j]``.
    """
    E = exponent(p, prob)
    row_lse, W = tilted_rows(E, prob.log_b)
    l_f = np.expm1(row_lse)
    l_g = np.exp(row_lse)[:, None] * (W @ prob.X)
    col_lse = logsumexp(E + prob.log_a[:, None], axis=0)
    l_h = np.expm1(col_lse)
    return NegGradients(l_f, l_g, l_h)


def coupling(p: Potentials, prob: DiscreteProblem) -> Coupling:
    E = exponent(p, prob)
    return Coupling(np.exp(E + prob.log_a[:, None] + prob.log_b[None, :]))


class Residuals(NamedTuple):
    row: float
    col: float
    mean_independence: float

    def max(self) -> float:
        return max(self.row, self.col, self.mean_independence)


def residuals(cpl: Coupling, prob: DiscreteProblem) -> Residuals:
    """L1 marginal violations and the worst conditional mean of ``x`` given ``u_i``."""
    pi = cpl.pi
    row_res = float(np.abs(pi.sum(1) - prob.a).sum())
    col_res = float(np.abs(pi.sum(0) - prob.b).sum())
    live = prob.a > WEIGHT_FLOOR
    if not np.any(live):
        return Residuals(row_res, col_res, 0.0)
    cond = (pi[live] @ prob.X) / prob.a[live, None]
    return Residuals(row_res, col_res, float(np.linalg.norm(cond, axis=1).max()))


def primal_objective(cpl: Coupling, prob: DiscreteProblem) -> float:
    """``sum pi C + epsilon * KL(pi | a x b)`` with ``0 log 0 = 0``."""
    pi = cpl.pi
    if np.any(pi < 0):
        raise ProblemError("coupling has negative entries")
    ref = np.outer(prob.a, prob.b)
    if np.any((pi > 0) & (ref == 0)):
        raise ProblemError("coupling charges atoms outside the support of a x b")
    pos = pi > 0
    kl = float(np.sum(pi[pos] * np.log(pi[pos] / ref[pos])))
    return float(np.sum(pi * prob.C) + prob.epsilon * kl)
