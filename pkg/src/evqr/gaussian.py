"""Closed-form optimal dual value for jointly Gaussian data and a standard Gaussian reference."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .problem import DiscreteProblem, ProblemError


def _sym_sqrt(A: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (A + A.T))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def _check_pd(A: np.ndarray, name: str) -> None:
    if not np.allclose(A, A.T, atol=1e-12 * (1 + np.abs(A).max())):
        raise ProblemError(f"{name} is not symmetric")
    if np.linalg.eigvalsh(A)[0] <= 0:
        raise ProblemError(f"{name} is not positive definite")


@dataclass(frozen=True, eq=False)
class GaussianModel:
    """``nu = N((0, m_Y), Sigma)`` with ``Sigma`` given blockwise; ``mu = N(0, I)``."""

    m_Y: np.ndarray
    Sigma_XX: np.ndarray
    Sigma_XY: np.ndarray
    Sigma_YY: np.ndarray
    epsilon: float

    def __post_init__(self):
        m_Y = np.atleast_1d(np.asarray(self.m_Y, dtype=float))
        sxx = np.atleast_2d(np.asarray(self.Sigma_XX, dtype=float))
        sxy = np.atleast_2d(np.asarray(self.Sigma_XY, dtype=float))
        syy = np.atleast_2d(np.asarray(self.Sigma_YY, dtype=float))
        d_x, d_y = sxx.shape[0], syy.shape[0]
        if sxx.shape != (d_x, d_x) or syy.shape != (d_y, d_y) or m_Y.shape != (d_y,):
            raise ProblemError("inconsistent block shapes")
        if sxy.shape != (d_x, d_y):
            raise ProblemError(f"Sigma_XY has shape {sxy.shape}, expected {(d_x, d_y)}")
        if not self.epsilon > 0:
            raise ProblemError("epsilon must be positive")
        for name, val in (("m_Y", m_Y), ("Sigma_XX", sxx), ("Sigma_XY", sxy), ("Sigma_YY", syy)):
            object.__setattr__(self, name, val)
        _check_pd(self.covariance, "joint covariance")
        _check_pd(self.schur, "Schur complement")

    @property
    def d_x(self) -> int:
        return self.Sigma_XX.shape[0]

    @property
    def d_y(self) -> int:
        return self.Sigma_YY.shape[0]

    @property
    def covariance(self) -> np.ndarray:
        return np.block([[self.Sigma_XX, self.Sigma_XY], [self.Sigma_XY.T, self.Sigma_YY]])

    @property
    def mean(self) -> np.ndarray:
        return np.concatenate([np.zeros(self.d_x), self.m_Y])

    @property
    def schur(self) -> np.ndarray:
        """``Sigma_YY - Sigma_YX Sigma_XX^{-1} Sigma_XY``, the inverse of ``Omega_YY``."""
        return self.Sigma_YY - self.Sigma_XY.T @ np.linalg.solve(self.Sigma_XX, self.Sigma_XY)

    @classmethod
    def from_json(cls, path) -> "GaussianModel":
        data = json.loads(Path(path).read_text())
        missing = {"m_Y", "Sigma_XX", "Sigma_XY", "Sigma_YY", "epsilon"} - data.keys()
        if missing:
            raise ProblemError(f"parameter file lacks {sorted(missing)}")
        return cls(
            m_Y=data["m_Y"],
            Sigma_XX=data["Sigma_XX"],
            Sigma_XY=data["Sigma_XY"],
            Sigma_YY=data["Sigma_YY"],
            epsilon=float(data["epsilon"]),
        )

    def to_dict(self) -> dict:
        return {
            "m_Y": self.m_Y.tolist(),
            "Sigma_XX": self.Sigma_XX.tolist(),
            "Sigma_XY": self.Sigma_XY.tolist(),
            "Sigma_YY": self.Sigma_YY.tolist(),
            "epsilon": self.epsilon,
        }


def lambda_eps(model: GaussianModel) -> np.ndarray:
    """``(Omega_YY^{-1} + eps^2/4 I)^{1/2} - eps/2 I``."""
    eps = model.epsilon
    I = np.eye(model.d_y)
    return _sym_sqrt(model.schur + 0.25 * eps**2 * I) - 0.5 * eps * I


def gaussian_dual_value(model: GaussianModel) -> float:
    """Optimal entropic VQR dual value for the Gaussian model."""
    eps = model.epsilon
    lam = lambda_eps(model)
    omega = np.linalg.inv(model.schur)
    sign, logdet = np.linalg.slogdet(eps * lam @ omega)
    if sign <= 0:
        raise ProblemError("eps * Lambda * Omega is not positive definite")
    return float(
        model.d_y / 2
        - np.trace(lam)
        + 0.5 * np.trace(model.Sigma_YY)
        + 0.5 * model.m_Y @ model.m_Y
        - 0.5 * eps * logdet
    )


def sample_gaussian_problem(model: GaussianModel, m: int, n: int, seed: int) -> DiscreteProblem:
    """Empirical problem with uniform weights.

    Uses ``numpy.random.default_rng(seed)`` (PCG64). Draw order: the ``(m, d_y)``
    reference block first, then an ``(n, d_x + d_y)`` standard normal block mapped
    through the lower Cholesky factor of the joint covariance. ``X`` is centered.
    """
    if m < 1 or n < 1:
        raise ProblemError("m and n must be positive")
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((m, model.d_y))
    L = np.linalg.cholesky(model.covariance)
    Z = rng.standard_normal((n, model.d_x + model.d_y)) @ L.T + model.mean
    return DiscreteProblem.from_arrays(U, Z[:, : model.d_x], Z[:, model.d_x :], model.epsilon)


# Parameters of the standard synthetic experiments (d_y = 2).
SYNTHETIC_M_Y = [0.7, -0.2]
SYNTHETIC_SIGMA_YY = [[1.5, 0.4], [0.4, 1.2]]


def synthetic_model(d_x: int, epsilon: float) -> GaussianModel:
    """The ``d_x = 1`` or ``d_x = 2`` synthetic configuration."""
    if d_x == 1:
        sxx, sxy = [[1.0]], [[0.5, -0.3]]
    elif d_x == 2:
        sxx, sxy = [[1.0, 0.25], [0.25, 1.3]], [[0.5, -0.3], [0.2, 0.4]]
    else:
        raise ValueError("only d_x in {1, 2} is defined")
    return GaussianModel(SYNTHETIC_M_Y, sxx, sxy, SYNTHETIC_SIGMA_YY, epsilon)
