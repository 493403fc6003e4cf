"""Closed-form potential bounds, iterate bounds, contraction rates and the step-size guard.

``M_x`` is floored at 1 for every formula in this module (the bounds stay valid
since they increase with ``M_x``); the raw value is kept as ``M_x_raw``.
Exponentials are evaluated in log space so huge bounds give rates of exactly 0
instead of NaN.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional

import numpy as np

from .problem import DiscreteProblem, Potentials, cost_summary, dual_objective

log = logging.getLogger(__name__)

LOG_3_2 = math.log(1.5)


class ProblemConstants(NamedTuple):
    M_x: float
    M_x_raw: float
    c_inf: float
    L_c: float
    diam_U: float
    lambda_min: float
    sigma_inv_op: float


def problem_constants(prob: DiscreteProblem) -> ProblemConstants:
    M_x_raw = float(np.linalg.norm(prob.X, axis=1).max())
    cs = cost_summary(prob.U, prob.Y, prob.C)
    lam = np.linalg.eigvalsh(prob.sigma_x)
    return ProblemConstants(
        M_x=max(M_x_raw, 1.0),
        M_x_raw=M_x_raw,
        c_inf=cs.c_inf,
        L_c=cs.L_c,
        diam_U=cs.diam_U,
        lambda_min=float(lam[0]),
        sigma_inv_op=float(1.0 / lam[0]),
    )


def _g_bound(sigma_inv_op, M_x, c_inf, epsilon):
    return 2.0 * sigma_inv_op * M_x * (2.5 * c_inf + epsilon * LOG_3_2)


def optimal_potential_bounds(prob: DiscreteProblem, consts: Optional[ProblemConstants] = None):
    """Sup-norm bounds ``(f, g, h)`` on the normalized optimal potentials."""
    k = consts or problem_constants(prob)
    bg = _g_bound(k.sigma_inv_op, k.M_x, k.c_inf, prob.epsilon)
    return k.c_inf, bg, k.c_inf + bg * k.M_x


def vanilla_iterate_bounds(prob: DiscreteProblem, D0: float, h0_inf: float, consts=None):
    """``(K_f, K_g, K_h, K_bar)`` bounding every vanilla iterate started at dual value ``D0``."""
    k = consts or problem_constants(prob)
    D0_minus = max(-D0, 0.0)
    K_f = k.L_c * k.diam_U + k.c_inf + D0_minus + h0_inf
    K_g = (
        4.0
        * k.sigma_inv_op
        * k.M_x
        * (4.0 * k.c_inf - 1.5 * D0 + K_f + h0_inf + prob.epsilon * LOG_3_2)
    )
    K_h = k.c_inf + K_f + K_g * k.M_x
    K_bar = K_f + K_g * k.M_x + K_h + k.c_inf
    return K_f, K_g, K_h, K_bar


def modified_iterate_bounds(prob: DiscreteProblem, radius: float, D0: float, f0_inf: float, consts=None):
    """``(K_hat_f, K_hat_h, K_bar_star)`` for guarded modified runs with projection radius ``radius``."""
    k = consts or problem_constants(prob)
    K_hat_f = k.L_c * k.diam_U + 2.0 * radius * k.M_x + k.c_inf - D0
    K_hat_h = 2.0 * k.c_inf + max(K_hat_f, f0_inf) + radius * k.M_x - D0
    K_bar_star = K_hat_f + radius * k.M_x + K_hat_h + k.c_inf
    return K_hat_f, K_hat_h, K_bar_star


def log_eta_guard(M_x: float, radius: float, epsilon: float) -> float:
    return math.log(epsilon) - 2.0 * math.log(M_x) - 2.0 * radius * M_x / epsilon


def eta_guard(M_x: float, radius: float, epsilon: float) -> float:
    """Supremum of step sizes for which modified Sinkhorn is monotone."""
    return math.exp(log_eta_guard(M_x, radius, epsilon))


def default_eta(prob: DiscreteProblem, radius: float, consts=None) -> tuple[float, bool]:
    """Guarded step size ``min(eps, 0.9 * guard)`` and whether ``eta = eps`` breaks the guard.

    The guarded value can underflow to 0 for large radii; callers that need a
    moving iterate should then pick ``eta`` explicitly.
    """
    if not radius >= 0:
        raise ValueError(f"radius must be nonnegative, got {radius}")
    k = consts or problem_constants(prob)
    eps = prob.epsilon
    lg = log_eta_guard(k.M_x, radius, eps)
    eta = min(eps, math.exp(math.log(0.9) + lg))
    violated = math.log(eps) >= lg
    return eta, violated


def vanilla_rate(bounds: "ProblemBounds") -> float:
    """``tau = (1 ^ lambda)^2 e^{-5 K_bar/eps} / (3 M_x^2)``."""
    b = bounds
    lam = min(1.0, b.lambda_min)
    return math.exp(
        2 * math.log(lam) - 5 * b.K_bar / b.epsilon - math.log(3.0) - 2 * math.log(b.M_x)
    )


def modified_rate(bounds: "ProblemBounds", eta: float) -> float:
    """``tau_hat`` for step size ``eta``; 0 when ``eta`` breaks the step-size guard."""
    b = bounds
    eps = b.epsilon
    if not eta > 0:
        return 0.0
    theta = eps / eta
    log_pen = 2 * math.log(b.M_x) + 2 * b.radius * b.M_x / eps
    if math.log(theta) <= log_pen:
        return 0.0
    # theta - M_x^2 e^{2 K_g M_x / eps}, written to survive huge exponents
    slack = theta * -math.expm1(log_pen - math.log(theta))
    log_bracket = min(-2 * b.K_hat_h / eps, math.log(slack))
    log_den = np.logaddexp(
        math.log(2.0) + 2 * math.log(theta),
        math.log(5.0) + 4 * math.log(b.M_x) + 2 * b.K_bar_star / eps,
    )
    lam = min(1.0, b.lambda_min)
    return math.exp(math.log(lam) - b.K_bar_star / eps + log_bracket - float(log_den))


def contraction_rates(bounds: "ProblemBounds", eta: Optional[float] = None) -> tuple[float, float]:
    """``(tau, tau_hat)``; ``tau_hat`` is reported as 0 (with a warning) when ``eta`` breaks the guard."""
    eta = bounds.eta if eta is None else eta
    tau_hat = modified_rate(bounds, eta)
    if tau_hat == 0.0:
        log.warning("step size %.3e is not below the guard %.3e; tau_hat reported as 0", eta, bounds.eta_guard)
    return vanilla_rate(bounds), tau_hat


@dataclass(frozen=True)
class ProblemBounds:
    epsilon: float
    M_x: float
    M_x_raw: float
    c_inf: float
    L_c: float
    diam_U: float
    lambda_min: float
    sigma_inv_op: float
    K_bar_f: float
    K_bar_g: float
    K_bar_h: float
    D0: float
    K_f: float
    K_g: float
    K_h: float
    K_bar: float
    radius: float
    eta: float
    eta_guard: float
    guard_ok: bool
    K_hat_f: float
    K_hat_h: float
    K_bar_star: float
    tau: float = 0.0
    tau_hat: float = 0.0

    @property
    def pl_constant(self) -> float:
        """Coefficient ``2 (1 ^ lambda) e^{-K_bar/eps} / eps`` of the vanilla PL inequality."""
        lam = min(1.0, self.lambda_min)
        return math.exp(math.log(2 * lam) - self.K_bar / self.epsilon - math.log(self.epsilon))

    def to_dict(self) -> dict:
        return asdict(self)


def compute_bounds(
    prob: DiscreteProblem,
    init: Optional[Potentials] = None,
    radius: Optional[float] = None,
    eta: Optional[float] = None,
) -> ProblemBounds:
    """Evaluate every constant for ``prob`` started from ``init`` (default zeros).

    Iterate bounds are enlarged to dominate the optimal-potential bounds and the
    initial sup-norms, as the rate formulas require.
    """
    k = problem_constants(prob)
    p0 = init if init is not None else Potentials.zeros(prob)
    D0 = dual_objective(p0, prob)
    f0, g0, h0 = p0.sup_norms()
    bf, bg, bh = optimal_potential_bounds(prob, k)

    K_f, K_g, K_h, _ = vanilla_iterate_bounds(prob, D0, h0, k)
    K_f, K_g, K_h = max(K_f, bf, f0), max(K_g, bg, g0), max(K_h, bh, h0)
    K_bar = K_f + K_g * k.M_x + K_h + k.c_inf

    radius = bg if radius is None else float(radius)
    guarded_eta, _ = default_eta(prob, radius, k)
    eta = guarded_eta if eta is None else float(eta)
    guard = eta_guard(k.M_x, radius, prob.epsilon)
    guard_ok = eta < guard

    K_hat_f, K_hat_h, _ = modified_iterate_bounds(prob, radius, D0, f0, k)
    K_hat_f, K_hat_h = max(K_hat_f, bf, f0), max(K_hat_h, bh, h0)
    K_bar_star = K_hat_f + radius * k.M_x + K_hat_h + k.c_inf

    b = ProblemBounds(
        epsilon=prob.epsilon,
        M_x=k.M_x,
        M_x_raw=k.M_x_raw,
        c_inf=k.c_inf,
        L_c=k.L_c,
        diam_U=k.diam_U,
        lambda_min=k.lambda_min,
        sigma_inv_op=k.sigma_inv_op,
        K_bar_f=bf,
        K_bar_g=bg,
        K_bar_h=bh,
        D0=D0,
        K_f=K_f,
        K_g=K_g,
        K_h=K_h,
        K_bar=K_bar,
        radius=radius,
        eta=eta,
        eta_guard=guard,
        guard_ok=guard_ok,
        K_hat_f=K_hat_f,
        K_hat_h=K_hat_h,
        K_bar_star=K_bar_star,
    )
    tau, tau_hat = vanilla_rate(b), modified_rate(b, eta)
    return ProblemBounds(**{**asdict(b), "tau": tau, "tau_hat": tau_hat})
