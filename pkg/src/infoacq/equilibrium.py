"""Equilibrium of the variance/adjoint system and its parameter sensitivities.

The stationary point (gamma_eq, p_eq) solves a two-equation system Phi = 0
coupling the controlled variance drift with the adjoint stationarity
condition.  Sensitivities with respect to the noise scales, the state-cost
weight, and the acquisition cost scale follow from the implicit function
theorem with the analytic Jacobian, and carry provable signs that are
verified on every call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import (
    CaseMismatch,
    InvalidParams,
    NoConvergence,
    NonSmoothPoint,
    SignMismatch,
    SingularJacobian,
)
from .model import Coefficients, CostSpec, ModelParams, derive_coefficients, h_hat

PARAMETERS = ("sigma1", "sigma2_sq", "kappa", "alpha")

# Proven derivative signs (d gamma_eq, d h_eq, d v_eq); None = not asserted.
EXPECTED_SIGNS: Dict[str, Tuple[Optional[int], Optional[int], Optional[int]]] = {
    "sigma1": (1, 1, 1),
    "sigma2_sq": (1, 1, 1),
    "kappa": (-1, 1, None),
    "alpha": (1, -1, 1),
}


@dataclass(frozen=True)
class EquilibriumPoint:
    """Stationary variance, adjoint slope, rate, and value."""

    gamma_eq: float
    p_eq: float
    h_eq: float
    v_eq: float
    residual: float


@dataclass(frozen=True)
class SensitivityReport:
    """Implicit-function-theorem derivatives for one parameter."""

    parameter: str
    d_gamma_eq: float
    d_p_eq: float
    d_h_eq: float
    d_v_eq: float
    signs: Tuple[int, int, int]
    jacobian_det: float


def _h_cap(cost: CostSpec, coeffs: Coefficients, alpha: float) -> float:
    """Largest rate the scaled conjugate can return for arguments up to M0."""
    if alpha >= 1.0:
        return coeffs.h_max
    return float(cost.c_prime_inv(coeffs.M0 / alpha))


def _psi(gamma: float, p: float, cost: CostSpec, coeffs: Coefficients, alpha: float) -> float:
    x = max(gamma**2 * p, 0.0) / alpha
    return float(h_hat(cost, min(x, coeffs.M0 / alpha), _h_cap(cost, coeffs, alpha)))


def phi(
    gamma: float,
    p: float,
    params: ModelParams,
    coeffs: Coefficients,
    cost: CostSpec,
    alpha: float = 1.0,
) -> Tuple[float, float]:
    """Residuals of the stationarity system at (gamma, p)."""
    s1b2 = params.sigma1_bar_sq
    h = _psi(gamma, p, cost, coeffs, alpha)
    phi1 = -(s1b2 + h) * gamma**2 - 2.0 * params.lam * gamma + params.sigma2**2
    phi2 = (2.0 * (s1b2 + h) * gamma + 2.0 * params.lam + params.delta) * p - coeffs.a_bar
    return phi1, phi2


def jacobian_phi(
    gamma: float,
    p: float,
    params: ModelParams,
    coeffs: Coefficients,
    cost: CostSpec,
    alpha: float = 1.0,
) -> np.ndarray:
    """Analytic 2x2 Jacobian of phi with respect to (gamma, p)."""
    s1b2 = params.sigma1_bar_sq
    x = gamma**2 * p / alpha
    cp0 = cost.c_prime_zero
    if abs(x - cp0) < 1e-12:
        raise NonSmoothPoint(f"gamma^2 p / alpha = {x} sits on the response kink")
    psi = _psi(gamma, p, cost, coeffs, alpha)
    if x > cp0:
        hp = 1.0 / float(cost.c_double_prime(cost.c_prime_inv(x)))
    else:
        hp = 0.0
    psi_g = hp * 2.0 * gamma * p / alpha
    psi_p = hp * gamma**2 / alpha
    f_g = -2.0 * (s1b2 + psi) * gamma - 2.0 * params.lam
    f_h = -(gamma**2)
    f_gg = -2.0 * (s1b2 + psi)
    f_gh = -2.0 * gamma
    return np.array(
        [
            [f_g + f_h * psi_g, f_h * psi_p],
            [(-f_gg - f_gh * psi_g) * p, params.delta - f_g - f_gh * psi_p * p],
        ]
    )


def _solve_p_given_gamma(
    gamma: float, params: ModelParams, coeffs: Coefficients, cost: CostSpec, alpha: float
) -> float:
    """Root of phi2(gamma, .) = 0, which is strictly increasing in p."""
    lo, hi = 0.0, coeffs.L_v * (1.0 + 1e-9)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        _, r2 = phi(gamma, mid, params, coeffs, cost, alpha)
        if r2 < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def solve_equilibrium(
    params: ModelParams,
    coeffs: Coefficients,
    cost: CostSpec,
    alpha: float = 1.0,
    tol: float = 1e-12,
) -> EquilibriumPoint:
    """Find the unique root of phi by damped Newton with a bisection fallback."""
    if alpha <= 0:
        raise InvalidParams("alpha must be positive")
    a_bar, d = coeffs.a_bar, params.delta

    def package(g: float, p: float) -> EquilibriumPoint:
        h = _psi(g, p, cost, coeffs, alpha)
        v = (a_bar * g + alpha * float(cost.c(h))) / d
        r1, r2 = phi(g, p, params, coeffs, cost, alpha)
        return EquilibriumPoint(
            gamma_eq=g, p_eq=p, h_eq=h, v_eq=v, residual=max(abs(r1), abs(r2))
        )

    if params.sigma2 == 0.0:
        return package(0.0, a_bar / (2.0 * params.lam + d))

    g0 = coeffs.gamma_inf0
    p0 = a_bar / (2.0 * params.sigma1_bar_sq * g0 + 2.0 * params.lam + d)
    g, p = g0, p0
    r = np.array(phi(g, p, params, coeffs, cost, alpha))
    for _ in range(100):
        if float(np.max(np.abs(r))) < tol:
            return package(g, p)
        try:
            J = jacobian_phi(g, p, params, coeffs, cost, alpha)
            step = np.linalg.solve(J, -r)
        except (NonSmoothPoint, np.linalg.LinAlgError):
            break
        lam_ls = 1.0
        norm0 = float(np.linalg.norm(r))
        ok = False
        for _ in range(40):
            g_new = min(max(g + lam_ls * step[0], 0.0), coeffs.gamma_inf0)
            p_new = min(max(p + lam_ls * step[1], 0.0), coeffs.L_v)
            r_new = np.array(phi(g_new, p_new, params, coeffs, cost, alpha))
            if float(np.linalg.norm(r_new)) < norm0:
                g, p, r = g_new, p_new, r_new
                ok = True
                break
            lam_ls *= 0.5
        if not ok:
            break
    if float(np.max(np.abs(r))) < tol:
        return package(g, p)

    # fallback: outer bisection on the strictly decreasing gamma-residual
    def outer(gam: float) -> float:
        pp = _solve_p_given_gamma(gam, params, coeffs, cost, alpha)
        return phi(gam, pp, params, coeffs, cost, alpha)[0]

    lo, hi = 0.0, coeffs.gamma_inf0
    if outer(hi) > 0.0:
        g = hi
    else:
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if outer(mid) > 0.0:
                lo = mid
            else:
                hi = mid
        g = 0.5 * (lo + hi)
    p = _solve_p_given_gamma(g, params, coeffs, cost, alpha)
    point = package(g, p)
    if point.residual > 1e-10:
        raise NoConvergence(
            f"equilibrium residual {point.residual:g} above tolerance", best=point
        )
    return point


def equilibrium_slope(
    eq: EquilibriumPoint,
    params: ModelParams,
    coeffs: Coefficients,
    cost: CostSpec,
    gamma_D: float,
    grid_spacing: float = 0.0,
) -> float:
    """Closed-form v'(gamma_eq) from the case-appropriate formula.

    Below the activation threshold the slope comes from the linearized
    adjoint equation; above it, the stationary rate pins the slope through
    the marginal cost.
    """
    g = eq.gamma_eq
    if grid_spacing > 0.0 and abs(g - gamma_D) < 2.0 * grid_spacing:
        inactive = coeffs.a_bar / (
            2.0 * params.sigma1_bar_sq * g + 2.0 * params.lam + params.delta
        )
        active = None
        if g > 0:
            h_act = (
                -(2.0 * params.lam * g - params.sigma2**2) / g**2 - params.sigma1_bar_sq
            )
            if h_act > 0:
                active = float(cost.c_prime(h_act)) / g**2
        raise CaseMismatch(
            "equilibrium within two grid cells of the activation threshold",
            inactive_value=inactive,
            active_value=active,
        )
    if g <= gamma_D:
        return coeffs.a_bar / (2.0 * params.sigma1_bar_sq * g + 2.0 * params.lam + params.delta)
    h_eq = -(2.0 * params.lam * g - params.sigma2**2) / g**2 - params.sigma1_bar_sq
    return float(cost.c_prime(h_eq)) / g**2


def _d_abar_d_kappa(params: ModelParams, coeffs: Coefficients) -> float:
    d, r, k, lam = params.delta, params.rho, params.kappa, params.lam
    da1 = r / (2.0 * math.sqrt(d**2 * r**2 + 4.0 * k * r))
    da3 = 2.0 * r * (d * r + lam * r) / (d * r + lam * r + 2.0 * coeffs.a1) ** 2 * da1
    return coeffs.a3 / r * da3


def sensitivity(
    eq: EquilibriumPoint,
    parameter: str,
    params: ModelParams,
    coeffs: Coefficients,
    cost: CostSpec,
    alpha: float = 1.0,
) -> SensitivityReport:
    """Implicit-function-theorem derivatives of the equilibrium in one parameter."""
    if parameter not in PARAMETERS:
        raise InvalidParams(f"unknown sensitivity parameter {parameter!r}")
    if eq.residual > 1e-10:
        raise InvalidParams("equilibrium residual too large for sensitivity analysis")
    g, p = eq.gamma_eq, eq.p_eq
    J = jacobian_phi(g, p, params, coeffs, cost, alpha)
    det = float(np.linalg.det(J))
    if abs(det) < 1e-14:
        raise SingularJacobian(f"Jacobian determinant {det:g} at equilibrium")

    x = g**2 * p / alpha
    if x > cost.c_prime_zero:
        hp = 1.0 / float(cost.c_double_prime(cost.c_prime_inv(x)))
    else:
        hp = 0.0

    d_abar = 0.0
    if parameter == "sigma2_sq":
        d_theta = np.array([1.0, 0.0])
    elif parameter == "sigma1":
        s = params.sigma1
        d_theta = np.array([2.0 * g**2 / s**3, -4.0 * g * p / s**3])
    elif parameter == "kappa":
        d_abar = _d_abar_d_kappa(params, coeffs)
        d_theta = np.array([0.0, -d_abar])
    else:  # alpha
        d_theta = np.array(
            [g**4 * p * hp / alpha**2, -2.0 * g**3 * p**2 * hp / alpha**2]
        )

    d_gamma, d_p = -np.linalg.solve(J, d_theta)
    d_h = hp * (2.0 * g * p * d_gamma + g**2 * d_p) / alpha
    if parameter == "alpha":
        d_h -= hp * g**2 * p / alpha**2
    d_v = (
        coeffs.a_bar * d_gamma
        + d_abar * g
        + alpha * float(cost.c_prime(eq.h_eq)) * d_h
        + (float(cost.c(eq.h_eq)) if parameter == "alpha" else 0.0)
    ) / params.delta

    signs = tuple(int(np.sign(v)) for v in (d_gamma, d_h, d_v))
    expected = EXPECTED_SIGNS[parameter]
    scale = max(abs(d_gamma), abs(d_h), abs(d_v), 1.0)
    for actual_val, exp in zip((d_gamma, d_h, d_v), expected):
        if exp is not None and actual_val * exp < -1e-10 * scale:
            raise SignMismatch(
                f"{parameter}: derivative {actual_val:g} contradicts proven sign {exp:+d}"
            )
    return SensitivityReport(
        parameter=parameter,
        d_gamma_eq=float(d_gamma),
        d_p_eq=float(d_p),
        d_h_eq=float(d_h),
        d_v_eq=float(d_v),
        signs=signs,
        jacobian_det=det,
    )


def sensitivity_fd(
    parameter: str,
    params: ModelParams,
    cost: CostSpec,
    gamma_max: float,
    alpha: float = 1.0,
    rel_step: float = 1e-5,
) -> Tuple[float, float, float, float]:
    """Central finite differences of re-solved equilibria (validation oracle)."""

    def solve_at(theta_mult: float):
        kw = dict(
            lam=params.lam,
            mu_bar=params.mu_bar,
            sigma1=params.sigma1,
            sigma2=params.sigma2,
            delta=params.delta,
            kappa=params.kappa,
            rho=params.rho,
        )
        a = alpha
        if parameter == "sigma1":
            kw["sigma1"] = params.sigma1 * theta_mult
            base = params.sigma1
        elif parameter == "sigma2_sq":
            kw["sigma2"] = math.sqrt(params.sigma2**2 * theta_mult)
            base = params.sigma2**2
        elif parameter == "kappa":
            kw["kappa"] = params.kappa * theta_mult
            base = params.kappa
        elif parameter == "alpha":
            a = alpha * theta_mult
            base = alpha
        else:
            raise InvalidParams(f"unknown sensitivity parameter {parameter!r}")
        pp = ModelParams(**kw)
        cc = derive_coefficients(pp, cost, gamma_max)
        return solve_equilibrium(pp, cc, cost, a), base

    hi, base = solve_at(1.0 + rel_step)
    lo, _ = solve_at(1.0 - rel_step)
    dd = 2.0 * rel_step * base
    return (
        (hi.gamma_eq - lo.gamma_eq) / dd,
        (hi.p_eq - lo.p_eq) / dd,
        (hi.h_eq - lo.h_eq) / dd,
        (hi.v_eq - lo.v_eq) / dd,
    )
