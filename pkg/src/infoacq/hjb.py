"""Solver for the reduced one-dimensional HJB equation on [0, gamma_max].

A semi-Lagrangian value iteration produces the value table v, its slope, the
acquisition feedback map, and the activation threshold.  Two independent
routes cross-check it: direct quadrature of policy costs along integrated
variance paths, and (for quadratic costs) an explicit first-order ODE for the
slope seeded at the equilibrium.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.integrate import simpson
from scipy.optimize import isotonic_regression

from .errors import (
    ConcavityViolation,
    FootPointEscape,
    InvalidParams,
    NegativeRadicand,
    NoConvergence,
    SlopeOutOfRange,
)
from .model import Coefficients, CostSpec, ModelParams, h_hat
from .riccati import integrate_variance, solve_constant_rate, variance_drift


@dataclass(frozen=True)
class Grid:
    """Uniform variance grid."""

    nodes: np.ndarray

    def __post_init__(self):
        d = np.diff(self.nodes)
        if len(self.nodes) < 2 or np.any(d <= 0):
            raise InvalidParams("grid nodes must be strictly increasing")
        if np.max(np.abs(d - d[0])) > 1e-14 * max(1.0, abs(self.nodes[-1])):
            raise InvalidParams("grid spacing must be uniform")

    @staticmethod
    def uniform(gamma_max: float, n: int) -> "Grid":
        if n < 201:
            raise InvalidParams("grid must have at least 201 nodes")
        return Grid(nodes=np.linspace(0.0, gamma_max, n))

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def spacing(self) -> float:
        return float(self.nodes[1] - self.nodes[0])


@dataclass(frozen=True)
class ValueTable:
    """Converged value function, slope, and feedback map on a grid."""

    grid: Grid
    v: np.ndarray
    v_slope: np.ndarray
    h_star: np.ndarray
    gamma_D: float
    iterations: int
    residual: float
    # minimizer chosen by the final value-iteration sweep (diagnostic)
    h_sweep: Optional[np.ndarray] = field(default=None, repr=False)

    def value(self, gamma):
        return np.interp(gamma, self.grid.nodes, self.v)

    def slope(self, gamma):
        return np.interp(gamma, self.grid.nodes, self.v_slope)

    def to_csv(self, path) -> None:
        data = np.column_stack([self.grid.nodes, self.v, self.v_slope, self.h_star])
        np.savetxt(
            path, data, delimiter=",", header="gamma,v,v_prime,h_star", comments="", fmt="%.17g"
        )


def hamiltonian(
    gamma: float, p: float, coeffs: Coefficients, cost: CostSpec, params: ModelParams
) -> Tuple[float, float]:
    """Minimized Hamiltonian of the reduced equation and its minimizer.

    Uses the conjugate representation: the infimum over rates of
    {drift * p + running cost} is attained at h_hat(gamma^2 p).
    """
    if p < -1e-9:
        raise SlopeOutOfRange(f"slope {p} negative beyond tolerance")
    if gamma > 0 and p > coeffs.M0 / gamma**2 + 1e-9:
        raise SlopeOutOfRange(f"slope {p} exceeds M0/gamma^2 at gamma={gamma}")
    x = min(max(gamma**2 * p, 0.0), coeffs.M0)
    h = float(h_hat(cost, x, coeffs.h_max))
    value = (
        float(variance_drift(gamma, 0.0, params)) * p
        + coeffs.a_bar * gamma
        + float(cost.c(h))
        - h * x
    )
    return value, h


def _monotone_slopes(nodes: np.ndarray, v: np.ndarray, L_v: float) -> np.ndarray:
    """Finite-difference slopes clipped to the provable range [0, L_v]."""
    s = np.gradient(v, nodes)
    return np.clip(s, 0.0, L_v)


def _candidate_rates(cost: CostSpec, g2: np.ndarray, slope: np.ndarray, coeffs: Coefficients):
    x = np.clip(g2 * slope, 0.0, coeffs.M0)
    return np.asarray(h_hat(cost, x, coeffs.h_max))


def value_iteration(
    grid: Grid,
    coeffs: Coefficients,
    cost: CostSpec,
    params: ModelParams,
    dt: Optional[float] = None,
    tol: float = 1e-10,
    max_iter: int = 1_000_000,
) -> ValueTable:
    """Semi-Lagrangian fixed-point iteration for the reduced value function.

    The Bellman operator follows the characteristic for one step dt and
    interpolates linearly; candidate rates at each node are {0, h_max} plus
    the closed-form conjugate candidate computed from the previous sweep's
    slope.  Both boundaries are inflow-free so no boundary condition is
    needed; with sigma2 = 0 the origin is absorbing and its value is pinned.
    """
    nodes = grid.nodes
    n = grid.n
    gmax = coeffs.gamma_max
    s1b2 = params.sigma1_bar_sq
    stability = 0.5 / (2.0 * (s1b2 + coeffs.h_max) * gmax + 2.0 * params.lam)
    if dt is None:
        dt = min(1e-3, stability)
    if dt > stability:
        raise InvalidParams(f"dt={dt:g} exceeds stability bound {stability:g}")

    g2 = nodes**2
    f0 = np.asarray(variance_drift(nodes, 0.0, params), dtype=float)
    disc = math.exp(-params.delta * dt)
    c0 = float(cost.c(0.0))
    c_hmax = float(cost.c(coeffs.h_max))
    run0 = coeffs.a_bar * nodes  # running cost without the acquisition part

    v = (coeffs.a_bar * nodes + c0) / params.delta
    absorbing_origin = params.sigma2 == 0.0
    if absorbing_origin:
        v[0] = c0 / params.delta

    stop = tol * (1.0 - disc)
    h_choice = np.zeros(n)
    it = 0
    for it in range(1, max_iter + 1):
        slope = _monotone_slopes(nodes, v, coeffs.L_v)
        hc = _candidate_rates(cost, g2, slope, coeffs)

        best = np.full(n, np.inf)
        h_choice = np.zeros(n)
        for h_arr, c_arr in (
            (np.zeros(n), np.full(n, c0)),
            (hc, np.asarray(cost.c(hc), dtype=float)),
            (np.full(n, coeffs.h_max), np.full(n, c_hmax)),
        ):
            foot = nodes + dt * (f0 - h_arr * g2)
            if np.any(foot < -1e-10) or np.any(foot > gmax + 1e-10):
                raise FootPointEscape("semi-Lagrangian foot point left [0, gamma_max]")
            foot = np.clip(foot, 0.0, gmax)
            cand = dt * (run0 + c_arr) + disc * np.interp(foot, nodes, v)
            better = cand < best
            best = np.where(better, cand, best)
            h_choice = np.where(better, h_arr, h_choice)
        if absorbing_origin:
            best[0] = c0 / params.delta
            h_choice[0] = 0.0

        change = float(np.max(np.abs(best - v)))
        v = best
        if change < stop:
            break
    else:
        raise NoConvergence(f"value iteration did not converge in {max_iter} sweeps", best=v)

    v_slope = slope_values(nodes, v, coeffs.L_v, tol)
    h_star = _candidate_rates(cost, g2, v_slope, coeffs)
    gamma_D = _threshold_from_slopes(nodes, v_slope, cost, coeffs)
    h_star[nodes <= gamma_D] = 0.0
    residual = hjb_residual(nodes, v, v_slope, coeffs, cost, params)
    return ValueTable(
        grid=grid,
        v=v,
        v_slope=v_slope,
        h_star=h_star,
        gamma_D=gamma_D,
        iterations=it,
        residual=residual,
        h_sweep=h_choice,
    )


def slope_values(nodes: np.ndarray, v: np.ndarray, L_v: float, tol: float = 1e-10) -> np.ndarray:
    """Differentiate the table: centered interior, one-sided at the ends.

    Slopes are projected onto the nonincreasing cone (the value function is
    concave); a projection that has to move any slope by more than 100*tol
    signals an under-resolved grid.
    """
    s = np.empty_like(v)
    d = nodes[1] - nodes[0]
    s[1:-1] = (v[2:] - v[:-2]) / (2.0 * d)
    s[0] = (v[1] - v[0]) / d
    s[-1] = (v[-1] - v[-2]) / d
    proj = isotonic_regression(s, increasing=False).x
    moved = float(np.max(np.abs(proj - s)))
    if moved > 100.0 * max(tol, 1e-12) * max(1.0, float(np.max(np.abs(v)))):
        raise ConcavityViolation(f"isotonic projection moved a slope by {moved:g}")
    return np.clip(proj, 0.0, L_v)


def slope_table(table: ValueTable, tol: float = 1e-10) -> np.ndarray:
    return slope_values(table.grid.nodes, table.v, np.inf, tol)


def _threshold_from_slopes(
    nodes: np.ndarray, v_slope: np.ndarray, cost: CostSpec, coeffs: Coefficients
) -> float:
    cp0 = cost.c_prime_zero
    if cp0 == 0.0:
        return 0.0
    s = nodes**2 * v_slope
    above = np.nonzero(s >= cp0)[0]
    if len(above) == 0:
        return coeffs.gamma_max
    i = above[0]
    if i == 0:
        return 0.0
    # bisection on the interpolated monotone map gamma -> gamma^2 v'(gamma)
    lo, hi = nodes[i - 1], nodes[i]
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if mid**2 * np.interp(mid, nodes, v_slope) < cp0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def feedback_threshold(table: ValueTable, cost: CostSpec, coeffs: Coefficients) -> float:
    """Activation threshold: where gamma^2 v'(gamma) crosses c'(0)."""
    return _threshold_from_slopes(table.grid.nodes, table.v_slope, cost, coeffs)


def feedback_map(table: ValueTable, gamma, cost: CostSpec, coeffs: Coefficients):
    """Optimal acquisition rate at a variance level, from the value table."""
    g = np.asarray(gamma, dtype=float)
    s = np.interp(g, table.grid.nodes, table.grid.nodes**2 * table.v_slope)
    x = np.clip(s, 0.0, coeffs.M0)
    out = np.asarray(h_hat(cost, x, coeffs.h_max))
    out = np.where(g <= table.gamma_D, 0.0, out)
    return out if np.ndim(gamma) else float(out)


def hjb_residual(
    nodes: np.ndarray,
    v: np.ndarray,
    v_slope: np.ndarray,
    coeffs: Coefficients,
    cost: CostSpec,
    params: ModelParams,
) -> float:
    """Sup over interior nodes of the stationary equation residual."""
    g2 = nodes**2
    f0 = np.asarray(variance_drift(nodes, 0.0, params), dtype=float)
    x = np.clip(g2 * v_slope, 0.0, coeffs.M0)
    h = np.asarray(h_hat(cost, x, coeffs.h_max))
    ham = f0 * v_slope + coeffs.a_bar * nodes + np.asarray(cost.c(h)) - h * x
    res = -params.delta * v + ham
    return float(np.max(np.abs(res[1:-1])))


def evaluate_policy_cost(
    gamma0: float,
    policy: Callable[[float], float],
    params: ModelParams,
    coeffs: Coefficients,
    cost: CostSpec,
    horizon: float,
    step: float = 1e-3,
    feedback: bool = True,
) -> Tuple[float, float]:
    """Discounted running cost of a policy by Simpson quadrature.

    policy maps gamma -> rate when feedback=True, else t -> rate.  Returns
    the quadrature value over [0, horizon] plus the constant-continuation
    tail, and the tail certificate itself.
    """
    n = int(round(horizon / step))
    n += n % 2  # Simpson needs an even interval count
    t = np.linspace(0.0, horizon, n + 1)
    if feedback:
        gammas = np.empty(n + 1)
        rates = np.empty(n + 1)
        g = gamma0
        for i in range(n + 1):
            gammas[i] = g
            h = float(policy(g))
            rates[i] = h
            if i < n:
                dt = t[i + 1] - t[i]
                k1 = variance_drift(g, h, params)
                k2 = variance_drift(g + 0.5 * dt * k1, policy(g + 0.5 * dt * k1), params)
                k3 = variance_drift(g + 0.5 * dt * k2, policy(g + 0.5 * dt * k2), params)
                k4 = variance_drift(g + dt * k3, policy(g + dt * k3), params)
                g = min(max(g + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4), 0.0), coeffs.gamma_max)
    else:
        path = integrate_variance(gamma0, policy, t, params)
        gammas, rates = path.values, path.rate_used
    integrand = np.exp(-params.delta * t) * (
        coeffs.a_bar * gammas + np.asarray(cost.c(rates), dtype=float)
    )
    value = float(simpson(integrand, x=t))
    tail = math.exp(-params.delta * horizon) * (
        coeffs.a_bar * gammas[-1] + float(cost.c(rates[-1]))
    ) / params.delta
    return value + tail, tail


def no_acquisition_value(
    gamma0: float,
    params: ModelParams,
    coeffs: Coefficients,
    cost: CostSpec,
    horizon: float = 40.0,
    step: float = 1e-3,
) -> Tuple[float, float]:
    """Value of never acquiring, via quadrature along the closed-form path.

    Returns (v_no, w_bar) where w_bar maps the reduced value back to the
    pre-separation coordinate.
    """
    horizon = max(horizon, 40.0 / params.delta)
    n = int(round(horizon / step))
    n += n % 2
    t = np.linspace(0.0, horizon, n + 1)
    gammas = np.asarray(solve_constant_rate(gamma0, 0.0, t, params))
    c0 = float(cost.c(0.0))
    integrand = np.exp(-params.delta * t) * (coeffs.a_bar * gammas + c0)
    value = float(simpson(integrand, x=t))
    value += math.exp(-params.delta * horizon) * (coeffs.a_bar * gammas[-1] + c0) / params.delta
    w_bar = value + coeffs.a2 * gamma0 + (coeffs.C1 + coeffs.a2 * params.sigma2**2) / params.delta
    return value, w_bar


def quadratic_ode_oracle(
    params: ModelParams,
    coeffs: Coefficients,
    zeta: float,
    gamma_lo: float,
    gamma_hi: float,
    gamma_eq: float,
    v_eq: float,
    n: int = 20001,
) -> ValueTable:
    """Independent value table for quadratic costs from the explicit slope ODE.

    For c(h) = zeta h^2 the converted HJB is an explicit first-order ODE for
    v; it is integrated outward from the equilibrium, where both v and v' are
    pinned in closed form, with RK4.
    """
    if not gamma_lo < gamma_eq < gamma_hi:
        raise InvalidParams("need gamma_lo < gamma_eq < gamma_hi")
    s1b2 = params.sigma1_bar_sq
    lam, s2, d = params.lam, params.sigma2**2, params.delta
    a_bar = coeffs.a_bar

    def slope(g, v):
        q = -s1b2 - 2.0 * lam / g + s2 / g**2
        rad = zeta**2 * q**2 + zeta * (a_bar * g - d * v)
        if rad < -1e-12 * max(1.0, zeta**2 * q**2):
            raise NegativeRadicand(f"radicand {rad} at gamma={g}")
        return (2.0 * zeta * q + 2.0 * math.sqrt(max(rad, 0.0))) / g**2

    def integrate(g_start, v_start, g_stop, m):
        gs = np.linspace(g_start, g_stop, m)
        vs = np.empty(m)
        vs[0] = v_start
        for i in range(m - 1):
            dg = gs[i + 1] - gs[i]
            g, v = gs[i], vs[i]
            k1 = slope(g, v)
            k2 = slope(g + 0.5 * dg, v + 0.5 * dg * k1)
            k3 = slope(g + 0.5 * dg, v + 0.5 * dg * k2)
            k4 = slope(g + dg, v + dg * k3)
            vs[i + 1] = v + dg / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        return gs, vs

    n_up = max(3, int(round(n * (gamma_hi - gamma_eq) / (gamma_hi - gamma_lo))))
    n_dn = max(3, n - n_up + 1)
    gs_up, vs_up = integrate(gamma_eq, v_eq, gamma_hi, n_up)
    gs_dn, vs_dn = integrate(gamma_eq, v_eq, gamma_lo, n_dn)
    gs = np.concatenate([gs_dn[::-1], gs_up[1:]])
    vs = np.concatenate([vs_dn[::-1], vs_up[1:]])
    slopes = np.array([slope(g, v) for g, v in zip(gs, vs)])
    h_star = np.clip(gs**2 * slopes / (2.0 * zeta), 0.0, None)
    return ValueTable(
        grid=Grid(nodes=gs),
        v=vs,
        v_slope=slopes,
        h_star=h_star,
        gamma_D=0.0,
        iterations=0,
        residual=0.0,
    )
