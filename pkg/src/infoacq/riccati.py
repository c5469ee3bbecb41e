"""Deterministic dynamics of the conditional variance and precision.

The conditional variance follows a scalar Riccati ODE controlled by the
acquisition rate.  For piecewise-constant rates the ODE has a closed-form
solution which doubles as the trusted oracle for the fixed-step RK4
integrator used everywhere else.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .errors import DegenerateDynamics, InvalidParams, StepSizeError
from .model import ModelParams

RateSchedule = Union[Callable[[float], float], np.ndarray]


@dataclass(frozen=True)
class VariancePath:
    """Variance trajectory on a time grid together with the rate applied."""

    times: np.ndarray
    values: np.ndarray
    rate_used: np.ndarray

    def to_csv(self, path) -> None:
        data = np.column_stack([self.times, self.values, self.rate_used])
        np.savetxt(path, data, delimiter=",", header="t,gamma,h", comments="", fmt="%.17g")


def variance_drift(gamma, h, params: ModelParams):
    """Riccati drift of the conditional variance."""
    s1b2 = params.sigma1_bar_sq
    return -(s1b2 + h) * np.asarray(gamma) ** 2 - 2.0 * params.lam * np.asarray(gamma) + params.sigma2**2


def precision_drift(gamma_check, h, params: ModelParams):
    """Drift of the conditional precision (reciprocal variance)."""
    g = np.asarray(gamma_check)
    return params.sigma1_bar_sq + h + 2.0 * params.lam * g - params.sigma2**2 * g**2


def _roots(h: float, params: ModelParams):
    """Roots gamma- < gamma+ of the constant-rate Riccati drift."""
    b = params.sigma1_bar_sq + h
    lam, s2 = params.lam, params.sigma2
    disc = lam**2 + b * s2**2
    delta = np.sqrt(disc)
    g_plus = (-lam + delta) / b
    g_minus = (-lam - delta) / b
    return b, delta, g_plus, g_minus


def solve_constant_rate(gamma0: float, h: float, t, params: ModelParams):
    """Closed-form solution of the constant-rate variance ODE.

    Accepts scalar or array t.  Degenerate cases (coincident roots) switch to
    the confluent rational form; if both the mean reversion and the signal
    weight vanish while sigma2 > 0 the variance grows linearly and
    DegenerateDynamics is raised with the analytic answer in its message.
    """
    if gamma0 < 0:
        raise InvalidParams("gamma0 must be nonnegative")
    t = np.asarray(t, dtype=float)
    b = params.sigma1_bar_sq + h
    if b == 0.0:
        if params.lam == 0.0 and params.sigma2 > 0.0:
            raise DegenerateDynamics("linear growth: gamma(t) = gamma0 + sigma2^2 * t")
        out = gamma0 * np.exp(-2.0 * params.lam * t)  # pure decay, no diffusion of the drift
        return out if out.ndim else float(out)

    b, delta, g_plus, g_minus = _roots(h, params)
    if delta < 1e-10:
        # coincident roots: confluent rational solution
        r = g_plus
        out = r + (gamma0 - r) / (1.0 + b * (gamma0 - r) * t)
        return out if out.ndim else float(out)

    e = np.exp(-2.0 * delta * t)
    num = (gamma0 - g_plus) * (g_plus - g_minus) * e
    den = (gamma0 - g_minus) - (gamma0 - g_plus) * e
    out = g_plus + num / den
    return out if out.ndim else float(out)


def _rate_at(schedule: RateSchedule, t_grid: np.ndarray, i: int) -> float:
    if callable(schedule):
        return float(schedule(t_grid[i]))
    return float(np.asarray(schedule, dtype=float)[i])


def _check_step(t_grid: np.ndarray, h_cap: float, params: ModelParams) -> None:
    step = np.max(np.diff(t_grid))
    guard = 0.1 / (params.sigma1_bar_sq + h_cap)
    if step > guard:
        raise StepSizeError(f"grid step {step:g} exceeds stability guard {guard:g}")


def integrate_variance(
    gamma0: float,
    rate_schedule: RateSchedule,
    t_grid,
    params: ModelParams,
) -> VariancePath:
    """RK4 integration of the variance ODE under a rate schedule.

    The rate is treated as constant on each grid cell (left endpoint for
    callables).  The path is clamped to [0, cap + 1e-12] after each step,
    with cap = max(uncontrolled equilibrium, gamma0); the exact flow never
    leaves that interval, so the clamp only absorbs rounding.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if gamma0 < 0:
        raise InvalidParams("gamma0 must be nonnegative")
    n = len(t_grid)
    rates = np.empty(n)
    for i in range(n):
        rates[i] = _rate_at(rate_schedule, t_grid, i)
    if np.any(rates < 0):
        raise InvalidParams("rate schedule must be nonnegative")
    _check_step(t_grid, float(np.max(rates)), params)

    from .model import gamma_inf_uncontrolled

    cap = max(gamma_inf_uncontrolled(params), gamma0) + 1e-12
    values = np.empty(n)
    values[0] = gamma0
    g = gamma0
    for i in range(n - 1):
        dt = t_grid[i + 1] - t_grid[i]
        h = rates[i]
        k1 = variance_drift(g, h, params)
        k2 = variance_drift(g + 0.5 * dt * k1, h, params)
        k3 = variance_drift(g + 0.5 * dt * k2, h, params)
        k4 = variance_drift(g + dt * k3, h, params)
        g = g + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        g = min(max(g, 0.0), cap)
        values[i + 1] = g
    return VariancePath(times=t_grid, values=values, rate_used=rates)


def initial_state_sensitivity(
    gamma0: float,
    rate_schedule: RateSchedule,
    t_grid,
    params: ModelParams,
) -> np.ndarray:
    """Derivative of the variance path with respect to its initial value.

    Integrates the linear variational ODE alongside the variance; the result
    is (0, 1]-valued and nonincreasing along nonnegative paths.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    n = len(t_grid)
    rates = np.empty(n)
    for i in range(n):
        rates[i] = _rate_at(rate_schedule, t_grid, i)
    _check_step(t_grid, float(np.max(rates)), params)

    s1b2 = params.sigma1_bar_sq
    lam = params.lam

    def rhs(state, h):
        g, beta = state
        dg = variance_drift(g, h, params)
        dbeta = -2.0 * ((s1b2 + h) * g + lam) * beta
        return np.array([dg, dbeta])

    out = np.empty(n)
    state = np.array([gamma0, 1.0])
    out[0] = 1.0
    for i in range(n - 1):
        dt = t_grid[i + 1] - t_grid[i]
        h = rates[i]
        k1 = rhs(state, h)
        k2 = rhs(state + 0.5 * dt * k1, h)
        k3 = rhs(state + 0.5 * dt * k2, h)
        k4 = rhs(state + dt * k3, h)
        state = state + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not 0.0 < state[1] <= 1.0 + 1e-12:
            raise InvalidParams(f"sensitivity left (0, 1] at t={t_grid[i + 1]}: {state[1]}")
        out[i + 1] = min(state[1], 1.0)
    return out
