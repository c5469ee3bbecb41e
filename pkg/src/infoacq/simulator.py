"""Monte Carlo simulation of the coupled truth-filter-control system.

Paths are generated in the strong formulation: the hidden drift and the state
are driven by explicit Brownian increments, the innovations are reconstructed
from their defining identity, and the conditional mean is stepped with them.
The conditional variance is deterministic given the rate schedule, so it is
precomputed once per policy.  Per-path counter-based RNG streams make results
independent of chunking and enable exact common-random-number comparisons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from .errors import InvalidParams, NumericalBlowup, OrderingViolation
from .hjb import ValueTable, feedback_map
from .model import Coefficients, CostSpec, ModelParams
from .riccati import variance_drift

_BLOWUP = 1e8
_CHUNK = 500


@dataclass(frozen=True)
class SimConfig:
    """Time discretization, path count, seeding, and initial data."""

    dt: float
    horizon: float
    n_paths: int
    master_seed: int
    x0: float
    m0: float
    gamma0: float
    mu0: Optional[float] = None  # None: sample from the filter prior N(m0, gamma0)

    def __post_init__(self):
        if not 0.0 < self.dt <= 1e-2:
            raise InvalidParams("dt must lie in (0, 1e-2]")
        if self.horizon < 1.0:
            raise InvalidParams("horizon must be at least 1")
        if self.n_paths < 1:
            raise InvalidParams("n_paths must be at least 1")
        if self.gamma0 < 0.0:
            raise InvalidParams("gamma0 must be nonnegative")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass(frozen=True)
class Policy:
    """Acquisition-rate map plus the information set used by the control."""

    label: str
    rate: Callable[[float], float]
    use_truth: bool = False  # control fed the hidden drift instead of the filter


def optimal_policy(
    table: ValueTable, cost: CostSpec, coeffs: Coefficients
) -> Policy:
    return Policy(
        label="optimal", rate=lambda g: float(feedback_map(table, g, cost, coeffs))
    )


def no_acquisition_policy() -> Policy:
    return Policy(label="no_acquisition", rate=lambda g: 0.0)


def full_observation_policy() -> Policy:
    return Policy(label="full_observation", rate=lambda g: 0.0, use_truth=True)


def constant_rate_policy(h_bar: float) -> Policy:
    if h_bar < 0:
        raise InvalidParams("constant rate must be nonnegative")
    return Policy(label=f"constant_rate_{h_bar:g}", rate=lambda g: h_bar)


@dataclass(frozen=True)
class PathRecord:
    """Full trajectory of one simulated path."""

    t: np.ndarray
    X: np.ndarray
    mu: np.ndarray
    m: np.ndarray
    gamma: np.ndarray
    u: np.ndarray
    h: np.ndarray
    I1: np.ndarray  # cumulative innovations, first channel
    I2: np.ndarray
    dX: np.ndarray = field(repr=False, default=None)
    dY: np.ndarray = field(repr=False, default=None)
    cost: float = 0.0

    def to_csv(self, path) -> None:
        data = np.column_stack([self.t, self.X, self.mu, self.m, self.gamma, self.u, self.h])
        np.savetxt(
            path, data, delimiter=",", header="t,X,mu,m,gamma,u,h", comments="", fmt="%.17g"
        )


@dataclass(frozen=True)
class MCEstimate:
    """Monte Carlo cost estimate with its sampling and truncation errors."""

    policy: str
    mean: float
    std_error: float
    n_paths: int
    truncation_bound: float


def _path_generator(master_seed: int, path_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[master_seed, path_index]))


def rate_schedule(
    policy: Policy, config: SimConfig, params: ModelParams, coeffs: Coefficients
) -> Tuple[np.ndarray, np.ndarray]:
    """Deterministic variance path and rate schedule on the step grid."""
    n, dt = config.n_steps, config.dt
    gam = np.empty(n + 1)
    rates = np.empty(n + 1)
    g = config.gamma0
    for k in range(n + 1):
        gam[k] = g
        h = policy.rate(g)
        rates[k] = h
        if k < n:
            k1 = variance_drift(g, h, params)
            k2 = variance_drift(g + 0.5 * dt * k1, h, params)
            k3 = variance_drift(g + 0.5 * dt * k2, h, params)
            k4 = variance_drift(g + dt * k3, h, params)
            g = max(g + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4), 0.0)
    return gam, rates


def _simulate_chunk(
    config: SimConfig,
    policy: Policy,
    params: ModelParams,
    coeffs: Coefficients,
    cost: CostSpec,
    path_indices: np.ndarray,
    gam: np.ndarray,
    rates: np.ndarray,
    record: bool = False,
):
    """Advance a block of paths; returns costs, terminal states, optional records."""
    n, dt = config.n_steps, config.dt
    npth = len(path_indices)
    sdt = math.sqrt(dt)

    normals = np.empty((npth, n, 3))
    mu0 = np.empty(npth)
    for j, idx in enumerate(path_indices):
        gen = _path_generator(config.master_seed, int(idx))
        z0 = gen.standard_normal()
        mu0[j] = (
            config.m0 + math.sqrt(config.gamma0) * z0 if config.mu0 is None else config.mu0
        )
        normals[j] = gen.standard_normal((n, 3))

    lam, mu_bar = params.lam, params.mu_bar
    s1, s2 = params.sigma1, params.sigma2
    s1b = 1.0 / s1
    a1, a3, b1 = coeffs.a1, coeffs.a3, coeffs.b1
    c_of_h = np.asarray(cost.c(rates), dtype=float)
    disc = np.exp(-params.delta * dt * np.arange(n))

    X = np.full(npth, float(config.x0))
    mu = mu0.copy()
    m = np.full(npth, float(config.m0))
    costs = np.zeros(npth)
    alive = np.ones(npth, dtype=bool)
    I1 = np.zeros(npth)
    I2 = np.zeros(npth)

    if record:
        rec = {
            key: np.empty((npth, n + 1))
            for key in ("X", "mu", "m", "u", "I1", "I2")
        }
        dX_rec = np.empty((npth, n))
        dY_rec = np.empty((npth, n))

    for k in range(n):
        g = gam[k]
        h = rates[k]
        sqh = math.sqrt(h)
        M = mu if policy.use_truth else m
        u = -(2.0 * a1 * X + a3 * M + b1) / params.rho
        costs += alive * disc[k] * (
            0.5 * (params.kappa * X**2 + params.rho * u**2) + c_of_h[k]
        ) * dt

        if record:
            rec["X"][:, k] = X
            rec["mu"][:, k] = mu
            rec["m"][:, k] = m
            rec["u"][:, k] = u
            rec["I1"][:, k] = I1
            rec["I2"][:, k] = I2

        dB1 = sdt * normals[:, k, 0]
        dB2 = sdt * normals[:, k, 1]
        dB3 = sdt * normals[:, k, 2]
        dX = (mu + u) * dt + s1 * dB1
        dI1 = s1b * (dX - (m + u) * dt)
        dI2 = sqh * (mu - m) * dt + dB3
        dY = sqh * mu * dt + dB3

        X = X + dX
        mu = mu + lam * (mu_bar - mu) * dt + s2 * dB2
        m = m + lam * (mu_bar - m) * dt + s1b * g * dI1 + sqh * g * dI2
        I1 += dI1
        I2 += dI2

        if record:
            dX_rec[:, k] = dX
            dY_rec[:, k] = dY

        bad = np.abs(X) > _BLOWUP
        if np.any(bad):
            alive &= ~bad
            X = np.where(bad, 0.0, X)  # freeze failed paths, keep the rest going

    M = mu if policy.use_truth else m
    u = -(2.0 * a1 * X + a3 * M + b1) / params.rho
    if record:
        rec["X"][:, n] = X
        rec["mu"][:, n] = mu
        rec["m"][:, n] = m
        rec["u"][:, n] = u
        rec["I1"][:, n] = I1
        rec["I2"][:, n] = I2
        t = dt * np.arange(n + 1)
        records = [
            PathRecord(
                t=t,
                X=rec["X"][j],
                mu=rec["mu"][j],
                m=rec["m"][j],
                gamma=gam.copy(),
                u=rec["u"][j],
                h=rates.copy(),
                I1=rec["I1"][j],
                I2=rec["I2"][j],
                dX=dX_rec[j],
                dY=dY_rec[j],
                cost=float(costs[j]),
            )
            for j in range(npth)
        ]
    else:
        records = None
    return costs, X, mu, m, alive, records


def simulate_path(
    config: SimConfig,
    policy: Policy,
    params: ModelParams,
    coeffs: Coefficients,
    cost: CostSpec,
    path_index: int = 0,
) -> PathRecord:
    """Simulate a single path and return its full record."""
    gam, rates = rate_schedule(policy, config, params, coeffs)
    costs, X, mu, m, alive, records = _simulate_chunk(
        config, policy, params, coeffs, cost, np.array([path_index]), gam, rates, record=True
    )
    if not alive[0]:
        raise NumericalBlowup(f"|X| exceeded {_BLOWUP:g} on path {path_index}")
    return records[0]


def mc_cost(
    config: SimConfig,
    policy: Policy,
    params: ModelParams,
    coeffs: Coefficients,
    cost: CostSpec,
    terminal_value: Optional[Callable] = None,
) -> MCEstimate:
    """Estimate the discounted cost of a policy over n_paths paths.

    terminal_value(X, mu, m, gamma) supplies the continuation value used for
    the truncation certificate; without it the certificate falls back to the
    stationary continuation of the terminal running cost.
    """
    gam, rates = rate_schedule(policy, config, params, coeffs)
    n_total = config.n_paths
    all_costs = np.empty(n_total)
    alive_all = np.empty(n_total, dtype=bool)
    tail_terms = np.empty(n_total)
    g_T, h_T = gam[-1], rates[-1]
    for start in range(0, n_total, _CHUNK):
        idx = np.arange(start, min(start + _CHUNK, n_total))
        costs, X, mu, m, alive, _ = _simulate_chunk(
            config, policy, params, coeffs, cost, idx, gam, rates
        )
        all_costs[idx] = costs
        alive_all[idx] = alive
        if terminal_value is not None:
            tail_terms[idx] = np.abs(terminal_value(X, mu, m, g_T))
        else:
            M = mu if policy.use_truth else m
            u = -(2.0 * coeffs.a1 * X + coeffs.a3 * M + coeffs.b1) / params.rho
            tail_terms[idx] = (
                0.5 * (params.kappa * X**2 + params.rho * u**2) + float(cost.c(h_T))
            ) / params.delta
    n_fail = int(np.sum(~alive_all))
    if n_fail > 0.01 * n_total:
        raise NumericalBlowup(f"{n_fail} of {n_total} paths blew up")
    ok = alive_all
    vals = all_costs[ok]
    n_ok = len(vals)
    bound = math.exp(-params.delta * config.horizon) * float(np.mean(tail_terms[ok]))
    return MCEstimate(
        policy=policy.label,
        mean=float(np.mean(vals)),
        std_error=float(np.std(vals, ddof=1) / math.sqrt(n_ok)) if n_ok > 1 else 0.0,
        n_paths=n_ok,
        truncation_bound=bound,
    )


def compare_policies(
    config: SimConfig,
    policies: Dict[str, Policy],
    params: ModelParams,
    coeffs: Coefficients,
    cost: CostSpec,
    terminal_values: Optional[Dict[str, Callable]] = None,
    enforce_ordering: bool = True,
) -> Dict[str, MCEstimate]:
    """Run several policies on common random numbers and check the cost ordering.

    With the canonical trio {full_observation, optimal, no_acquisition} the
    estimated costs must be ordered full <= optimal <= no-acquisition up to
    three pooled standard errors plus the truncation certificates.
    """
    out: Dict[str, MCEstimate] = {}
    for name, pol in policies.items():
        tv = (terminal_values or {}).get(name)
        out[name] = mc_cost(config, pol, params, coeffs, cost, terminal_value=tv)
    if enforce_ordering:
        order = [n for n in ("full_observation", "optimal", "no_acquisition") if n in out]
        for lo_name, hi_name in zip(order, order[1:]):
            lo, hi = out[lo_name], out[hi_name]
            slack = (
                3.0 * math.hypot(lo.std_error, hi.std_error)
                + lo.truncation_bound
                + hi.truncation_bound
            )
            if lo.mean > hi.mean + slack:
                raise OrderingViolation(
                    f"{lo_name} cost {lo.mean:g} exceeds {hi_name} cost {hi.mean:g} "
                    f"beyond tolerance {slack:g}"
                )
    return out


def discrete_kalman_oracle(
    dX: np.ndarray,
    dY: np.ndarray,
    u_sched: np.ndarray,
    h_sched: np.ndarray,
    config: SimConfig,
    params: ModelParams,
) -> Tuple[np.ndarray, np.ndarray]:
    """Exact discrete Kalman filter of the Euler-discretized observation model.

    Observations on each step are the state increment net of the control and
    the acquisition-channel increment; the filter updates with both, then
    predicts through the drift autoregression.  Returns the mean and variance
    sequences aligned with the step grid.
    """
    n = len(dX)
    dt = config.dt
    lam, mu_bar = params.lam, params.mu_bar
    a = 1.0 - lam * dt
    q = params.sigma2**2 * dt
    m = float(config.m0)
    P = float(config.gamma0)
    ms = np.empty(n + 1)
    Ps = np.empty(n + 1)
    ms[0], Ps[0] = m, P
    for k in range(n):
        sqh = math.sqrt(h_sched[k])
        H = np.array([dt, sqh * dt])
        z = np.array([dX[k] - u_sched[k] * dt, dY[k]])
        R = np.array([params.sigma1**2 * dt, dt])
        for i in range(2):  # sequential scalar updates (R is diagonal)
            S_i = P * H[i] ** 2 + R[i]
            K_i = P * H[i] / S_i
            m = m + K_i * (z[i] - H[i] * m)
            P = (1.0 - K_i * H[i]) * P
        m = a * m + lam * mu_bar * dt
        P = a**2 * P + q
        ms[k + 1], Ps[k + 1] = m, P
    return ms, Ps
