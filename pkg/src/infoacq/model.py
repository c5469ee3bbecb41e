"""Model parameters, acquisition cost functions, and closed-form coefficients.

The quadratic-ansatz coefficients (a1, a2, a3, b1, b2) and the derived
constants (a_bar, C1, L_v, M0, h_max) are all evaluated in closed form here;
everything downstream (HJB solver, equilibrium, simulator) consumes the
immutable ``Coefficients`` bundle produced by :func:`derive_coefficients`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import CostRangeError, DomainError, InvalidParams

# Cap applied when the inverse marginal cost overflows (tiny power exponents).
H_MAX_CAP = 1e12

# Log-spaced probe set used to sample-check convexity/monotonicity of costs.
_PROBE = np.logspace(-6.0, 6.0, 25)


@dataclass(frozen=True)
class ModelParams:
    """The seven scalar model parameters.

    lam       mean-reversion speed of the hidden drift (>= 0)
    mu_bar    long-run mean of the hidden drift
    sigma1    observable-state volatility (> 0)
    sigma2    hidden-drift volatility (>= 0)
    delta     discount rate (> 0)
    kappa     state cost weight (> 0)
    rho       control cost weight (> 0)
    """

    lam: float
    mu_bar: float
    sigma1: float
    sigma2: float
    delta: float
    kappa: float
    rho: float

    def __post_init__(self):
        checks = [
            ("sigma1", self.sigma1 > 0),
            ("delta", self.delta > 0),
            ("kappa", self.kappa > 0),
            ("rho", self.rho > 0),
            ("lam", self.lam >= 0),
            ("sigma2", self.sigma2 >= 0),
        ]
        for name, ok in checks:
            if not ok or not math.isfinite(getattr(self, name)):
                raise InvalidParams(f"parameter {name}={getattr(self, name)} violates its constraint")
        if not math.isfinite(self.mu_bar):
            raise InvalidParams("mu_bar must be finite")

    @property
    def sigma1_bar_sq(self) -> float:
        """Inverse squared state volatility (the filter's signal weight)."""
        return 1.0 / self.sigma1**2


@dataclass(frozen=True)
class CostSpec:
    """Information-acquisition cost c with derivatives and inverse derivative.

    Construct via the :meth:`power`, :meth:`quadratic`,
    :meth:`affine_quadratic`, or :meth:`custom` factories.  The standing
    requirements (strictly increasing, strictly convex, nonnegative, finite
    at zero) are sample-checked on a log-spaced probe set at construction.
    """

    kind: str
    zeta: float = 0.0
    epsilon: float = 1.0
    linear: float = 0.0
    _c: Optional[Callable] = field(default=None, repr=False)
    _cp: Optional[Callable] = field(default=None, repr=False)
    _cpp: Optional[Callable] = field(default=None, repr=False)

    # -- factories ---------------------------------------------------------

    @staticmethod
    def power(zeta: float, epsilon: float) -> "CostSpec":
        if zeta <= 0 or epsilon <= 0:
            raise InvalidParams("power cost requires zeta > 0 and epsilon > 0")
        return CostSpec(kind="power", zeta=zeta, epsilon=epsilon)

    @staticmethod
    def quadratic(zeta: float) -> "CostSpec":
        if zeta <= 0:
            raise InvalidParams("quadratic cost requires zeta > 0")
        return CostSpec(kind="quadratic", zeta=zeta)

    @staticmethod
    def affine_quadratic(zeta: float, linear: float) -> "CostSpec":
        if zeta <= 0 or linear < 0:
            raise InvalidParams("affine-quadratic cost requires zeta > 0 and linear >= 0")
        return CostSpec(kind="affine_quadratic", zeta=zeta, linear=linear)

    @staticmethod
    def custom(c: Callable, c_prime: Callable, c_double_prime: Callable) -> "CostSpec":
        spec = CostSpec(kind="custom", _c=c, _cp=c_prime, _cpp=c_double_prime)
        spec.validate()
        return spec

    def validate(self) -> None:
        """Sample-check the standing cost assumptions on the probe set."""
        c0 = float(self.c(0.0))
        if not math.isfinite(c0) or c0 < 0:
            raise InvalidParams("c(0) must be finite and nonnegative")
        cp = np.asarray(self.c_prime(_PROBE), dtype=float)
        cpp = np.asarray(self.c_double_prime(_PROBE), dtype=float)
        cv = np.asarray(self.c(_PROBE), dtype=float)
        if not np.all(cp > 0):
            raise InvalidParams("cost is not strictly increasing on the probe set")
        if not np.all(cpp > 0):
            raise InvalidParams("cost is not strictly convex on the probe set")
        if not np.all(cv >= 0):
            raise InvalidParams("cost takes negative values on the probe set")

    # -- evaluation --------------------------------------------------------

    def c(self, h):
        h = np.asarray(h, dtype=float)
        if self.kind == "power":
            out = self.zeta * h ** (1.0 + self.epsilon)
        elif self.kind == "quadratic":
            out = self.zeta * h**2
        elif self.kind == "affine_quadratic":
            out = self.zeta * h**2 + self.linear * h
        else:
            out = np.asarray(self._c(h), dtype=float)
        return out if out.ndim else float(out)

    def c_prime(self, h):
        h = np.asarray(h, dtype=float)
        if self.kind == "power":
            out = self.zeta * (1.0 + self.epsilon) * h**self.epsilon
        elif self.kind == "quadratic":
            out = 2.0 * self.zeta * h
        elif self.kind == "affine_quadratic":
            out = 2.0 * self.zeta * h + self.linear
        else:
            out = np.asarray(self._cp(h), dtype=float)
        return out if out.ndim else float(out)

    def c_double_prime(self, h):
        h = np.asarray(h, dtype=float)
        if self.kind == "power":
            e = self.epsilon
            out = self.zeta * (1.0 + e) * e * h ** (e - 1.0)
        elif self.kind in ("quadratic", "affine_quadratic"):
            out = np.full_like(h, 2.0 * self.zeta)
        else:
            out = np.asarray(self._cpp(h), dtype=float)
        return out if out.ndim else float(out)

    @property
    def c_prime_zero(self) -> float:
        """Marginal cost at zero acquisition (the activation level)."""
        if self.kind in ("power", "quadratic"):
            return 0.0
        if self.kind == "affine_quadratic":
            return self.linear
        return float(self._cp(0.0))

    def c_prime_inv(self, x, h_hi: float = H_MAX_CAP):
        """Inverse of c' on [c'(0), c'(h_hi)].

        Closed form for the built-in kinds; bisection (absolute tolerance
        1e-12) for custom costs, which is unconditionally robust because c'
        is strictly increasing.
        """
        x = np.asarray(x, dtype=float)
        if self.kind == "power":
            with np.errstate(over="ignore"):
                out = (x / (self.zeta * (1.0 + self.epsilon))) ** (1.0 / self.epsilon)
        elif self.kind == "quadratic":
            out = x / (2.0 * self.zeta)
        elif self.kind == "affine_quadratic":
            out = np.maximum(x - self.linear, 0.0) / (2.0 * self.zeta)
        else:
            out = _bisect_increasing(lambda h: np.asarray(self._cp(h), dtype=float), x, 0.0, h_hi)
        return out if out.ndim else float(out)


def _bisect_increasing(fn, target, lo, hi, tol=1e-12, max_iter=200):
    """Vectorized bisection for a strictly increasing scalar function."""
    target = np.atleast_1d(np.asarray(target, dtype=float))
    lo_a = np.full_like(target, lo)
    hi_a = np.full_like(target, hi)
    if np.any(fn(np.full_like(target, hi)) < target - 1e-15):
        raise CostRangeError("c' does not attain the requested value on the bracket")
    for _ in range(max_iter):
        mid = 0.5 * (lo_a + hi_a)
        below = fn(mid) < target
        lo_a = np.where(below, mid, lo_a)
        hi_a = np.where(below, hi_a, mid)
        if np.max(hi_a - lo_a) < tol:
            break
    return 0.5 * (lo_a + hi_a)


@dataclass(frozen=True)
class Coefficients:
    """Closed-form ansatz coefficients and derived constants."""

    a1: float
    a2: float
    a3: float
    b1: float
    b2: float
    a_bar: float
    C1: float
    gamma_inf0: float
    gamma_max: float
    L_v: float
    M0: float
    h_max: float


def gamma_inf_uncontrolled(params: ModelParams) -> float:
    """Stable equilibrium of the uncontrolled conditional variance."""
    lam, s1, s2 = params.lam, params.sigma1, params.sigma2
    return -lam * s1**2 + math.sqrt(lam**2 * s1**4 + s1**2 * s2**2)


def coefficient_residuals(params: ModelParams, a1, a2, a3, b1, b2):
    """The five defining algebraic residuals of the separated system."""
    lam, mu, d, k, r = params.lam, params.mu_bar, params.delta, params.kappa, params.rho
    return (
        -2.0 * a1**2 / r + k / 2.0 - d * a1,
        a3 - a3**2 / (2.0 * r) - 2.0 * lam * a2 - d * a2,
        2.0 * a1 - 2.0 * a1 * a3 / r - lam * a3 - d * a3,
        lam * mu * a3 - 2.0 * a1 * b1 / r - d * b1,
        b1 - a3 * b1 / r + 2.0 * lam * mu * a2 - lam * b2 - d * b2,
    )


def derive_coefficients(params: ModelParams, cost: CostSpec, gamma_max: float) -> Coefficients:
    """Evaluate the closed-form coefficients and derived constants.

    Raises InvalidParams when gamma_max does not exceed the uncontrolled
    equilibrium variance, and CostRangeError when the inverse marginal cost
    cannot attain M0 (custom costs only).
    """
    gamma_inf0 = gamma_inf_uncontrolled(params)
    if not gamma_max > gamma_inf0:
        raise InvalidParams(
            f"gamma_max={gamma_max} must exceed the uncontrolled equilibrium {gamma_inf0}"
        )
    cost.validate()

    lam, mu, d, r = params.lam, params.mu_bar, params.delta, params.rho
    k = params.kappa
    root = math.sqrt(d**2 * r**2 + 4.0 * k * r)
    a1 = -d * r / 4.0 + root / 4.0
    a3 = 2.0 * a1 * r / (d * r + lam * r + 2.0 * a1)
    a2 = a3 * (2.0 * r - a3) / (2.0 * r * (2.0 * lam + d))
    b1 = lam * mu * a3 * r / (d * r + 2.0 * a1)
    b2 = (2.0 * lam * mu * a2 * r - b1 * a3 + b1 * r) / (r * (lam + d))
    a_bar = a3**2 / (2.0 * r)
    C1 = params.sigma1**2 * a1 + lam * mu * b2 - b1**2 / (2.0 * r)

    L_v = a_bar / d
    M0 = gamma_max**2 * L_v
    if cost.c_prime_zero > M0:
        raise CostRangeError(
            "c'(0) exceeds M0: the inverse marginal cost is undefined at M0"
        )
    h_max = float(cost.c_prime_inv(M0))
    if not math.isfinite(h_max) or h_max > H_MAX_CAP:
        warnings.warn(
            f"inverse marginal cost at M0 overflows; clamping h_max to {H_MAX_CAP:g}",
            RuntimeWarning,
        )
        h_max = H_MAX_CAP
    if h_max <= 0:
        raise CostRangeError("h_max must be strictly positive")

    res = coefficient_residuals(params, a1, a2, a3, b1, b2)
    scale = max(1.0, abs(a1), abs(a2), abs(a3), abs(b1), abs(b2))
    if max(abs(x) for x in res) > 1e-10 * scale:
        raise InvalidParams(f"coefficient residuals too large: {res}")
    if not (a1 > 0 and 4.0 * a1 * a2 - a3**2 > 0):
        raise InvalidParams("ansatz Hessian not positive definite")
    alt = a3 - a2 * (2.0 * lam + d)
    if abs(alt - a_bar) > 1e-10 * max(1.0, abs(a_bar)):
        raise InvalidParams("the two expressions for a_bar disagree")

    return Coefficients(
        a1=a1, a2=a2, a3=a3, b1=b1, b2=b2, a_bar=a_bar, C1=C1,
        gamma_inf0=gamma_inf0, gamma_max=gamma_max, L_v=L_v, M0=M0, h_max=h_max,
    )


def h_hat(cost: CostSpec, x, h_max: float):
    """Maximizer of h*x - c(h) over [0, h_max] (zero below c'(0))."""
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(arr < -1e-12):
        raise DomainError("h_hat argument must be nonnegative")
    m0 = float(cost.c_prime(h_max))
    if np.any(arr > m0 * (1.0 + 1e-9) + 1e-12):
        raise DomainError("h_hat argument exceeds the marginal cost at h_max")
    arr = np.clip(arr, 0.0, None)
    cp0 = cost.c_prime_zero
    out = np.zeros_like(arr)
    active = arr > cp0
    if np.any(active):
        out[active] = cost.c_prime_inv(arr[active], h_hi=h_max * (1.0 + 1e-6))
    out = np.clip(out, 0.0, h_max)
    return out if np.ndim(x) else float(out[0])


def c_star(cost: CostSpec, x, h_max: float):
    """Restricted convex conjugate max_h {h*x - c(h)} over [0, h_max]."""
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(arr < -1e-12):
        raise DomainError("c_star argument must be nonnegative")
    arr = np.clip(arr, 0.0, None)
    hstar = np.atleast_1d(h_hat(cost, arr, h_max))
    out = hstar * arr - np.asarray(cost.c(hstar), dtype=float)
    return out if np.ndim(x) else float(out[0])
