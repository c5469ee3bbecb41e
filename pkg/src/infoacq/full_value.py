"""Assembled value functions: optimal, full-observation, and no-acquisition.

All three share the same quadratic shape in (state, conditional mean); they
differ only in the variance-dependent part, which is the solved reduced value
for the optimal problem, a closed-form constant for full observation, and a
quadrature value for the never-acquire benchmark.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import GammaOutOfRange
from .hjb import ValueTable, no_acquisition_value
from .model import Coefficients, CostSpec, ModelParams


@dataclass(frozen=True)
class FullValueModel:
    """Quadratic coefficients plus the solved variance-dependent parts."""

    params: ModelParams
    coeffs: Coefficients
    cost: CostSpec
    value_table: ValueTable
    constant_term: float
    # cached quadrature values of the never-acquire benchmark on the grid
    v_no_table: Optional[np.ndarray] = field(default=None, repr=False)

    @staticmethod
    def build(
        params: ModelParams,
        coeffs: Coefficients,
        cost: CostSpec,
        value_table: ValueTable,
        n_no: int = 81,
    ) -> "FullValueModel":
        constant = (coeffs.C1 + coeffs.a2 * params.sigma2**2) / params.delta
        gs = np.linspace(0.0, coeffs.gamma_max, n_no)
        v_no = np.array(
            [no_acquisition_value(g, params, coeffs, cost)[0] for g in gs]
        )
        table = np.interp(value_table.grid.nodes, gs, v_no)
        return FullValueModel(
            params=params,
            coeffs=coeffs,
            cost=cost,
            value_table=value_table,
            constant_term=constant,
            v_no_table=table,
        )

    def _check_gamma(self, gamma) -> np.ndarray:
        g = np.asarray(gamma, dtype=float)
        if np.any(g < -1e-12) or np.any(g > self.coeffs.gamma_max + 1e-12):
            raise GammaOutOfRange(f"gamma outside [0, {self.coeffs.gamma_max}]")
        return np.clip(g, 0.0, self.coeffs.gamma_max)

    def quadratic_part(self, x, m):
        c = self.coeffs
        return c.a1 * np.square(x) + c.a2 * np.square(m) + c.a3 * np.asarray(x) * np.asarray(
            m
        ) + c.b1 * np.asarray(x) + c.b2 * np.asarray(m)


def assemble_W(model: FullValueModel, x, m, gamma):
    """Value of the optimal-acquisition problem at (x, m, gamma)."""
    g = model._check_gamma(gamma)
    out = (
        model.quadratic_part(x, m)
        + model.coeffs.a2 * g
        + model.constant_term
        + model.value_table.value(g)
    )
    return out if np.ndim(out) else float(out)


def feedback_u(params: ModelParams, coeffs: Coefficients, x, m):
    """Certainty-equivalent linear feedback control, shared by all problems."""
    out = -(2.0 * coeffs.a1 * np.asarray(x) + coeffs.a3 * np.asarray(m) + coeffs.b1) / params.rho
    return out if np.ndim(out) else float(out)


def full_observation_constant(
    params: ModelParams, coeffs: Coefficients, cost: CostSpec
) -> float:
    """Constant term of the fully observed benchmark value."""
    return (coeffs.C1 + params.sigma2**2 * coeffs.a2 + float(cost.c(0.0))) / params.delta


def value_full_observation(
    params: ModelParams, coeffs: Coefficients, cost: CostSpec, x, mu
):
    """Benchmark value when the drift is directly observed."""
    c = coeffs
    out = (
        c.a1 * np.square(x)
        + c.a2 * np.square(mu)
        + c.a3 * np.asarray(x) * np.asarray(mu)
        + c.b1 * np.asarray(x)
        + c.b2 * np.asarray(mu)
        + full_observation_constant(params, coeffs, cost)
    )
    return out if np.ndim(out) else float(out)


def value_no_acquisition(model: FullValueModel, x, m, gamma):
    """Benchmark value when acquisition is forbidden."""
    g = model._check_gamma(gamma)
    if model.v_no_table is not None:
        v_no = np.interp(g, model.value_table.grid.nodes, model.v_no_table)
    else:
        v_no = np.array(
            [
                no_acquisition_value(gi, model.params, model.coeffs, model.cost)[0]
                for gi in np.atleast_1d(g)
            ]
        ).reshape(np.shape(g))
    out = model.quadratic_part(x, m) + model.coeffs.a2 * g + model.constant_term + v_no
    return out if np.ndim(out) else float(out)


def value_of_information(model: FullValueModel, gamma):
    """Benefit of optimal acquisition over never acquiring, at a variance level."""
    g = model._check_gamma(gamma)
    if model.v_no_table is not None:
        v_no = np.interp(g, model.value_table.grid.nodes, model.v_no_table)
    else:
        v_no = np.array(
            [
                no_acquisition_value(gi, model.params, model.coeffs, model.cost)[0]
                for gi in np.atleast_1d(g)
            ]
        ).reshape(np.shape(g))
    out = v_no - model.value_table.value(g)
    return out if np.ndim(out) else float(out)


def surface_csv(model: FullValueModel, path, gamma: float, xs, ms) -> None:
    """Export the three value surfaces on an (x, m) lattice at fixed gamma."""
    rows = []
    for x in xs:
        for m in ms:
            rows.append(
                [
                    x,
                    m,
                    value_full_observation(model.params, model.coeffs, model.cost, x, m),
                    assemble_W(model, x, m, gamma),
                    value_no_acquisition(model, x, m, gamma),
                ]
            )
    np.savetxt(
        path,
        np.asarray(rows),
        delimiter=",",
        header="x,m,v_full,v,v_no",
        comments="",
        fmt="%.17g",
    )
