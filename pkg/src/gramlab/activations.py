"""Activation functions, their derivatives, and the normalization constant.

Each activation carries hand-coded value and derivative callables (never
numerically differentiated in hot paths), a Lipschitz constant ``L`` for
the value, a smoothness constant ``beta`` bounding the derivative's
Lipschitz constant, and a declared ``analytic_nonpoly`` flag.  The flag
cannot be machine-verified (analyticity is not a finite computation);
kernel positive-definiteness for non-parallel data relies on it, so it
is recorded as documentation.

``compute_c_sigma`` returns the constant ``1 / E[sigma(Z)^2]`` for
standard normal ``Z`` that keeps hidden-layer outputs near unit norm at
initialization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

from .gauss_expect import QuadRule, default_quad, expect1

__all__ = [
    "Activation",
    "softplus",
    "relu",
    "identity",
    "compute_c_sigma",
    "check_condition_lipschitz_smooth",
    "ConditionReport",
]


@dataclass(frozen=True)
class Activation:
    """A scalar nonlinearity with its derivative and regularity constants."""

    name: str
    value: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    lipschitz_const: float
    smoothness_const: float
    analytic_nonpoly: bool

    def __repr__(self) -> str:
        return f"Activation({self.name})"


def _softplus_value(z):
    # log(1 + e^z), stable for |z| up to ~700 via logaddexp's large-z branch.
    return np.logaddexp(0.0, np.asarray(z, dtype=np.float64))


def _softplus_derivative(z):
    return expit(np.asarray(z, dtype=np.float64))


def softplus() -> Activation:
    """Smooth ramp ``log(1 + e^z)`` with logistic-sigmoid derivative."""
    return Activation(
        name="softplus",
        value=_softplus_value,
        derivative=_softplus_derivative,
        lipschitz_const=1.0,
        smoothness_const=0.25,
        analytic_nonpoly=True,
    )


def _relu_value(z):
    return np.maximum(np.asarray(z, dtype=np.float64), 0.0)


def _relu_derivative(z):
    # Convention: derivative at exactly 0 is 0.
    return np.where(np.asarray(z, dtype=np.float64) > 0.0, 1.0, 0.0)


def relu() -> Activation:
    """Hinge ``max(0, z)``.  Oracle-only: it violates the smoothness
    requirement (kink at the origin) but admits closed-form Gaussian
    expectations used to validate the quadrature engine."""
    # The derivative is flat away from the origin, so 0 is the natural
    # declared constant; the jump at 0 makes the empirical smoothness
    # check fail against any finite declaration, which is the point.
    return Activation(
        name="relu",
        value=_relu_value,
        derivative=_relu_derivative,
        lipschitz_const=1.0,
        smoothness_const=0.0,
        analytic_nonpoly=False,
    )


def identity() -> Activation:
    """The identity map; useful for linear-model oracles."""
    return Activation(
        name="identity",
        value=lambda z: np.asarray(z, dtype=np.float64),
        derivative=lambda z: np.ones_like(np.asarray(z, dtype=np.float64)),
        lipschitz_const=1.0,
        smoothness_const=0.0,
        analytic_nonpoly=False,
    )


_C_SIGMA_CACHE: dict[tuple[str, int], float] = {}


def compute_c_sigma(act: Activation, quad: QuadRule | None = None) -> float:
    """Normalization constant ``1 / E_{Z~N(0,1)}[act(Z)^2]``.

    Cached per (activation name, quadrature node count).
    """
    quad = quad if quad is not None else default_quad()
    key = (act.name, quad.nodes_per_axis)
    if key in _C_SIGMA_CACHE:
        return _C_SIGMA_CACHE[key]
    second_moment = expect1(lambda z: act.value(z) ** 2, 1.0, quad)
    if not np.isfinite(second_moment) or second_moment <= 0.0:
        raise ValueError(
            f"E[{act.name}(Z)^2] = {second_moment!r} is not a positive finite number"
        )
    c_sigma = 1.0 / second_moment
    _C_SIGMA_CACHE[key] = c_sigma
    return c_sigma


@dataclass
class ConditionReport:
    """Empirical Lipschitz/smoothness check on a grid."""

    activation: str
    empirical_lipschitz: float
    empirical_smoothness: float
    declared_lipschitz: float
    declared_smoothness: float
    lipschitz_ok: bool = field(init=False)
    smoothness_ok: bool = field(init=False)
    passed: bool = field(init=False)

    def __post_init__(self):
        slack = 1e-9
        self.lipschitz_ok = self.empirical_lipschitz <= self.declared_lipschitz + slack
        self.smoothness_ok = (
            self.empirical_smoothness <= self.declared_smoothness + slack
        )
        self.passed = self.lipschitz_ok and self.smoothness_ok


def check_condition_lipschitz_smooth(
    act: Activation, grid: np.ndarray | None = None
) -> ConditionReport:
    """Empirical sup of difference quotients of ``act`` and its derivative.

    Uses consecutive pairs of a fine sorted grid (default: 20001 points on
    [-20, 20]), which is the tightest difference quotient a fine grid sees.
    """
    if grid is None:
        grid = np.linspace(-20.0, 20.0, 20001)
    grid = np.sort(np.asarray(grid, dtype=np.float64))
    if grid.size < 10_000:
        raise ValueError("condition check needs a grid of at least 10^4 points")
    dz = np.diff(grid)
    keep = dz > 0
    dv = np.abs(np.diff(act.value(grid)))[keep]
    dd = np.abs(np.diff(act.derivative(grid)))[keep]
    dz = dz[keep]
    return ConditionReport(
        activation=act.name,
        empirical_lipschitz=float(np.max(dv / dz)),
        empirical_smoothness=float(np.max(dd / dz)),
        declared_lipschitz=act.lipschitz_const,
        declared_smoothness=act.smoothness_const,
    )
