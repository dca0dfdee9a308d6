"""One- and two-dimensional Gaussian expectations.

This is the engine behind every kernel-recursion entry: expectations
``E[f(u)]`` and ``E[f(u) g(v)]`` over (possibly correlated) centered
Gaussians, evaluated by tensor-product Gauss-Hermite quadrature in the
probabilists' convention (weights normalized to sum to 1).

Everything in the system reduces to 1-D or 2-D marginals; no quadrature
above dimension 2 exists here by design.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import roots_hermitenorm

__all__ = [
    "Cov2",
    "QuadRule",
    "default_quad",
    "expect1",
    "expect2",
    "mc_expect2",
]

# Diagonal entries at or below this are treated as exactly degenerate
# (the variable is the constant 0).
_DEGENERATE_VARIANCE = 1e-14
# Correlations within this of +-1 are clipped to perfect correlation.
_PERFECT_RHO_TOL = 1e-12
# PSD violations beyond this (relative to scale) are hard errors.
_PSD_TOL = 1e-12


@dataclass(frozen=True)
class Cov2:
    """A 2x2 symmetric covariance matrix [[a11, a12], [a12, a22]]."""

    a11: float
    a12: float
    a22: float

    def __post_init__(self):
        for name in ("a11", "a12", "a22"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ValueError(f"Cov2.{name} = {v!r} is not finite")
        scale = max(1.0, self.a11, self.a22)
        if self.a11 < -_PSD_TOL * scale or self.a22 < -_PSD_TOL * scale:
            raise ValueError(f"Cov2 has negative diagonal: {self}")
        if self.a12 * self.a12 > self.a11 * self.a22 + _PSD_TOL * scale * scale:
            raise ValueError(f"Cov2 is not positive semi-definite: {self}")

    def correlation(self) -> float:
        denom = np.sqrt(self.a11 * self.a22)
        if denom <= 0.0:
            raise ValueError("correlation undefined for degenerate diagonal")
        return float(np.clip(self.a12 / denom, -1.0, 1.0))

    def as_matrix(self) -> np.ndarray:
        return np.array([[self.a11, self.a12], [self.a12, self.a22]])


@dataclass(frozen=True)
class QuadRule:
    """Gauss-Hermite rule (probabilists' convention, normalized weights)."""

    nodes_per_axis: int
    nodes: np.ndarray
    weights: np.ndarray

    @staticmethod
    def build(nodes_per_axis: int = 80) -> "QuadRule":
        if not 20 <= nodes_per_axis <= 400:
            raise ValueError("node count must lie in [20, 400]")
        x, w = roots_hermitenorm(nodes_per_axis)
        w = w / w.sum()  # normalize: weights of an expectation sum to 1
        x = np.ascontiguousarray(x)
        w = np.ascontiguousarray(w)
        x.flags.writeable = False
        w.flags.writeable = False
        return QuadRule(nodes_per_axis=nodes_per_axis, nodes=x, weights=w)


@lru_cache(maxsize=None)
def _cached_rule(n: int) -> QuadRule:
    return QuadRule.build(n)


def default_quad() -> QuadRule:
    """The shared default rule: 80 nodes per axis."""
    return _cached_rule(80)


def expect1(f: Callable, variance: float, quad: QuadRule | None = None) -> float:
    """``E[f(z)]`` for ``z ~ N(0, variance)``."""
    if variance < 0.0:
        raise ValueError(f"negative variance {variance!r}")
    quad = quad if quad is not None else default_quad()
    if variance <= _DEGENERATE_VARIANCE:
        return float(np.asarray(f(np.array(0.0))))
    scaled = np.sqrt(variance) * quad.nodes
    return float(np.dot(quad.weights, f(scaled)))


def _tensor_gh(f: Callable, g: Callable, cov: Cov2, quad: QuadRule) -> float:
    """Tensor-product Gauss-Hermite evaluation of ``E[f(u) g(v)]``."""
    a11, a12, a22 = cov.a11, cov.a12, cov.a22
    c1 = a12 / np.sqrt(a11)
    c2 = np.sqrt(max(a22 - a12 * a12 / a11, 0.0))
    z = quad.nodes
    u = np.sqrt(a11) * z  # varies along axis 0
    v = c1 * z[:, None] + c2 * z[None, :]
    fu = np.asarray(f(u))  # shape (n,)
    gv = np.asarray(g(v))  # shape (n, n)
    # sum_{ij} w_i w_j f(u_i) g(v_ij)
    return float(np.dot(quad.weights * fu, gv @ quad.weights))


def _adaptive_expect2(f: Callable, g: Callable, cov: Cov2) -> float:
    """Nested adaptive quadrature fallback for non-smooth integrands.

    Gauss-Hermite converges slowly when the integrand has a kink (e.g.
    relu factors), so such cases are integrated with QUADPACK on both
    axes: ``E[f(u) g(v)] = E_u[f(u) E[g(v) | u]]`` with Gaussian
    conditional law ``v | u ~ N((a12/a11) u, a22 - a12^2/a11)``.
    """
    from scipy.integrate import quad as spquad

    a11, a12, a22 = cov.a11, cov.a12, cov.a22
    cond_mean_slope = a12 / a11
    cond_sd = np.sqrt(max(a22 - a12 * a12 / a11, 0.0))
    sd_u = np.sqrt(a11)
    norm_u = 1.0 / (sd_u * np.sqrt(2.0 * np.pi))
    norm_v = 1.0 / (cond_sd * np.sqrt(2.0 * np.pi))

    def h(u):
        mean = cond_mean_slope * u

        def inner(v):
            return norm_v * np.exp(-0.5 * ((v - mean) / cond_sd) ** 2) * float(
                np.asarray(g(np.array(v)))
            )

        val, _ = spquad(inner, -np.inf, np.inf, epsabs=1e-11, epsrel=1e-11, limit=300)
        return val

    def outer(u):
        return (
            norm_u
            * np.exp(-0.5 * (u / sd_u) ** 2)
            * float(np.asarray(f(np.array(u))))
            * h(u)
        )

    val, _ = spquad(outer, -np.inf, np.inf, epsabs=1e-9, epsrel=1e-9, limit=300)
    return val


def expect2(
    f: Callable, g: Callable, cov: Cov2, quad: QuadRule | None = None
) -> float:
    """``E[f(u) g(v)]`` for ``(u, v) ~ N(0, cov)``.

    Correlated samples come from the Cholesky transform
    ``u = sqrt(a11) z1``, ``v = (a12/sqrt(a11)) z1 + sqrt(a22 - a12^2/a11) z2``
    with a tensor-product rule over ``(z1, z2)``.  Degenerate covariances
    (a zero diagonal, or |correlation| at 1) reduce to 1-D expectations.

    The rule's accuracy is self-checked against a coarser nested rule;
    smooth integrands (the kernel-recursion workload) agree to rounding
    and stay on the fast path, while kinked integrands escalate to an
    adaptive fallback so the returned value is accurate regardless.
    """
    quad = quad if quad is not None else default_quad()
    a11, a12, a22 = cov.a11, cov.a12, cov.a22
    if a11 <= _DEGENERATE_VARIANCE:
        # u is the constant 0.
        f0 = float(np.asarray(f(np.array(0.0))))
        return f0 * expect1(g, max(a22, 0.0), quad)
    if a22 <= _DEGENERATE_VARIANCE:
        g0 = float(np.asarray(g(np.array(0.0))))
        return g0 * expect1(f, a11, quad)
    rho = cov.correlation()
    if abs(rho) >= 1.0 - _PERFECT_RHO_TOL:
        # Perfect correlation: v is a deterministic multiple of u.
        slope = np.sign(rho) * np.sqrt(a22 / a11)
        return expect1(lambda z: f(z) * g(slope * z), a11, quad)
    fine = _tensor_gh(f, g, cov, quad)
    coarse = _tensor_gh(f, g, cov, _cached_rule(max(20, quad.nodes_per_axis // 2)))
    if abs(fine - coarse) <= max(1e-10, 1e-12 * abs(fine)):
        return fine
    return _adaptive_expect2(f, g, cov)


def mc_expect2(
    f: Callable, g: Callable, cov: Cov2, samples: int, rng
) -> tuple[float, float]:
    """Monte Carlo estimate of ``E[f(u) g(v)]`` with its standard error.

    Independent oracle for the quadrature path; ``rng`` is a
    :class:`gramlab.numlin.Rng`.
    """
    if samples < 10_000:
        raise ValueError("mc_expect2 needs at least 10^4 samples")
    a11, a12, a22 = cov.a11, cov.a12, cov.a22
    z = rng.normal((2, samples))
    if a11 <= _DEGENERATE_VARIANCE:
        u = np.zeros(samples)
        v = np.sqrt(max(a22, 0.0)) * z[0]
    else:
        u = np.sqrt(a11) * z[0]
        c2sq = max(a22 - a12 * a12 / a11, 0.0)
        v = (a12 / np.sqrt(a11)) * z[0] + np.sqrt(c2sq) * z[1]
    vals = np.asarray(f(u)) * np.asarray(g(v))
    mean = float(np.mean(vals))
    std_error = float(np.std(vals, ddof=1) / np.sqrt(samples))
    return mean, std_error
