"""Special functions and Gaussian quadrature shared by the numeric modules.

The central object is the function A(alpha), defined for every alpha > 0 as
the unique root of

    (2*alpha + 1) * E[y^2 / (2*(alpha - A) + y^2)] - 1 = 0,    y ~ N(0, 1),

which enters the prognostic variance sigma / (alpha - A(alpha)).  A(alpha)
increases monotonically from 0 to 1 and always satisfies A(alpha) < alpha.

With s = 2*(alpha - A) the expectation collapses to 1 - R(s), where

    R(s) = sqrt(pi*s/2) * exp(s/2) * erfc(sqrt(s/2)),

so the root solve reduces to a scalar bisection on a residual evaluated via
scipy's erfcx with no quadrature error at all.  A Gauss-Hermite evaluation of
the same residual is kept alongside for cross-checking; the closed form is
what production code uses because a fixed Hermite rule loses the integrand
once s leaves the node range (128 nodes resolve it only for alpha roughly in
[1, 200], while the table below spans [1e-3, 1e3]).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.special import erfcx, roots_hermite, roots_legendre


class NumericError(RuntimeError):
    """A quadrature or solver produced a non-finite or uncertifiable result."""


# coefficients of the de Moivre tail: psi(x) ~ ln x - 1/(2x) - sum c_k x^(-2k)
_PSI_TAIL = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)


def digamma(x: float) -> float:
    """Digamma via the ascending recurrence and the asymptotic tail.

    Accurate to about 1e-13 relative for x >= 1e-6.  Raises ValueError for
    non-positive arguments.
    """
    if not x > 0:
        raise ValueError(f"digamma requires a positive argument, got {x!r}")
    acc = 0.0
    while x < 10.0:
        acc -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    tail = 0.0
    for c in reversed(_PSI_TAIL):
        tail = inv2 * (c + tail)
    return acc + math.log(x) - 0.5 / x - tail


def delta_psi(alpha: float) -> float:
    """Psi(alpha) - Psi(alpha + 1/2); strictly negative, increasing to 0."""
    if not alpha > 0:
        raise ValueError(f"delta_psi requires alpha > 0, got {alpha!r}")
    return digamma(alpha) - digamma(alpha + 0.5)


@dataclass(frozen=True)
class QuadratureRule:
    """Immutable node/weight pair.

    kind "gauss-hermite-standardized" integrates against the standard normal
    density (weights sum to 1); kind "gauss-legendre-on-interval" integrates
    dy over [lo, hi] (weights sum to hi - lo).
    """

    nodes: np.ndarray
    weights: np.ndarray
    kind: str

    def __post_init__(self):
        self.nodes.setflags(write=False)
        self.weights.setflags(write=False)


@lru_cache(maxsize=32)
def hermite_rule(n: int) -> QuadratureRule:
    """Standardized Gauss-Hermite rule: exact for E[p(y)], y ~ N(0,1)."""
    if n < 1:
        raise ValueError("node count must be positive")
    # scipy's Golub-Welsch stays stable at high order; numpy's hermgauss
    # overflows its recurrence near n = 400
    x, w = roots_hermite(n)
    return QuadratureRule(x * math.sqrt(2.0), w / math.sqrt(math.pi),
                          "gauss-hermite-standardized")


@lru_cache(maxsize=32)
def _legendre_raw(n: int):
    return roots_legendre(n)


def legendre_rule(n: int, lo: float, hi: float) -> QuadratureRule:
    """Gauss-Legendre rule mapped onto [lo, hi]; weights carry the dy measure."""
    if not lo < hi:
        raise ValueError(f"empty interval [{lo}, {hi}]")
    x, w = _legendre_raw(n)
    half = 0.5 * (hi - lo)
    return QuadratureRule(lo + half * (x + 1.0), w * half,
                          "gauss-legendre-on-interval")


def gauss_weighted_integral(f, rule: QuadratureRule) -> float:
    """Sum w_i f(y_i); for the hermite kind this approximates E[f(y)], y~N(0,1)."""
    vals = np.asarray(f(rule.nodes), dtype=float)
    acc = float(np.dot(rule.weights, vals))
    if not math.isfinite(acc):
        raise NumericError("integrand produced a non-finite value at a node")
    return acc


def default_nodes(fallback: int = 128) -> int:
    """Node-count default, overridable through GCP_QUAD_NODES."""
    raw = os.environ.get("GCP_QUAD_NODES")
    if raw is None:
        return fallback
    n = int(raw)
    if n < 1:
        raise ValueError("GCP_QUAD_NODES must be a positive integer")
    return n


def rational_mean_complement(s: float) -> float:
    """R(s) = s * E[1/(s + y^2)] = sqrt(pi s/2) erfcx(sqrt(s/2)), so that
    E[y^2/(s + y^2)] = 1 - R(s).  Monotone increasing from 0 to 1."""
    if s < 0:
        raise ValueError("s must be nonnegative")
    if s == 0.0:
        return 0.0
    return math.sqrt(0.5 * math.pi * s) * float(erfcx(math.sqrt(0.5 * s)))


def weighted_square_mean(s: float) -> float:
    """E[s*y^2/(s + y^2)^2] for y ~ N(0,1), via d/ds of the mean above:
    equals (R(s)*(1+s) - s)/2 exactly."""
    if s < 0:
        raise ValueError("s must be nonnegative")
    if s == 0.0:
        return 0.0
    r = rational_mean_complement(s)
    return 0.5 * (r * (1.0 + s) - s)


def a_equation_residual(alpha: float, a: float, rule: QuadratureRule | None = None) -> float:
    """Residual of the defining equation of A(alpha) at the trial value a.

    (2*alpha+1) * E[y^2/(2(alpha-a)+y^2)] - 1, strictly increasing in a.
    With no rule the expectation is evaluated in closed form; passing a
    hermite rule evaluates it by quadrature instead (cross-check path).
    """
    s = 2.0 * (alpha - a)
    if rule is None:
        mean = 1.0 - rational_mean_complement(s)
    else:
        mean = gauss_weighted_integral(lambda y: y * y / (s + y * y), rule)
    return (2.0 * alpha + 1.0) * mean - 1.0


def solve_A(alpha: float) -> float:
    """Solve for A(alpha) by bisection on (0, min(1, alpha)).

    The residual is negative at 0+ and positive at the cap, so plain
    bisection cannot fail; the upper endpoint is guarded with a shrinking
    offset to keep the initial bracket strict.  Resolution is driven to the
    floating-point limit (far below the 1e-12 contract on A).
    """
    if not alpha > 0:
        raise ValueError(f"solve_A requires alpha > 0, got {alpha!r}")
    cap = min(1.0, alpha)
    delta = 1e-6 * cap
    while a_equation_residual(alpha, cap - delta) <= 0.0:
        delta *= 0.5
        if delta < 1e-300:
            raise NumericError(f"bisection bracket failure at alpha={alpha}")
    lo, hi = 0.0, cap - delta
    if a_equation_residual(alpha, lo) >= 0.0:
        raise NumericError(f"bisection bracket failure at alpha={alpha}")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if a_equation_residual(alpha, mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class AlphaTable:
    """Precomputed A(alpha) on a log grid with monotone interpolation.

    Interpolates log(2*(alpha - A)) against log(alpha), which is nearly
    piecewise linear (slope 2 for small alpha, slope 1 for large), so the
    derived alpha - A keeps full relative accuracy where A -> alpha would
    cancel catastrophically.  Queries outside the grid fall back to the
    direct solve.
    """

    alphas: np.ndarray
    a_values: np.ndarray
    _interp: PchipInterpolator = field(repr=False)

    @classmethod
    def build(cls, lo: float = 1e-3, hi: float = 1e3, n: int = 512) -> "AlphaTable":
        alphas = np.logspace(math.log10(lo), math.log10(hi), n)
        a_vals = np.array([solve_A(a) for a in alphas])
        interp = PchipInterpolator(np.log(alphas), np.log(2.0 * (alphas - a_vals)))
        return cls(alphas, a_vals, interp)

    def gap(self, alpha: float) -> float:
        """alpha - A(alpha), the quantity the prognostic variance divides by."""
        if not alpha > 0:
            raise ValueError("alpha must be positive")
        if alpha < self.alphas[0] or alpha > self.alphas[-1]:
            return alpha - solve_A(alpha)
        return 0.5 * math.exp(float(self._interp(math.log(alpha))))

    def gap_many(self, alphas) -> np.ndarray:
        """Vectorized gap over an array of alphas (prediction-time path)."""
        arr = np.asarray(alphas, dtype=float)
        if np.any(arr <= 0):
            raise ValueError("alpha values must be positive")
        out = np.empty_like(arr)
        inside = (arr >= self.alphas[0]) & (arr <= self.alphas[-1])
        if np.any(inside):
            out[inside] = 0.5 * np.exp(self._interp(np.log(arr[inside])))
        for i in np.nonzero(~inside)[0]:
            out[i] = arr[i] - solve_A(arr[i])
        return out

    def __call__(self, alpha: float) -> float:
        return alpha - self.gap(alpha)


_TABLE: AlphaTable | None = None


def alpha_table() -> AlphaTable:
    """Shared lazily-built table (immutable, safe to share across threads)."""
    global _TABLE
    if _TABLE is None:
        _TABLE = AlphaTable.build()
    return _TABLE
