"""Probabilistic core: normal-gamma parameters, the two training losses,
prognostic estimates, and the epsilon-correction constants.

A model output at one input point is a normal-gamma parameter vector
(m, nu, alpha, beta).  Observing y updates it conjugately; the training loss
is either the KL divergence from that posterior back to the current
parameters (kl_loss) or the negative marginal log-likelihood (student_nll).
The marginal is Student's t with 2*alpha degrees of freedom, location m and
squared scale sigma/alpha, where sigma = beta*(nu+1)/nu.  Both losses have
identical gradients, which is what training relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, psi

from .special import (alpha_table, delta_psi, digamma, default_nodes,
                      gauss_weighted_integral, hermite_rule, solve_A,
                      weighted_square_mean)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GcpParams:
    """Normal-gamma parameter vector at one input point."""

    m: float
    nu: float
    alpha: float
    beta: float

    def __post_init__(self):
        for name in ("m", "nu", "alpha", "beta"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v!r}")
        if self.nu <= 0 or self.alpha <= 0 or self.beta <= 0:
            raise ValueError(
                f"nu, alpha, beta must be positive, got "
                f"({self.nu!r}, {self.alpha!r}, {self.beta!r})")

    @property
    def sigma(self) -> float:
        return self.beta * (self.nu + 1.0) / self.nu


def sigma_of(params: GcpParams) -> float:
    """sigma = beta*(nu+1)/nu, the scale entering every derived quantity."""
    return params.sigma


def posterior_update(params: GcpParams, y: float) -> GcpParams:
    """Conjugate posterior after observing y."""
    if not math.isfinite(y):
        raise ValueError(f"observation must be finite, got {y!r}")
    m, nu, alpha, beta = params.m, params.nu, params.alpha, params.beta
    return GcpParams(
        m=(nu * m + y) / (nu + 1.0),
        nu=nu + 1.0,
        alpha=alpha + 0.5,
        beta=beta + nu * (y - m) ** 2 / (2.0 * (nu + 1.0)),
    )


def kl_loss(params: GcpParams, fixed: GcpParams, y: float) -> float:
    """KL divergence from the posterior of the snapshot `fixed` after seeing
    y, back to the normal-gamma distribution with parameters `params`.

    Nonnegative, zero exactly when params equals that posterior.  Its
    gradient in (m, nu, alpha, beta) at params == fixed coincides with the
    student_nll gradient, so minimizing either drives the same dynamics.
    """
    post = posterior_update(fixed, y)
    m, nu, alpha, beta = params.m, params.nu, params.alpha, params.beta
    mp, nup, alphap, betap = post.m, post.nu, post.alpha, post.beta
    return (
        alphap * (m - mp) ** 2 * nu / (2.0 * betap)
        + nu / (2.0 * nup)
        - 0.5 * math.log(nu / nup)
        - 0.5
        - alpha * math.log(beta / betap)
        + math.lgamma(alpha) - math.lgamma(alphap)
        - (alpha - alphap) * digamma(alphap)
        + alphap * (beta - betap) / betap
    )


def kl_grad(params: GcpParams, fixed: GcpParams, y: float):
    """Analytic gradient of kl_loss in (m, nu, alpha, beta), posterior held
    fixed (it is a function of `fixed` and y, not of `params`)."""
    post = posterior_update(fixed, y)
    m, nu, alpha, beta = params.m, params.nu, params.alpha, params.beta
    mp, nup, alphap, betap = post.m, post.nu, post.alpha, post.beta
    dm = alphap * nu * (m - mp) / betap
    dnu = alphap * (m - mp) ** 2 / (2.0 * betap) + 0.5 / nup - 0.5 / nu
    dalpha = -math.log(beta / betap) + digamma(alpha) - digamma(alphap)
    dbeta = -alpha / beta + alphap / betap
    return dm, dnu, dalpha, dbeta


def student_nll(params: GcpParams, y: float) -> float:
    """Negative log density of the marginal Student's t at y.

    The marginal has 2*alpha degrees of freedom, location m, and SQUARED
    scale sigma/alpha (sigma = beta*(nu+1)/nu), which simplifies to

        lnG(a) - lnG(a+1/2) + ln(2*pi)/2 + ln(sigma)/2
            + (a+1/2) * ln(1 + (y-m)^2/(2*sigma)).
    """
    if not math.isfinite(y):
        raise ValueError(f"observation must be finite, got {y!r}")
    m, alpha = params.m, params.alpha
    sigma = params.sigma
    z = y - m
    return (
        math.lgamma(alpha) - math.lgamma(alpha + 0.5)
        + 0.5 * LOG_2PI + 0.5 * math.log(sigma)
        + (alpha + 0.5) * math.log1p(z * z / (2.0 * sigma))
    )


def student_nll_grad(params: GcpParams, y: float):
    """Analytic gradient of student_nll in (m, nu, alpha, beta)."""
    m, nu, alpha, beta = params.m, params.nu, params.alpha, params.beta
    sigma = params.sigma
    z = y - m
    den = 2.0 * sigma + z * z
    core = (alpha * z * z - sigma) / den
    dm = -(2.0 * alpha + 1.0) * z / den
    dnu = core / (nu * (nu + 1.0))
    dalpha = delta_psi(alpha) + math.log1p(z * z / (2.0 * sigma))
    dbeta = -core / beta
    return dm, dnu, dalpha, dbeta


def nll_terms_arrays(m, nu, alpha, beta, y):
    """Vectorized student_nll and its four gradients over aligned arrays.

    Returns (nll, dm, dnu, dalpha, dbeta); used by the training loop, which
    needs per-sample values without constructing GcpParams objects.
    """
    sigma = beta * (nu + 1.0) / nu
    z = y - m
    den = 2.0 * sigma + z * z
    core = (alpha * z * z - sigma) / den
    log_term = np.log1p(z * z / (2.0 * sigma))
    nll = (gammaln(alpha) - gammaln(alpha + 0.5)
           + 0.5 * LOG_2PI + 0.5 * np.log(sigma)
           + (alpha + 0.5) * log_term)
    dm = -(2.0 * alpha + 1.0) * z / den
    dnu = core / (nu * (nu + 1.0))
    dalpha = psi(alpha) - psi(alpha + 0.5) + log_term
    dbeta = -core / beta
    return nll, dm, dnu, dalpha, dbeta


STUDENT_VARIANCE_INFINITE = math.inf


@dataclass(frozen=True)
class PrognosticEstimate:
    """Mean/variance pair read off a fitted parameter vector.

    `variance` is sigma/(alpha - A(alpha)), finite for every alpha > 0.
    `student_variance` is the plain Student's t variance sigma/(alpha - 1),
    which only exists for alpha > 1; otherwise it holds the infinity tag
    and must not be used in arithmetic (sorting and serialization handle
    the tag explicitly).
    """

    mean: float
    variance: float
    student_variance: float
    alpha: float

    @property
    def student_is_finite(self) -> bool:
        return self.student_variance != STUDENT_VARIANCE_INFINITE


def prognostic(params: GcpParams, table=None) -> PrognosticEstimate:
    """Prognostic estimate at one point; A(alpha) from the shared table."""
    table = table if table is not None else alpha_table()
    sigma = params.sigma
    alpha = params.alpha
    v_p = sigma / table.gap(alpha)
    v_st = sigma / (alpha - 1.0) if alpha > 1.0 else STUDENT_VARIANCE_INFINITE
    return PrognosticEstimate(mean=params.m, variance=v_p,
                              student_variance=v_st, alpha=alpha)


@dataclass(frozen=True)
class CorrectionConstants:
    """First-order contamination correction constants, functions of alpha."""

    b0: float
    b1: float
    b: float
    alpha: float


def correction_constants(alpha: float, sigma: float = 1.0,
                         nodes: int | None = None) -> CorrectionConstants:
    """b0, b1, b at this alpha.

    sigma is accepted to exhibit the cancellation (the result is exactly
    sigma-free: every integrand depends on y only through y^2/s with
    s = 2*(alpha - A(alpha))).  The log integral uses the shared Hermite
    rule; the normalizing integral of b uses the closed form of
    weighted_square_mean, which stays exact for extreme alpha where a fixed
    rule cannot resolve s.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha!r}")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma!r}")
    s = 2.0 * (alpha - solve_A(alpha))
    rule = hermite_rule(nodes if nodes is not None else default_nodes())
    mean_log = gauss_weighted_integral(lambda y: np.log1p(y * y / s), rule)
    b = 2.0 * alpha / ((2.0 * alpha + 1.0) * weighted_square_mean(s))
    b0 = -mean_log - delta_psi(alpha)
    b1 = mean_log + b / (2.0 * alpha + 1.0)
    return CorrectionConstants(b0=b0, b1=b1, b=b, alpha=alpha)


def corrected_variance(estimate: PrognosticEstimate, epsilon: float,
                       constants: CorrectionConstants | None = None) -> float:
    """(1 - b(alpha)*epsilon) * V_p, the first-order recovery of the
    ground-truth variance from a fit on contaminated data."""
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"epsilon must lie in [0, 1), got {epsilon!r}")
    c = constants if constants is not None else correction_constants(estimate.alpha)
    factor = 1.0 - c.b * epsilon
    if factor <= 0.0:
        raise ValueError(
            f"epsilon={epsilon} exceeds the valid correction range "
            f"1/b = {1.0 / c.b:.6g} at alpha = {estimate.alpha:.6g}")
    return factor * estimate.variance
