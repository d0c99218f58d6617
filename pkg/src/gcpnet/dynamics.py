"""Idealized training dynamics on contaminated Gaussian data.

The network-free limit of the belief updates is a four-variable ODE driven
by three population integrals.  This module evaluates those integrals by
quadrature, integrates the flow, solves for equilibria by damped Newton,
and runs the two inverse-problem verifications (first-order variance
correction, super-polynomial mean closeness).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .special import (
    NumericError,
    default_nodes,
    delta_psi,
    hermite_rule,
    legendre_rule,
    solve_A,
)
from .gcp import correction_constants

DYNAMICS_NODES_DEFAULT = 512
UNIFORM_NODES = 256

ALPHA_CAP = 1e4
SOLVE_TOL = 1e-11
CERT_TOL = 1e-9


class ConditionError(ValueError):
    """A precondition on the contamination mixture is violated."""


class NonConvergenceError(RuntimeError):
    """A Newton solve failed; the message carries the iterate diagnostics."""


def _dyn_nodes(nodes):
    return nodes if nodes is not None else default_nodes(DYNAMICS_NODES_DEFAULT)


@dataclass(frozen=True)
class ContaminationSpec:
    """Mixture (1-eps) * N(m_g, v_g) + eps * outlier.

    `outlier` is ("gaussian", m_o, v_o), ("uniform", lo, hi), or
    ("standardized", family, m_o, v_o) where the only supported family is
    "gaussian".
    """

    epsilon: float
    m_g: float = 0.0
    v_g: float = 1.0
    outlier: tuple = ("gaussian", 5.0, 1.0)

    def __post_init__(self):
        if not 0.0 <= self.epsilon < 1.0:
            raise ConditionError("epsilon must lie in [0, 1)")
        if not self.v_g > 0:
            raise ConditionError("generative variance must be positive")
        kind = self.outlier[0]
        if kind == "gaussian":
            _, m_o, v_o = self.outlier
            if not v_o > 0:
                raise ConditionError("outlier variance must be positive")
        elif kind == "uniform":
            _, lo, hi = self.outlier
            if not lo < hi:
                raise ConditionError("uniform outlier requires lo < hi")
        elif kind == "standardized":
            _, family, m_o, v_o = self.outlier
            if family != "gaussian":
                raise ConditionError(f"unsupported standardized family {family!r}")
            if not v_o > 0:
                raise ConditionError("outlier variance must be positive")
        else:
            raise ConditionError(f"unknown outlier kind {kind!r}")

    def components(self):
        """(weight, kind, a, b) rows; gaussian rows carry (mean, variance),
        uniform rows carry (lo, hi)."""
        comps = []
        if self.epsilon < 1.0:
            comps.append((1.0 - self.epsilon, "gaussian", self.m_g, self.v_g))
        if self.epsilon > 0.0:
            kind = self.outlier[0]
            if kind == "gaussian":
                comps.append((self.epsilon, "gaussian",
                              self.outlier[1], self.outlier[2]))
            elif kind == "standardized":
                comps.append((self.epsilon, "gaussian",
                              self.outlier[2], self.outlier[3]))
            else:
                comps.append((self.epsilon, "uniform",
                              self.outlier[1], self.outlier[2]))
        return comps


def outlier_moments(spec: ContaminationSpec) -> dict:
    """Closed-form mean and central moments (orders 2..6) of the outlier."""
    kind = spec.outlier[0]
    if kind == "gaussian":
        _, mean, v = spec.outlier
    elif kind == "standardized":
        _, _, mean, v = spec.outlier
    else:
        _, lo, hi = spec.outlier
        mean = 0.5 * (lo + hi)
        v = (hi - lo) ** 2 / 12.0
    if kind == "uniform":
        # U(lo,hi): mu4 = 9V^2/5, mu6 = 27V^3/7, odd moments vanish
        return {"mean": mean, 2: v, 3: 0.0, 4: 1.8 * v * v, 5: 0.0,
                6: 27.0 * v**3 / 7.0}
    return {"mean": mean, 2: v, 3: 0.0, 4: 3.0 * v * v, 5: 0.0, 6: 15.0 * v**3}


@dataclass(frozen=True)
class OutlierIndicators:
    c_go: float
    d_go: float


def indicators(spec: ContaminationSpec) -> OutlierIndicators:
    """Moment combinations that measure how visible the outliers are.

    c_go = d^4 + 6 dV d^2 + 3 dV^2 + (mu4 - 3 v_o^2) + 4 mu3 d and
    d_go = d^3 + 3 dV d + mu3 with d the outlier-generative mean gap and
    dV the variance gap; both are exact, no quadrature involved.
    """
    mom = outlier_moments(spec)
    d = mom["mean"] - spec.m_g
    dv = mom[2] - spec.v_g
    excess = mom[4] - 3.0 * mom[2] ** 2
    c_go = d**4 + 6.0 * dv * d * d + 3.0 * dv * dv + excess + 4.0 * mom[3] * d
    d_go = d**3 + 3.0 * dv * d + mom[3]
    return OutlierIndicators(c_go=c_go, d_go=d_go)


def mixture_mean_variance(spec: ContaminationSpec):
    mom = outlier_moments(spec)
    mean = (1.0 - spec.epsilon) * spec.m_g + spec.epsilon * mom["mean"]
    second = ((1.0 - spec.epsilon) * (spec.v_g + spec.m_g**2)
              + spec.epsilon * (mom[2] + mom["mean"] ** 2))
    return mean, second - mean * mean


def _component_fgh(m, alpha, sigma, weight, kind, a, b, n_nodes):
    """One mixture component's contribution to (F, G, H).

    The mean integrand is evaluated pairwise over the symmetric nodes so
    that the near-cancellation at a symmetric mixture is exact instead of
    catastrophic.
    """
    two_sigma = 2.0 * sigma
    if kind == "gaussian":
        rule = hermite_rule(n_nodes)
        offsets = math.sqrt(b) * rule.nodes
        c = a - m
        z = c + offsets
        zsq = z * z
        den = two_sigma + zsq
        g_val = float(rule.weights @ np.log1p(zsq / two_sigma))
        h_val = float(rule.weights @ ((alpha * zsq - sigma) / den))
        pair_num = 2.0 * c * (two_sigma + c * c - offsets * offsets)
        pair_den = (two_sigma + (c + offsets) ** 2) * (two_sigma + (c - offsets) ** 2)
        f_val = 0.5 * float(rule.weights @ (pair_num / pair_den))
    else:
        lo, hi = a, b
        rule = legendre_rule(UNIFORM_NODES, lo, hi)
        density = 1.0 / (hi - lo)
        z = rule.nodes - m
        zsq = z * z
        den = two_sigma + zsq
        f_val = float(rule.weights @ (z / den)) * density
        g_val = float(rule.weights @ np.log1p(zsq / two_sigma)) * density
        h_val = float(rule.weights @ ((alpha * zsq - sigma) / den)) * density
    return weight * f_val, weight * g_val, weight * h_val


def fgh(m, alpha, sigma, spec: ContaminationSpec, nodes=None):
    """Population integrals driving the flow.

    F is the mean pull, H the precision imbalance, and G the evidence
    imbalance including the digamma gap, so an equilibrium is exactly
    F = G = H = 0.
    """
    if not (alpha > 0 and sigma > 0):
        raise ValueError("alpha and sigma must be positive")
    n_nodes = _dyn_nodes(nodes)
    f = g = h = 0.0
    for weight, kind, a, b in spec.components():
        df, dg, dh = _component_fgh(m, alpha, sigma, weight, kind, a, b, n_nodes)
        f += df
        g += dg
        h += dh
    g += delta_psi(alpha)
    if not (math.isfinite(f) and math.isfinite(g) and math.isfinite(h)):
        raise NumericError(f"non-finite flow integrals at m={m}, alpha={alpha}, "
                           f"sigma={sigma}")
    return f, g, h


@dataclass(frozen=True)
class DynState:
    """Belief-parameter point moved by the flow; sigma is derived."""

    m: float
    nu: float
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.nu > 0 and self.alpha > 0 and self.beta > 0):
            raise ValueError("nu, alpha, beta must be positive")

    @property
    def sigma(self):
        return self.beta * (self.nu + 1.0) / self.nu


def flow(state: DynState, spec: ContaminationSpec, nodes=None):
    """Time derivatives (dm, dnu, dalpha, dbeta) plus the induced dsigma."""
    sigma = state.sigma
    f, g, h = fgh(state.m, state.alpha, sigma, spec, nodes=nodes)
    dm = (2.0 * state.alpha + 1.0) * f
    dalpha = -g
    dbeta = h / state.beta
    dnu = -h / (state.nu * (state.nu + 1.0))
    dsigma = ((state.nu + 1.0) ** 2 / (state.nu**2 * sigma)
              + sigma / ((state.nu + 1.0) ** 2 * state.nu**2)) * h
    return dm, dnu, dalpha, dbeta, dsigma


@dataclass
class Trajectory:
    t: np.ndarray
    m: np.ndarray
    nu: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    sigma: np.ndarray
    settled: bool = False
    truncated: bool = False
    escaped: bool = False

    def end_state(self) -> DynState:
        return DynState(m=float(self.m[-1]), nu=float(self.nu[-1]),
                        alpha=float(self.alpha[-1]), beta=float(self.beta[-1]))


def _rk4_step(u, dt, rhs):
    k1 = rhs(u)
    k2 = rhs(u + 0.5 * dt * k1)
    k3 = rhs(u + 0.5 * dt * k2)
    k4 = rhs(u + dt * k3)
    return u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(state0: DynState, spec: ContaminationSpec, t_end,
              nodes=None, rtol=1e-8, atol=1e-10, max_steps=100000,
              settle_tol=None, escape_bound=None) -> Trajectory:
    """Adaptive RK4 with step doubling and positivity rejection.

    Stops early when `settle_tol` is given and all normalized derivatives
    fall below it, or when `escape_bound` is given and both alpha and
    sigma exceed it; running out of steps or shrinking the step below
    floor marks the trajectory truncated.
    """

    def rhs(u):
        m, nu, alpha, beta = u
        if nu <= 0 or alpha <= 0 or beta <= 0:
            return None
        sigma = beta * (nu + 1.0) / nu
        f, g, h = fgh(m, alpha, sigma, spec, nodes=nodes)
        return np.array([(2.0 * alpha + 1.0) * f, -h / (nu * (nu + 1.0)),
                         -g, h / beta])

    def safe_rhs(u):
        r = rhs(u)
        if r is None or not np.all(np.isfinite(r)):
            raise _StepReject
        return r

    class _StepReject(Exception):
        pass

    u = np.array([state0.m, state0.nu, state0.alpha, state0.beta])
    t = 0.0
    dt = min(1e-3, t_end) if t_end > 0 else 0.0
    ts, rows = [0.0], [u.copy()]
    settled = truncated = escaped = False
    steps = 0
    while t < t_end:
        if steps >= max_steps:
            truncated = True
            break
        steps += 1
        dt = min(dt, t_end - t)
        try:
            full = _rk4_step(u, dt, safe_rhs)
            half = _rk4_step(u, 0.5 * dt, safe_rhs)
            two_half = _rk4_step(half, 0.5 * dt, safe_rhs)
            bad = (np.any(full[1:] <= 0) or np.any(two_half[1:] <= 0)
                   or not np.all(np.isfinite(full))
                   or not np.all(np.isfinite(two_half)))
        except _StepReject:
            bad = True
        if bad:
            dt *= 0.5
            if dt < 1e-14 * max(1.0, t):
                truncated = True
                break
            continue
        scale = atol + rtol * np.abs(two_half)
        err = float(np.max(np.abs(two_half - full) / scale)) / 15.0
        if err > 1.0:
            dt *= max(0.2, 0.9 * err**-0.2)
            continue
        u = two_half + (two_half - full) / 15.0
        if np.any(u[1:] <= 0):
            u = two_half
        t += dt
        ts.append(t)
        rows.append(u.copy())
        if err > 0:
            dt *= min(5.0, 0.9 * err**-0.2)
        else:
            dt *= 5.0
        m, nu, alpha, beta = u
        if escape_bound is not None:
            sigma = beta * (nu + 1.0) / nu
            if alpha > escape_bound and sigma > escape_bound:
                escaped = True
                break
        if settle_tol is not None:
            deriv = rhs(u)
            if deriv is not None:
                rates = np.abs(deriv) / np.maximum(np.abs(u), 1e-12)
                rates[0] = abs(deriv[0]) / max(1.0, abs(u[0]))
                if float(np.max(rates)) < settle_tol:
                    settled = True
                    break
    arr = np.array(rows)
    return Trajectory(
        t=np.array(ts), m=arr[:, 0], nu=arr[:, 1], alpha=arr[:, 2],
        beta=arr[:, 3], sigma=arr[:, 3] * (arr[:, 1] + 1.0) / arr[:, 1],
        settled=settled, truncated=truncated, escaped=escaped)


@dataclass(frozen=True)
class Equilibrium:
    """Certified zero of (F, G, H); residuals are from the doubled rule."""

    m: float
    alpha: float
    sigma: float
    residuals: tuple
    converged: bool
    nodes: int
    iterations: int

    @property
    def max_residual(self):
        return max(self.residuals)


def _newton_fgh(spec, x0, nodes, max_iter=80, tol=SOLVE_TOL):
    """Damped Newton for (F,G,H)=0 over (m, ln alpha, ln sigma)."""

    def residual(x):
        m, la, ls = x
        if abs(la) > math.log(ALPHA_CAP) or abs(ls) > 60.0 or abs(m) > 1e6:
            return None
        return np.array(fgh(m, math.exp(la), math.exp(ls), spec, nodes=nodes))

    x = np.array([x0[0], math.log(x0[1]), math.log(x0[2])])
    r = residual(x)
    if r is None:
        raise NonConvergenceError("initial guess outside the admissible region")
    for it in range(1, max_iter + 1):
        norm = float(np.max(np.abs(r)))
        if norm < tol:
            return x, it
        jac = np.empty((3, 3))
        ok = True
        for j in range(3):
            h = 1e-6 * max(1.0, abs(x[j]))
            xp = x.copy(); xp[j] += h
            xm = x.copy(); xm[j] -= h
            rp, rm = residual(xp), residual(xm)
            if rp is None or rm is None:
                ok = False
                break
            jac[:, j] = (rp - rm) / (2.0 * h)
        if not ok:
            raise NonConvergenceError(f"iterate escaped at iteration {it}: {x}")
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError as exc:
            raise NonConvergenceError(f"singular Jacobian at {x}") from exc
        # trust caps keep iterates out of the flat residual valley that
        # runs toward alpha = infinity
        cap = min(1.0, 0.7 / (abs(step[1]) + 1e-300),
                  0.7 / (abs(step[2]) + 1e-300),
                  0.5 * (1.0 + abs(x[0])) / (abs(step[0]) + 1e-300))
        step = step * cap
        rnorm2 = float(np.linalg.norm(r))
        lam, accepted = 1.0, False
        for _ in range(30):
            trial = x + lam * step
            rt = residual(trial)
            if rt is not None and np.all(np.isfinite(rt)) \
                    and float(np.linalg.norm(rt)) < rnorm2:
                x, r = trial, rt
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            raise NonConvergenceError(
                f"line search stalled at iteration {it}, residual {norm:.3e}")
    raise NonConvergenceError(f"no convergence after {max_iter} iterations, "
                              f"residual {float(np.max(np.abs(r))):.3e}")


def _sigma_root(spec: ContaminationSpec, m, alpha, sigma0, nodes):
    """Root of the precision-shape balance in sigma at fixed (m, alpha).

    The balance integrand has derivative -(1+2*alpha)*E[z^2/(2s+z^2)^2] < 0,
    so the root is unique and safely bracketed in log space."""

    def hfun(ls):
        return fgh(m, alpha, math.exp(ls), spec, nodes=nodes)[2]

    lo = hi = math.log(sigma0)
    flo = fhi = hfun(lo)
    for _ in range(90):
        if flo > 0.0 and fhi < 0.0:
            break
        if flo <= 0.0:
            lo -= 0.7
            flo = hfun(lo)
        if fhi >= 0.0:
            hi += 0.7
            fhi = hfun(hi)
        if lo < -60.0 or hi > 60.0:
            raise NonConvergenceError("sigma balance could not be bracketed")
    else:
        raise NonConvergenceError("sigma balance could not be bracketed")
    if flo == 0.0:
        return math.exp(lo)
    if fhi == 0.0:
        return math.exp(hi)
    return math.exp(brentq(hfun, lo, hi, xtol=1e-14, rtol=8.9e-16))


def _profile_mean_sigma(spec: ContaminationSpec, alpha, m0, sigma0, nodes,
                        tol=1e-12):
    """Solve the mean and sigma equations jointly at fixed alpha by
    alternating the two guarded one-dimensional solves.  The cross coupling
    is weak, so the sweep contracts in a few passes."""
    m, sigma = m0, sigma0
    for _ in range(40):
        m = solve_mean_root(spec, alpha, sigma, start=m, nodes=nodes)
        sigma = _sigma_root(spec, m, alpha, sigma, nodes)
        f, g, h = fgh(m, alpha, sigma, spec, nodes=nodes)
        if abs(f) < tol and abs(h) < tol:
            return m, sigma, g
    raise NonConvergenceError("mean/sigma profile sweep did not contract")


def _nested_equilibrium(spec: ContaminationSpec, guess, nodes):
    """Fallback solve for stiff cases where the joint Newton creeps along
    the nearly singular (alpha, sigma) valley.  The mean and sapp-shape
    equations are eliminated by guarded one-dimensional solves, leaving a
    scalar profile equation in alpha that Brent's method brackets."""
    state = {"m": guess[0], "sigma": guess[2], "count": 0}

    def gfun(la):
        alpha = math.exp(la)
        m, sigma, g = _profile_mean_sigma(spec, alpha, state["m"],
                                          state["sigma"], nodes)
        state["m"], state["sigma"] = m, sigma
        state["count"] += 1
        return g

    lo = math.log(guess[1]) - 0.4
    hi = math.log(guess[1]) + 0.4
    flo, fhi = gfun(lo), gfun(hi)
    for _ in range(60):
        if flo == 0.0:
            lo, hi = lo, lo
            break
        if fhi == 0.0:
            lo, hi = hi, hi
            break
        if flo * fhi < 0.0:
            break
        if abs(flo) < abs(fhi):
            new_lo = max(lo - 0.7, math.log(1e-2))
            if new_lo == lo:
                raise NonConvergenceError("alpha profile has no sign change")
            lo = new_lo
            flo = gfun(lo)
        else:
            new_hi = min(hi + 0.7, math.log(ALPHA_CAP))
            if new_hi == hi:
                raise NonConvergenceError("alpha profile has no sign change")
            hi = new_hi
            fhi = gfun(hi)
    else:
        raise NonConvergenceError("alpha profile could not be bracketed")
    if lo == hi:
        la = lo
    else:
        la = brentq(gfun, lo, hi, xtol=1e-13, rtol=8.9e-16)
    alpha = math.exp(la)
    m, sigma, _ = _profile_mean_sigma(spec, alpha, state["m"],
                                      state["sigma"], nodes)
    return np.array([m, la, math.log(sigma)]), state["count"]


def newton_equilibrium(spec: ContaminationSpec, guess, nodes=None,
                       cert_tol=CERT_TOL) -> Equilibrium:
    """Newton solve from an explicit (m, alpha, sigma) guess, then certify
    the root by re-evaluating the integrals at twice the node count."""
    n_nodes = _dyn_nodes(nodes)
    try:
        x, iters = _newton_fgh(spec, guess, n_nodes)
    except NonConvergenceError:
        x, iters = _nested_equilibrium(spec, guess, n_nodes)
    m, alpha, sigma = float(x[0]), math.exp(x[1]), math.exp(x[2])
    res2 = np.abs(fgh(m, alpha, sigma, spec, nodes=2 * n_nodes))
    converged = bool(np.max(res2) < cert_tol)
    eq = Equilibrium(m=m, alpha=alpha, sigma=sigma,
                     residuals=tuple(float(v) for v in res2),
                     converged=converged, nodes=n_nodes, iterations=iters)
    if not converged:
        raise NonConvergenceError(
            f"root failed certification at doubled nodes: residuals {eq.residuals}")
    return eq


def check_condition(spec: ContaminationSpec):
    """Raise unless the mixture admits a finite equilibrium claim."""
    if spec.epsilon <= 0.0:
        raise ConditionError("epsilon must be positive: without contamination "
                             "the flow has no finite equilibrium")
    ind = indicators(spec)
    if not ind.c_go > 0.0:
        raise ConditionError(f"outlier indicator c_go = {ind.c_go} is not "
                             "positive (Condition violated)")
    return ind


def asymptotic_guess(spec: ContaminationSpec):
    """Leading-order equilibrium location for small contamination.

    alpha ~ 3 v_g^2 / (c_go eps) and the mean picks up the first two
    epsilon orders; sigma follows the Gaussian balance at that alpha.
    """
    ind = check_condition(spec)
    mom = outlier_moments(spec)
    eps = spec.epsilon
    first = (mom["mean"] - spec.m_g) * eps
    second = -ind.c_go * ind.d_go / (6.0 * spec.v_g**3) * eps * eps
    offset = first + second
    # the eps^2 term dwarfs the linear one at moderate eps; never let it
    # flip the guess to the wrong side of the generative mean
    if first != 0.0 and (offset * first <= 0.0 or abs(offset) < 1e-3 * abs(first)):
        offset = 1e-3 * first
    alpha0 = max(3.0 * spec.v_g**2 / (ind.c_go * eps), 0.05)
    sigma0 = spec.v_g * max(alpha0 - solve_A(alpha0), 1e-3)
    return (spec.m_g + offset, alpha0, sigma0)


def equilibrium(spec: ContaminationSpec, guess=None, nodes=None) -> Equilibrium:
    """Certified equilibrium; warm-starts from a short flow integration
    when no guess is supplied, falling back to the small-eps asymptotics
    if Newton cannot polish the integrated state."""
    check_condition(spec)
    if guess is None:
        mean_c, var_c = mixture_mean_variance(spec)
        start = DynState(m=mean_c, nu=1.0, alpha=1.5, beta=0.5 * var_c)
        traj = integrate(start, spec, t_end=400.0, nodes=nodes,
                         settle_tol=1e-6, max_steps=20000)
        end = traj.end_state()
        try:
            return newton_equilibrium(spec, (end.m, end.alpha, end.sigma),
                                      nodes=nodes)
        except NonConvergenceError:
            return newton_equilibrium(spec, asymptotic_guess(spec), nodes=nodes)
    if isinstance(guess, DynState):
        guess = (guess.m, guess.alpha, guess.sigma)
    return newton_equilibrium(spec, guess, nodes=nodes)


def equilibrium_sweep(eps_values, m_g=0.0, v_g=1.0, outlier=("gaussian", 5.0, 1.0),
                      nodes=None, guess=None, max_step_ratio=2.0):
    """Equilibria along an epsilon grid with continuation warm starts.

    Epsilons are solved in descending order; each solution seeds the next
    guess with the leading-order scalings (alpha ~ 1/eps, m - m_g ~ eps).
    Gaps wider than `max_step_ratio` are bridged by solving unreported
    geometric midpoints so every continuation step stays well conditioned.
    Returns (eps, Equilibrium) pairs in the caller's order.
    """
    requested = [float(e) for e in eps_values]
    chain = sorted(set(requested), reverse=True)
    padded = [chain[0]]
    for nxt in chain[1:]:
        prev = padded[-1]
        ratio = prev / nxt
        if ratio > max_step_ratio:
            k = math.ceil(math.log(ratio) / math.log(max_step_ratio))
            for i in range(1, k):
                padded.append(prev * (nxt / prev) ** (i / k))
        padded.append(nxt)
    solved = {}
    prev = None
    for eps in padded:
        spec = ContaminationSpec(epsilon=eps, m_g=m_g, v_g=v_g, outlier=outlier)
        if prev is None:
            eq = equilibrium(spec, guess=guess, nodes=nodes)
        else:
            # the previous equilibrium sits below the next root in alpha,
            # the side from which Newton reliably converges
            _, eq_prev = prev
            try:
                eq = newton_equilibrium(spec, (eq_prev.m, eq_prev.alpha,
                                               eq_prev.sigma), nodes=nodes)
            except NonConvergenceError:
                eq = newton_equilibrium(spec, asymptotic_guess(spec), nodes=nodes)
        solved[eps] = eq
        prev = (eps, eq)
    return [(e, solved[e]) for e in requested]


DEFAULT_VERIFY_EPS = (0.08, 0.04, 0.02, 0.01, 0.005)


def _newton_2d(residual, x0, max_iter=80, tol=1e-13, max_halvings=40):
    """Damped Newton in two variables with a central-difference Jacobian."""
    x = np.asarray(x0, dtype=float)
    r = residual(x)
    if r is None:
        raise NonConvergenceError("inverse-problem guess out of range")
    for it in range(1, max_iter + 1):
        norm = float(np.max(np.abs(r)))
        if norm < tol:
            return x, it
        jac = np.empty((2, 2))
        for j in range(2):
            h = 1e-7 * max(1.0, abs(x[j]))
            xp = x.copy(); xp[j] += h
            xm = x.copy(); xm[j] -= h
            rp, rm = residual(xp), residual(xm)
            if rp is None or rm is None:
                raise NonConvergenceError(f"iterate escaped at iteration {it}")
            jac[:, j] = (rp - rm) / (2.0 * h)
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError as exc:
            raise NonConvergenceError("singular inverse-problem Jacobian") from exc
        lam, accepted = 1.0, False
        for _ in range(max_halvings):
            trial = x + lam * step
            rt = residual(trial)
            if rt is not None and np.all(np.isfinite(rt)) \
                    and float(np.max(np.abs(rt))) < norm:
                x, r = trial, rt
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            raise NonConvergenceError(
                f"inverse line search stalled at iteration {it}, "
                f"residual {norm:.3e}")
    raise NonConvergenceError("inverse problem did not converge")


@dataclass(frozen=True)
class VarianceRow:
    epsilon: float
    v_g: float
    m_o: float
    deviation: float
    slope: float
    converged: bool


@dataclass(frozen=True)
class VarianceReport:
    alpha: float
    sigma: float
    v_p: float
    b: float
    rows: tuple

    def ratios(self):
        """deviation(eps)/deviation(2 eps) for consecutive halvings."""
        out = []
        for prev, cur in zip(self.rows, self.rows[1:]):
            if abs(prev.epsilon - 2.0 * cur.epsilon) < 1e-12 * prev.epsilon:
                out.append(cur.deviation / prev.deviation)
        return out


def variance_warm_start(alpha, sigma, eps, v_p, consts):
    """First-order generative variance and the exponential outlier location
    that keep (alpha, sigma) in balance at contamination eps."""
    v_g0 = v_p * max(1.0 - consts.b * eps, 0.05)
    m_o0 = math.sqrt(2.0 * sigma) * math.exp(0.5 * consts.b1) \
        * math.exp(0.5 * consts.b0 / eps)
    return v_g0, m_o0


def verify_variance_correction(alpha, sigma, eps_seq=DEFAULT_VERIFY_EPS,
                               v_o=1.0, m_g=0.0, nodes=None) -> VarianceReport:
    """Inverse-equilibrium check of the first-order variance correction.

    For each epsilon, solve for the generative variance v_g and outlier
    location m_o that make the fixed (alpha, sigma) an equilibrium of the
    evidence and precision equations at m = m_g; report the deviation of
    v_g from the first-order law (1 - b eps) v_p, whose halving ratios
    approach 1/4.
    """
    if not (alpha > 0 and sigma > 0):
        raise ValueError("alpha and sigma must be positive")
    n_nodes = _dyn_nodes(nodes)
    gap = alpha - solve_A(alpha)
    v_p = sigma / gap
    consts = correction_constants(alpha, sigma, nodes=n_nodes)
    rows = []
    for eps in eps_seq:
        eps = float(eps)
        if eps == 0.0:
            rows.append(VarianceRow(epsilon=0.0, v_g=v_p, m_o=math.nan,
                                    deviation=0.0, slope=math.nan,
                                    converged=True))
            continue

        def residual(x, eps=eps):
            lv, lm = x
            if abs(lv) > 30.0 or lm > 700.0:
                return None
            spec = ContaminationSpec(
                epsilon=eps, m_g=m_g, v_g=math.exp(lv),
                outlier=("gaussian", m_g + math.exp(lm), v_o))
            _, g, h = fgh(m_g, alpha, sigma, spec, nodes=n_nodes)
            return np.array([g, h])

        v_g0, m_o0 = variance_warm_start(alpha, sigma, eps, v_p, consts)
        try:
            x, _ = _newton_2d(residual, (math.log(v_g0), math.log(m_o0)))
            v_g, m_o = math.exp(x[0]), math.exp(x[1])
            deviation = abs(v_g - (1.0 - consts.b * eps) * v_p)
            slope = (v_p - v_g) / (eps * v_p)
            rows.append(VarianceRow(epsilon=eps, v_g=v_g, m_o=m_g + m_o,
                                    deviation=deviation, slope=slope,
                                    converged=True))
        except NonConvergenceError:
            rows.append(VarianceRow(epsilon=eps, v_g=math.nan, m_o=math.nan,
                                    deviation=math.nan, slope=math.nan,
                                    converged=False))
    return VarianceReport(alpha=alpha, sigma=sigma, v_p=v_p, b=consts.b,
                          rows=tuple(rows))


def solve_mean_root(spec: ContaminationSpec, alpha, sigma, start=None,
                    nodes=None, max_iter=60):
    """Root of the mean-pull integral near the generative mean.

    Newton with the analytic derivative of F; the folded evaluation keeps
    sub-femto roots meaningful when the mixture is nearly symmetric.
    """
    n_nodes = _dyn_nodes(nodes)
    two_sigma = 2.0 * sigma

    def f_and_deriv(m):
        f = 0.0
        d = 0.0
        for weight, kind, a, b in spec.components():
            fv, _, _ = _component_fgh(m, alpha, sigma, weight, kind, a, b,
                                      n_nodes)
            f += fv
            if kind == "gaussian":
                rule = hermite_rule(n_nodes)
                z = a - m + math.sqrt(b) * rule.nodes
            else:
                rule = legendre_rule(UNIFORM_NODES, a, b)
                z = rule.nodes - m
            zsq = z * z
            dd = (zsq - two_sigma) / (two_sigma + zsq) ** 2
            val = float(rule.weights @ dd)
            if kind != "gaussian":
                val /= (b - a)
            d += weight * val
        return f, d

    m = float(start) if start is not None else spec.m_g
    f, d = f_and_deriv(m)
    f0 = abs(f)
    if f0 == 0.0:
        return m
    for _ in range(max_iter):
        if d == 0.0:
            raise NonConvergenceError("flat mean derivative")
        step = -f / d
        lam = 1.0
        for _ in range(40):
            trial = m + lam * step
            ft, dt = f_and_deriv(trial)
            if abs(ft) < abs(f):
                m, f, d = trial, ft, dt
                break
            lam *= 0.5
        else:
            return m
        if abs(f) < 1e-13 * f0 or abs(lam * step) < 1e-30 * max(1.0, abs(m)):
            return m
    return m


@dataclass(frozen=True)
class MeanRow:
    epsilon: float
    v_g: float
    m_o: float
    m_p: float
    deviation: float
    converged: bool


@dataclass(frozen=True)
class MeanReport:
    alpha: float
    sigma: float
    m_g: float
    rows: tuple

    def power_ratios(self, k):
        """deviation / eps^k per row, the sequence that must decay."""
        return [row.deviation / row.epsilon**k for row in self.rows
                if row.epsilon > 0]


def verify_mean_exponential(alpha, sigma, eps_seq=DEFAULT_VERIFY_EPS,
                            v_o=1.0, m_g=0.0, nodes=None) -> MeanReport:
    """Super-polynomial closeness of the fitted mean to the generative mean.

    Reuses the inverse-problem mixtures from the variance verification and
    solves the mean-pull root at each epsilon; the deviation |m_p - m_g|
    must fall faster than eps^2 and eps^3.
    """
    var_report = verify_variance_correction(alpha, sigma, eps_seq=eps_seq,
                                            v_o=v_o, m_g=m_g, nodes=nodes)
    rows = []
    for vr in var_report.rows:
        if vr.epsilon == 0.0:
            rows.append(MeanRow(epsilon=0.0, v_g=vr.v_g, m_o=math.nan,
                                m_p=m_g, deviation=0.0, converged=True))
            continue
        if not vr.converged:
            rows.append(MeanRow(epsilon=vr.epsilon, v_g=math.nan, m_o=math.nan,
                                m_p=math.nan, deviation=math.nan,
                                converged=False))
            continue
        spec = ContaminationSpec(epsilon=vr.epsilon, m_g=m_g, v_g=vr.v_g,
                                 outlier=("gaussian", vr.m_o, v_o))
        m_p = solve_mean_root(spec, alpha, sigma, nodes=nodes)
        rows.append(MeanRow(epsilon=vr.epsilon, v_g=vr.v_g, m_o=vr.m_o,
                            m_p=m_p, deviation=abs(m_p - m_g), converged=True))
    return MeanReport(alpha=alpha, sigma=sigma, m_g=m_g, rows=tuple(rows))


def field_grid(alpha_values, sigma_values, spec: ContaminationSpec,
               m=None, nu=1.0, nodes=None):
    """(alpha, sigma, dalpha, dsigma) rows over a grid at fixed m and nu."""
    if m is None:
        m = spec.m_g
    rows = []
    for alpha in alpha_values:
        for sigma in sigma_values:
            _, g, h = fgh(m, float(alpha), float(sigma), spec, nodes=nodes)
            dalpha = -g
            dsigma = ((nu + 1.0) ** 2 / (nu**2 * sigma)
                      + sigma / ((nu + 1.0) ** 2 * nu**2)) * h
            rows.append((float(alpha), float(sigma), dalpha, dsigma))
    return rows
