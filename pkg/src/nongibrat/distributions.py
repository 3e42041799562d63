"""Stationary profit densities: log-normal, Pareto tail, and the combined form.

The combined density on ``[xmin, xcap]`` is

    P(x) = C * x**(-mu-1) * exp(-alpha * ln(x/x0)**2)    xmin <= x <= x0
    P(x) = C * x**(-mu-1)                                 x0 < x <= xcap

In the ``EXACT_DB`` variant the right-hand side is further divided by the kernel
height ``d(x)`` of the accompanying ``NonGibratProfile``, which makes the joint
density ``P(x1) Q(x2/x1 | x1) / x1`` exactly symmetric within each regime.

All densities are handled internally in ``t = ln x`` through ``PiecewiseDensity``:
closed-form power-law pieces plus Gauss-Legendre tabulated pieces for the curved
middle region.  Quantiles are exact inverses of the tabulated CDF (Newton steps
safeguarded by bisection).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from functools import cached_property

import numpy as np
from scipy import integrate

from .errors import DomainError, NumericalError
from .growth_kernel import NonGibratProfile

DEFAULT_XCAP = 1e9
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(10)


class Variant(str, Enum):
    CONSTANT_D = "constant_d"
    EXACT_DB = "exact_db"


# ---------------------------------------------------------------- log-normal


@dataclass(frozen=True)
class LogNormalParams:
    sigma: float
    xbar: float

    def __post_init__(self):
        if not (self.sigma > 0 and self.xbar > 0):
            raise DomainError("sigma and xbar must be positive")

    def pdf(self, x):
        return eval_lognormal_pdf(self, x)


def eval_lognormal_pdf(p: LogNormalParams, x):
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError("log-normal density needs x > 0")
    z = np.log(x / p.xbar)
    return np.exp(-0.5 * (z / p.sigma) ** 2) / (x * p.sigma * math.sqrt(2 * math.pi))


def lognormal_params_from_nongibrat(alpha: float, mu: float, x0: float) -> LogNormalParams:
    """sigma^2 = 1/(2 alpha) and xbar = x0 * exp(-mu sigma^2)."""
    if alpha <= 0:
        raise DomainError("alpha = 0 has no log-normal limit")
    s2 = 1.0 / (2.0 * alpha)
    return LogNormalParams(sigma=math.sqrt(s2), xbar=x0 * math.exp(-mu * s2))


def nongibrat_from_lognormal(p: LogNormalParams, x0: float) -> tuple[float, float]:
    """Inverse of :func:`lognormal_params_from_nongibrat`: returns (alpha, mu)."""
    s2 = p.sigma**2
    return 1.0 / (2.0 * s2), math.log(x0 / p.xbar) / s2


# ---------------------------------------------------------------- pieces in t = ln x


class _PowerPiece:
    """Weight ``w(t) = exp(logw_a - k*(t - ta))`` on ``[ta, tb]`` (x**(-k-1) in x)."""

    def __init__(self, ta, tb, k, logw_a):
        self.ta, self.tb, self.k, self.logw_a = float(ta), float(tb), float(k), float(logw_a)
        self.width = self.tb - self.ta
        self._denom = self._unit_mass(self.width)

    def _unit_mass(self, s):
        # integral of exp(-k*v) over [0, s]
        k = self.k
        if abs(k * self.width) < 1e-12:
            return s
        return -np.expm1(-k * s) / k

    @property
    def log_mass(self):
        return self.logw_a + math.log(self._denom) if self._denom > 0 else -math.inf

    def logw(self, t):
        return self.logw_a - self.k * (t - self.ta)

    def cdf(self, t):
        s = np.clip(t - self.ta, 0.0, self.width)
        return self._unit_mass(s) / self._denom

    def ppf(self, p):
        k = self.k
        if abs(k * self.width) < 1e-12:
            return self.ta + p * self.width
        return self.ta - np.log1p(-p * (-np.expm1(-k * self.width))) / k


class _TabulatedPiece:
    """Arbitrary smooth log-weight on ``[ta, tb]``, integrated cell by cell."""

    def __init__(self, ta, tb, logw, n_cells=256):
        self.ta, self.tb = float(ta), float(tb)
        self.logw = logw
        self.edges = np.linspace(self.ta, self.tb, n_cells + 1)
        h = np.diff(self.edges)
        mid = 0.5 * (self.edges[:-1] + self.edges[1:])
        nodes = mid[:, None] + 0.5 * h[:, None] * _GL_NODES[None, :]
        lw = logw(nodes)
        self.shift = float(np.max(lw))
        cell = 0.5 * h * (np.exp(lw - self.shift) @ _GL_WEIGHTS)
        self.cum = np.concatenate([[0.0], np.cumsum(cell)])
        self.total = self.cum[-1]

    @property
    def log_mass(self):
        return self.shift + math.log(self.total)

    def _partial(self, t, idx):
        # scaled integral from the start of cell idx to t
        a = self.edges[idx]
        h = t - a
        nodes = a[..., None] + 0.5 * h[..., None] * (_GL_NODES + 1.0)
        return 0.5 * h * (np.exp(self.logw(nodes) - self.shift) @ _GL_WEIGHTS)

    def cdf(self, t):
        t = np.clip(np.asarray(t, dtype=float), self.ta, self.tb)
        idx = np.clip(np.searchsorted(self.edges, t, side="right") - 1, 0, len(self.edges) - 2)
        return (self.cum[idx] + self._partial(t, idx)) / self.total

    def ppf(self, p, rtol=1e-12):
        p = np.asarray(p, dtype=float)
        target = p * self.total
        idx = np.clip(np.searchsorted(self.cum, target, side="right") - 1, 0, len(self.edges) - 2)
        lo = self.edges[idx].copy()
        hi = self.edges[idx + 1].copy()
        cell = self.cum[idx + 1] - self.cum[idx]
        frac = np.where(cell > 0, (target - self.cum[idx]) / np.where(cell > 0, cell, 1.0), 0.0)
        t = lo + frac * (hi - lo)
        rem = target - self.cum[idx]
        active = np.ones(t.shape, dtype=bool)
        for _ in range(60):
            ia = np.nonzero(active)[0]
            ta, ida = t[ia], idx[ia]
            f = self._partial(ta, ida) - rem[ia]
            lo[ia] = np.where(f < 0, ta, lo[ia])
            hi[ia] = np.where(f > 0, ta, hi[ia])
            dens = np.exp(self.logw(ta) - self.shift)
            step = np.where(dens > 0, f / np.where(dens > 0, dens, 1.0), 0.0)
            t_new = ta - step
            bad = (t_new < lo[ia]) | (t_new > hi[ia]) | ~np.isfinite(t_new)
            t_new = np.where(bad, 0.5 * (lo[ia] + hi[ia]), t_new)
            t[ia] = t_new
            active[ia] = np.abs(t_new - ta) > rtol * np.maximum(1.0, np.abs(ta))
            if not active.any():
                break
        return t


class PiecewiseDensity:
    """Normalized density on ``[exp(t0), exp(tn)]`` assembled from contiguous pieces."""

    def __init__(self, pieces):
        self.pieces = list(pieces)
        logm = np.array([p.log_mass for p in self.pieces])
        top = logm.max()
        m = np.exp(logm - top)
        self.log_norm = top + math.log(m.sum())
        self.masses = m / m.sum()
        self.cum_masses = np.concatenate([[0.0], np.cumsum(self.masses)])
        self.breaks = np.array([self.pieces[0].ta] + [p.tb for p in self.pieces])

    @property
    def lo(self):
        return math.exp(self.breaks[0])

    @property
    def hi(self):
        return math.exp(self.breaks[-1])

    def _piece_index(self, t):
        # a breakpoint belongs to the piece on its left
        return np.clip(np.searchsorted(self.breaks, t, side="left") - 1, 0, len(self.pieces) - 1)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        t = np.log(x)
        out = np.full(t.shape, -np.inf)
        idx = self._piece_index(t)
        inside = (t >= self.breaks[0] - 1e-13) & (t <= self.breaks[-1] + 1e-13)
        for i, p in enumerate(self.pieces):
            sel = inside & (idx == i)
            if np.any(sel):
                out[sel] = p.logw(t[sel]) - self.log_norm - t[sel]
        return out

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def cdf(self, x):
        t = np.log(np.asarray(x, dtype=float))
        out = np.zeros(t.shape)
        for i, p in enumerate(self.pieces):
            out = out + self.masses[i] * p.cdf(np.clip(t, p.ta, p.tb))
        return np.clip(out, 0.0, 1.0)

    def ppf(self, q):
        q = np.asarray(q, dtype=float)
        if np.any((q <= 0) | (q >= 1)):
            raise DomainError("quantile level must lie in (0, 1)")
        idx = np.clip(np.searchsorted(self.cum_masses, q, side="right") - 1, 0, len(self.pieces) - 1)
        t = np.empty(q.shape)
        for i, p in enumerate(self.pieces):
            sel = idx == i
            if np.any(sel):
                local = (q[sel] - self.cum_masses[i]) / self.masses[i]
                t[sel] = p.ppf(np.clip(local, 0.0, 1.0))
        return np.exp(t)

    def sample(self, rng: np.random.Generator, n: int):
        if n < 1:
            raise DomainError("n must be >= 1")
        u = rng.random(n)
        # u = 0 has probability 2**-53 but would leave the open interval
        u = np.where(u == 0.0, 0.5 / 2**53, u)
        return self.ppf(u)


def _kinked_log_weight(mu, gamma, x0, xkink, theta_shift=0.0, profile=None):
    """log of x*P(x) up to a constant: -mu*u - gamma*uc*(2u - uc) - ln d(x).

    ``uc`` is ``u = ln(x/x0)`` clipped to ``[ln(xkink/x0), 0]``, so the curvature acts
    only between ``xkink`` and ``x0``; outside it the weight is a pure power.
    """
    um = math.log(xkink / x0)
    lx0 = math.log(x0)

    def logw(t):
        u = t - lx0
        uc = np.clip(u, um, 0.0)
        out = -mu * u - gamma * uc * (2.0 * u - uc)
        if profile is not None:
            out = out - np.log(profile.d(np.exp(t)))
        return out

    return logw


def stationary_density(
    mu: float,
    gamma: float,
    x0: float,
    xkink: float,
    lo: float,
    hi: float,
    profile: NonGibratProfile | None = None,
) -> PiecewiseDensity:
    """Density ``x**(-mu-1) exp(-gamma*uc*(2u-uc)) / d(x)`` on ``[lo, hi]``.

    With ``lo = xkink`` this is the combined form; with ``lo < xkink`` the density
    continues below ``xkink`` as a power law matching the log-slope at ``xkink``.
    ``profile=None`` drops the ``1/d(x)`` factor.
    """
    if not (0 < lo <= xkink <= x0 < hi):
        raise DomainError("need 0 < lo <= xkink <= x0 < hi")
    logw = _kinked_log_weight(mu, gamma, x0, xkink, profile=profile)
    tl, tk, t0, th = math.log(lo), math.log(xkink), math.log(x0), math.log(hi)
    um = tk - t0
    pieces = []
    if tk > tl:
        # below xkink: frozen exponents, d constant
        pieces.append(_PowerPiece(tl, tk, mu + 2.0 * gamma * um, float(logw(np.array(tl)))))
    if t0 > tk:
        pieces.append(_TabulatedPiece(tk, t0, logw))
    pieces.append(_PowerPiece(t0, th, mu, float(logw(np.array(t0)))))
    return PiecewiseDensity(pieces)


# ---------------------------------------------------------------- combined distribution


def _combined_integrand(mu, alpha, x0, profile):
    lx0 = math.log(x0)

    def f(t):
        u = t - lx0
        g = -mu * u - (alpha * u * u if u <= 0 else 0.0)
        if profile is not None:
            g -= math.log(float(profile.d(math.exp(t))))
        return math.exp(g)

    return f


def normalization_constant(
    mu: float,
    alpha: float,
    x0: float,
    xmin: float,
    xcap: float = DEFAULT_XCAP,
    variant: Variant = Variant.CONSTANT_D,
    profile: NonGibratProfile | None = None,
    epsrel: float = 1e-10,
) -> float:
    """C such that the combined density integrates to one over ``[xmin, xcap]``.

    Adaptive quadrature in ``t = ln x``, split at ``x0``.
    """
    if not (0 < xmin <= x0 < xcap):
        raise DomainError("need 0 < xmin <= x0 < xcap")
    variant = Variant(variant)
    if variant is Variant.EXACT_DB and profile is None:
        raise DomainError("EXACT_DB needs a NonGibratProfile")
    f = _combined_integrand(mu, alpha, x0, profile if variant is Variant.EXACT_DB else None)
    total = 0.0
    for a, b in ((math.log(xmin), math.log(x0)), (math.log(x0), math.log(xcap))):
        if b <= a:
            continue
        out = integrate.quad(f, a, b, epsabs=0.0, epsrel=epsrel, limit=500, full_output=1)
        val, err, info = out[:3]
        # a fourth element is quadpack's warning message
        if len(out) > 3 or not np.isfinite(val) or val <= 0:
            raise NumericalError(
                "normalization quadrature did not converge",
                {"interval": (math.exp(a), math.exp(b)), "value": val, "abserr": err,
                 "neval": info.get("neval"), "message": out[3] if len(out) > 3 else None},
            )
        total += val
    # integrand was in units of x0**(-mu) per unit t
    return x0**mu / total


@dataclass(frozen=True)
class CombinedDistribution:
    """Pareto tail above ``x0`` joined to a log-normal middle region down to ``xmin``."""

    mu: float
    alpha: float
    x0: float
    xmin: float
    xcap: float = DEFAULT_XCAP
    variant: Variant = Variant.CONSTANT_D
    profile: NonGibratProfile | None = None

    def __post_init__(self):
        if not (self.mu > 0):
            raise DomainError("mu must be positive")
        if self.alpha < 0:
            raise DomainError("alpha must be nonnegative")
        if not (0 < self.xmin <= self.x0 < self.xcap):
            raise DomainError("need 0 < xmin <= x0 < xcap")
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.variant is Variant.EXACT_DB and self.profile is None:
            raise DomainError("EXACT_DB needs a NonGibratProfile")

    @classmethod
    def from_profile(cls, profile: NonGibratProfile, variant=Variant.EXACT_DB):
        """Distribution consistent with ``profile``: mu = t_plus(x0) - t_minus(x0)."""
        return cls(mu=profile.mu, alpha=profile.alpha, x0=profile.x0, xmin=profile.xmin,
                   xcap=profile.xcap, variant=variant, profile=profile)

    def with_variant(self, variant) -> "CombinedDistribution":
        return self if Variant(variant) is self.variant else replace(self, variant=Variant(variant))

    @property
    def _dprofile(self):
        return self.profile if self.variant is Variant.EXACT_DB else None

    @cached_property
    def C(self) -> float:
        return normalization_constant(self.mu, self.alpha, self.x0, self.xmin, self.xcap,
                                      self.variant, self.profile)

    @cached_property
    def density(self) -> PiecewiseDensity:
        return stationary_density(self.mu, self.alpha, self.x0, self.xmin, self.xmin, self.xcap,
                                  self._dprofile)

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        tol = 1e-12
        if np.any((x < self.xmin * (1 - tol)) | (x > self.xcap * (1 + tol))):
            raise DomainError(f"x outside the support [{self.xmin}, {self.xcap}]")
        return x

    def logpdf(self, x):
        x = self._check(x)
        u = np.log(x / self.x0)
        out = math.log(self.C) - (self.mu + 1.0) * np.log(x) - self.alpha * np.where(u <= 0, u * u, 0.0)
        if self._dprofile is not None:
            out = out - np.log(self.profile.d(x))
        return out

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def dlogpdf_dlogx(self, x):
        """Analytic d ln P / d ln x."""
        x = self._check(x)
        u = np.log(x / self.x0)
        out = -(self.mu + 1.0) - 2.0 * self.alpha * np.where(u <= 0, u, 0.0)
        if self._dprofile is not None:
            out = out - self.profile.dlog_d_dlogx(x)
        return out

    def cdf(self, x):
        return self.density.cdf(self._check(x))

    def ppf(self, p):
        return self.density.ppf(p)

    def sample(self, rng: np.random.Generator, n: int):
        return self.density.sample(rng, n)

    @property
    def middle_mass(self) -> float:
        """Probability of ``xmin <= x <= x0``."""
        return float(self.density.cdf(np.array(self.x0)))


def eval_combined_pdf(dist: CombinedDistribution, x, variant=None):
    if variant is not None:
        dist = dist.with_variant(variant)
    return dist.pdf(x)


def quantile(dist: CombinedDistribution, p, variant=None):
    if variant is not None:
        dist = dist.with_variant(variant)
    return dist.ppf(p)


def sample(dist: CombinedDistribution, rng: np.random.Generator, n: int, variant=None):
    if variant is not None:
        dist = dist.with_variant(variant)
    return dist.sample(rng, n)


def constant_d_error(profile: NonGibratProfile, n_grid: int = 4001) -> float:
    """Max relative gap between the constant-d and exact variants over [xmin, x0].

    Both densities are normalized over the full support before comparing.
    """
    approx = CombinedDistribution.from_profile(profile, Variant.CONSTANT_D)
    exact = CombinedDistribution.from_profile(profile, Variant.EXACT_DB)
    x = np.geomspace(profile.xmin, profile.x0, n_grid)
    pe = exact.pdf(x)
    return float(np.max(np.abs(approx.pdf(x) - pe) / pe))


# ---------------------------------------------------------------- quasi-static pair


@dataclass(frozen=True)
class QuasiDistributionPair:
    """Period-1 and period-2 densities of a quasi-static system.

    ``P1(x1) = C1 x1**(-mu1-1) exp(-theta*alpha ln^2(x1/x0))`` and
    ``P2(x2) = C2 x2**(-mu2-1) exp(-theta*alpha ln^2((x2/a)**(1/theta)/x0))`` with
    ``(mu1 + 1)/(mu2 + 1) = theta``.  The Gaussian factors apply below the respective
    thresholds ``x0`` and ``a*x0**theta``; both densities are pure power laws above.
    """

    mu1: float
    theta: float
    a: float
    alpha: float
    x0: float
    xmin: float
    xcap: float = DEFAULT_XCAP

    def __post_init__(self):
        if not (self.theta > 0 and self.a > 0):
            raise DomainError("theta and a must be positive")
        if self.mu2 <= 0:
            raise DomainError("implied mu2 must be positive")

    @classmethod
    def from_profile(cls, profile: NonGibratProfile, theta: float, a: float):
        """Pair whose P1 solves the quasi-balance with the given kernel profile."""
        return cls(mu1=theta * (profile.mu + 1.0) - 1.0, theta=theta, a=a, alpha=profile.alpha,
                   x0=profile.x0, xmin=profile.xmin, xcap=profile.xcap)

    @property
    def mu2(self) -> float:
        return (self.mu1 + 1.0) / self.theta - 1.0

    def image(self, x):
        """a * x**theta: where a period-1 value maps on the regression line."""
        return self.a * np.asarray(x, dtype=float) ** self.theta

    @cached_property
    def p1(self) -> CombinedDistribution:
        return CombinedDistribution(self.mu1, self.theta * self.alpha, self.x0, self.xmin, self.xcap)

    @cached_property
    def p2(self) -> CombinedDistribution:
        return CombinedDistribution(self.mu2, self.alpha / self.theta, float(self.image(self.x0)),
                                    float(self.image(self.xmin)), float(self.image(self.xcap)))

    @property
    def C1(self) -> float:
        return self.p1.C

    @property
    def C2(self) -> float:
        return self.p2.C

    @property
    def lognormal1(self) -> LogNormalParams:
        return lognormal_params_from_nongibrat(self.theta * self.alpha, self.mu1, self.x0)

    @property
    def lognormal2(self) -> LogNormalParams:
        return lognormal_params_from_nongibrat(self.alpha / self.theta, self.mu2, float(self.image(self.x0)))


def eval_quasi_pdfs(q: QuasiDistributionPair, x1, x2):
    return q.p1.pdf(x1), q.p2.pdf(x2)
