"""Conditional growth-rate law: Non-Gibrat profiles and tent-shaped kernels.

The kernel for the growth rate ``R = x2 / x1`` is a two-sided power law,

    Q(R|x1) = d * R**(-t_plus - 1)   for R > 1
    Q(R|x1) = d * R**(+t_minus - 1)  for R < 1

with the height fixed by normalization, ``d = t_plus * t_minus / (t_plus + t_minus)``.
In ``r = log10 R`` the kernel is a tent: ``log10 q(r) = c - t_plus*r`` (r > 0) and
``c + t_minus*r`` (r < 0) with ``c = log10(d * ln 10)``.

``NonGibratProfile`` makes the exponents depend on the period-1 value:
linear in ``ln(x/x0)`` with slope ``+alpha`` / ``-alpha`` between ``xmin`` and ``x0``,
and flat (Gibrat) above ``x0``.  An optional ``xfloor`` below ``xmin`` extends the
profile downward with the exponents frozen at their ``xmin`` values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

LN10 = math.log(10.0)

# regime labels returned by NonGibratProfile.regime
LOW, MIDDLE, TAIL = 0, 1, 2


@dataclass(frozen=True)
class TentKernelAt:
    """Tent kernel with fixed exponents (the kernel at one value of x1)."""

    t_plus: float
    t_minus: float

    def __post_init__(self):
        if not (self.t_plus > 0 and self.t_minus > 0):
            raise DomainError(f"tent exponents must be positive, got {self.t_plus}, {self.t_minus}")

    @property
    def d(self) -> float:
        return self.t_plus * self.t_minus / (self.t_plus + self.t_minus)

    @property
    def c(self) -> float:
        """Intercept of log10 q(r) at r = 0."""
        return math.log10(self.d * LN10)

    @property
    def upper_mass(self) -> float:
        """Probability of R > 1."""
        return self.t_minus / (self.t_plus + self.t_minus)

    def pdf(self, R):
        return _tent_pdf(self.t_plus, self.t_minus, R)

    def pdf_log(self, r):
        return _tent_pdf_log(self.t_plus, self.t_minus, r)

    def cdf_log(self, r):
        """CDF of r = log10 R."""
        r = np.asarray(r, dtype=float)
        s = self.t_plus + self.t_minus
        lower = (self.t_plus / s) * 10.0 ** (self.t_minus * np.minimum(r, 0.0))
        upper = 1.0 - (self.t_minus / s) * 10.0 ** (-self.t_plus * np.maximum(r, 0.0))
        return np.where(r <= 0, lower, upper)

    def moment(self, s: float) -> float:
        """E[R**s]; finite for -t_minus < s < t_plus."""
        if not (-self.t_minus < s < self.t_plus):
            raise DomainError("moment order outside (-t_minus, t_plus)")
        return self.d * (1.0 / (self.t_plus - s) + 1.0 / (self.t_minus + s))

    def sample(self, rng: np.random.Generator, size=None):
        return _tent_sample(self.t_plus, self.t_minus, rng, size)


def _tent_pdf(tp, tm, R):
    R = np.asarray(R, dtype=float)
    if np.any(R <= 0):
        raise DomainError("growth rate R must be positive")
    d = tp * tm / (tp + tm)
    with np.errstate(over="ignore", divide="ignore"):
        expo = np.where(R > 1, -tp - 1.0, tm - 1.0)
        return d * np.exp(expo * np.log(R))


def _tent_pdf_log(tp, tm, r):
    r = np.asarray(r, dtype=float)
    d = tp * tm / (tp + tm)
    slope = np.where(r > 0, -tp, tm)
    return d * LN10 * 10.0 ** (slope * r)


def _tent_sample(tp, tm, rng, size=None):
    tp = np.asarray(tp, dtype=float)
    tm = np.asarray(tm, dtype=float)
    if size is None:
        size = np.broadcast(tp, tm).shape
    branch = rng.random(size)
    u = rng.random(size)
    up = branch < tm / (tp + tm)
    # 1 - u lies in (0, 1], u in [0, 1): use 1 - u for the lower branch to avoid R = 0
    with np.errstate(divide="ignore"):
        return np.where(up, (1.0 - u) ** (-1.0 / tp), (1.0 - u) ** (1.0 / tm))


@dataclass(frozen=True)
class NonGibratProfile:
    """Piecewise Non-Gibrat law for the tent exponents.

    ``t_plus(x) = t_plus_x0 + alpha*ln(x/x0)`` and ``t_minus(x) = t_minus_x0 - alpha*ln(x/x0)``
    for ``xmin <= x <= x0``; constant at the ``x0`` values above ``x0``.
    Below ``xmin`` the profile is only defined when ``xfloor`` is set, and is frozen
    at the ``xmin`` values there.
    """

    t_plus_x0: float
    t_minus_x0: float
    alpha: float
    x0: float
    xmin: float
    xcap: float = 1e9
    xfloor: float | None = None

    def __post_init__(self):
        if not (self.t_plus_x0 > 0 and self.t_minus_x0 > 0):
            raise DomainError("t_plus_x0 and t_minus_x0 must be positive")
        if self.alpha < 0:
            raise DomainError("alpha must be nonnegative")
        if not (0 < self.xmin <= self.x0 < self.xcap):
            raise DomainError("need 0 < xmin <= x0 < xcap")
        if self.xfloor is not None and not (0 < self.xfloor <= self.xmin):
            raise DomainError("need 0 < xfloor <= xmin")
        # t_plus is smallest at xmin; t_minus only grows below x0
        if self.alpha * math.log(self.x0 / self.xmin) >= self.t_plus_x0:
            raise DomainError(
                "t_plus(xmin) = t_plus_x0 - alpha*ln(x0/xmin) must stay positive "
                f"(alpha={self.alpha}, t_plus_x0={self.t_plus_x0}, ln(x0/xmin)={math.log(self.x0 / self.xmin):.4f})"
            )

    @property
    def mu(self) -> float:
        """Tail Pareto index consistent with the profile, t_plus(x0) - t_minus(x0)."""
        return self.t_plus_x0 - self.t_minus_x0

    @property
    def lower(self) -> float:
        return self.xfloor if self.xfloor is not None else self.xmin

    @property
    def u_min(self) -> float:
        return math.log(self.xmin / self.x0)

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        # tolerate rounding in round trips computed at the boundary
        if np.any(x < self.lower * (1 - 1e-12)):
            raise DomainError(f"x below the profile's lower bound {self.lower}")
        return x

    def clipped_log_ratio(self, x) -> np.ndarray:
        """ln(x/x0) clipped to [ln(xmin/x0), 0]."""
        x = self._check(x)
        return np.clip(np.log(x / self.x0), self.u_min, 0.0)

    def t_pm(self, x):
        uc = self.clipped_log_ratio(x)
        return self.t_plus_x0 + self.alpha * uc, self.t_minus_x0 - self.alpha * uc

    def d(self, x):
        tp, tm = self.t_pm(x)
        return tp * tm / (tp + tm)

    def dlog_d_dlogx(self, x):
        """Analytic derivative of ln d(x) with respect to ln x."""
        x = self._check(x)
        tp, tm = self.t_pm(x)
        inside = (x >= self.xmin) & (x <= self.x0)
        return np.where(inside, self.alpha / tp - self.alpha / tm, 0.0)

    def regime(self, x) -> np.ndarray:
        x = self._check(x)
        return np.where(x < self.xmin, LOW, np.where(x <= self.x0, MIDDLE, TAIL))

    def exponent_integral(self, x, theta: float = 1.0):
        """G(x) = integral of theta*(t_plus - t_minus)/x dx, with G(x0) = 0."""
        x = self._check(x)
        u = np.log(x / self.x0)
        uc = np.clip(u, self.u_min, 0.0)
        return theta * (self.mu * u + self.alpha * uc * (2.0 * u - uc))

    def kernel(self, x1: float) -> TentKernelAt:
        tp, tm = self.t_pm(x1)
        return TentKernelAt(float(tp), float(tm))

    def sample_growth(self, x1, rng: np.random.Generator):
        tp, tm = self.t_pm(x1)
        return _tent_sample(tp, tm, rng)


def t_pm(profile: NonGibratProfile, x):
    return profile.t_pm(x)


def kernel_at(profile: NonGibratProfile, x1: float) -> TentKernelAt:
    return profile.kernel(x1)


def eval_Q(profile: NonGibratProfile, x1, R):
    tp, tm = profile.t_pm(x1)
    return _tent_pdf(tp, tm, R)


def eval_q_log(profile: NonGibratProfile, x1, r):
    """Density of r = log10 R, i.e. ln(10) * R * Q(R|x1)."""
    tp, tm = profile.t_pm(x1)
    return _tent_pdf_log(tp, tm, r)


def sample_growth(profile: NonGibratProfile, x1, rng: np.random.Generator):
    return profile.sample_growth(x1, rng)


@dataclass(frozen=True)
class GeneralTentProfile:
    """Quadratic-in-ln x family of exponent profiles.

    ``t_plus(x) = -(Cm2/2) ln^2 x + (Cp1 - Cm1) ln x + (Cp0 - Cm0)`` and
    ``t_minus(x) = (Cm2/2) ln^2 x + Cm1 ln x + Cm0``.  ``Cm2 = Cp1 = 0`` gives the
    linear Non-Gibrat law with ``alpha = -Cm1``.
    """

    Cm2: float
    Cp1: float
    Cm1: float
    Cp0: float
    Cm0: float

    @classmethod
    def from_profile(cls, profile: NonGibratProfile, Cm2: float = 0.0, Cp1: float = 0.0):
        """Family member matching ``profile``'s exponents at x0 with optional perturbations.

        With ``Cm2 = Cp1 = 0`` this reproduces the middle-region linear law exactly.
        """
        L0 = math.log(profile.x0)
        Cm1 = -profile.alpha - Cm2 * L0
        Cm0 = profile.t_minus_x0 - 0.5 * Cm2 * L0**2 - Cm1 * L0
        Cp0 = profile.t_plus_x0 + 0.5 * Cm2 * L0**2 - (Cp1 - Cm1) * L0 + Cm0
        return cls(Cm2=Cm2, Cp1=Cp1, Cm1=Cm1, Cp0=Cp0, Cm0=Cm0)

    def t_pm(self, x):
        L = np.log(np.asarray(x, dtype=float))
        tp = -0.5 * self.Cm2 * L**2 + (self.Cp1 - self.Cm1) * L + (self.Cp0 - self.Cm0)
        tm = 0.5 * self.Cm2 * L**2 + self.Cm1 * L + self.Cm0
        return tp, tm

    def exponent_integral(self, x, theta: float = 1.0):
        """G(x) for g = theta*(t_plus - t_minus), zero at x = 1."""
        L = np.log(np.asarray(x, dtype=float))
        return theta * (
            -self.Cm2 * L**3 / 3.0
            + 0.5 * (self.Cp1 - 2.0 * self.Cm1) * L**2
            + (self.Cp0 - 2.0 * self.Cm0) * L
        )
