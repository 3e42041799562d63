"""Numeric witnesses for the analytic identities of the balance framework.

Every check evaluates a residual on a grid and compares its maximum with a
tolerance.  Densities are compared in relative terms, the dimensionless
functional identity in absolute terms.  Checks across a kink of the profile are
reported with ``verdict="info"``: the identities are derived per regime and the
kink genuinely breaks them.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .distributions import CombinedDistribution, QuasiDistributionPair, Variant
from .errors import DomainError
from .growth_kernel import MIDDLE, TAIL, GeneralTentProfile, NonGibratProfile
from .balance import QuasiBalanceParams

BALANCE_TOL = 1e-10
FUNCTIONAL_TOL = 1e-12
ODE_TOL = 1e-6
ODE_ANALYTIC_TOL = 1e-12
UNIQUENESS_TOL = 1e-10


@dataclass
class ResidualReport:
    name: str
    grid: str
    n_points: int
    max_abs_residual: float
    location: dict
    tolerance: float
    verdict: str
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict != "fail"

    def to_dict(self) -> dict:
        return asdict(self)


def _report(name, grid, res, coords, tol, details=None, informational=False):
    res = np.abs(np.asarray(res, dtype=float)).ravel()
    if res.size == 0:
        raise DomainError(f"{name}: empty grid")
    k = int(np.nanargmax(res)) if np.any(np.isfinite(res)) else 0
    m = float(res[k])
    loc = {key: float(np.asarray(v).ravel()[k]) for key, v in coords.items()}
    if informational:
        verdict = "info"
    else:
        verdict = "pass" if np.isfinite(m) and m <= tol else "fail"
    return ResidualReport(name, grid, int(res.size), m, loc, float(tol), verdict, details or {})


def _pair_density(profile: NonGibratProfile, quasi: QuasiBalanceParams | None) -> CombinedDistribution:
    """Exactly balanced period-1 density for the profile (and quasi parameters)."""
    th = 1.0 if quasi is None else quasi.theta
    return CombinedDistribution(th * (profile.mu + 1.0) - 1.0, th * profile.alpha, profile.x0, profile.xmin,
                                profile.xcap, Variant.EXACT_DB, profile)


def _log_tent_at(profile, x, R):
    tp, tm = profile.t_pm(x)
    d = tp * tm / (tp + tm)
    lr = np.log(R)
    return np.log(d) + np.where(R > 1, -(tp + 1.0), tm - 1.0) * lr


def _regime_pairs(profile, regime, n, theta=1.0, a=1.0, margin=1e-3):
    """(x1, R) grid with x1 and its partner both inside one regime."""
    if regime == MIDDLE:
        lo, hi = profile.xmin * (1 + margin), profile.x0 * (1 - margin)
    elif regime == TAIL:
        lo, hi = profile.x0 * (1 + margin), min(profile.xcap * (1 - margin), profile.x0 * 1e3)
    else:
        raise DomainError("regime must be MIDDLE or TAIL")
    g = np.geomspace(lo, hi, n)
    x1, y1 = np.meshgrid(g, g, indexing="ij")
    keep = x1 != y1
    x1, y1 = x1[keep], y1[keep]
    # partner y1 = (x2/a)**(1/theta) with x2 = a x1**theta R  =>  R = (y1/x1)**theta
    return x1, (y1 / x1) ** theta


def residual_balance_identity(profile: NonGibratProfile, quasi: QuasiBalanceParams | None = None,
                              x1=None, R=None, dist: CombinedDistribution | None = None,
                              allow_cross_regime: bool = False, tol: float = BALANCE_TOL,
                              n: int = 50, regime: int = MIDDLE) -> ResidualReport:
    """Relative gap between the joint density at a pair and at its mirror image.

    Joint density of (x1, x2): ``P1(x1) Q(R|x1) / (a x1**theta)``; mirror
    ``(y1, y2) = ((x2/a)**(1/theta), a x1**theta)`` has modified rate ``1/R`` and
    joint density ``P1(y1) Q(1/R|y1) / x2``.  Default grid: ``n`` x ``n`` points in one
    regime.
    """
    th = 1.0 if quasi is None else quasi.theta
    a = 1.0 if quasi is None else quasi.a
    dist = dist or _pair_density(profile, quasi)
    if x1 is None:
        x1, R = _regime_pairs(profile, regime, n, th, a)
        grid = f"{n}x{n} pairs in regime {regime}"
    else:
        x1, R = np.broadcast_arrays(np.asarray(x1, dtype=float), np.asarray(R, dtype=float))
        x1, R = x1.ravel(), R.ravel()
        grid = f"{x1.size} supplied pairs"
    y1 = R ** (1.0 / th) * x1
    x2 = a * x1**th * R
    cross = profile.regime(x1) != profile.regime(y1)
    if np.any(cross) and not allow_cross_regime:
        raise DomainError(f"{int(cross.sum())} grid pairs straddle regimes; pass allow_cross_regime=True")
    log_j1 = dist.logpdf(x1) + _log_tent_at(profile, x1, R) - np.log(a) - th * np.log(x1)
    log_j2 = dist.logpdf(y1) + _log_tent_at(profile, y1, 1.0 / R) - np.log(x2)
    res = np.expm1(log_j2 - log_j1)
    name = "quasi_balance_identity" if quasi is not None else "balance_identity"
    return _report(name, grid, res, {"x1": x1, "R": R}, tol,
                   {"theta": th, "a": a, "cross_regime_pairs": int(cross.sum())},
                   informational=bool(np.any(cross)))


def cross_regime_grid(profile: NonGibratProfile, n: int = 20, theta: float = 1.0, decades: float = 1.0):
    """Pairs with x1 below x0 and the partner above it, within ``decades`` of x0."""
    k = profile.x0
    below = np.geomspace(max(profile.xmin, k / 10.0**decades), k, n + 1)[:-1]
    above = np.geomspace(k, min(profile.xcap, k * 10.0**decades), n + 1)[1:]
    x1, y1 = np.meshgrid(below, above, indexing="ij")
    return x1.ravel(), (y1 / x1).ravel() ** theta


def residual_ode(profile: NonGibratProfile, theta: float = 1.0, x=None, dist: CombinedDistribution | None = None,
                 h_rel: float = 1e-4, analytic: bool = False, tol: float | None = None, n: int = 200,
                 regime: int = MIDDLE, a: float = 1.0) -> ResidualReport:
    """theta*(t_plus - t_minus + 1)*Pt + x*Pt' with Pt = P*d, relative to |Pt|*(mu + 1).

    ``analytic=False`` differentiates by central differences with step ``h_rel*x``;
    ``analytic=True`` uses the closed-form log-derivatives.
    """
    quasi = None if theta == 1.0 and a == 1.0 else QuasiBalanceParams(theta, a)
    dist = dist or _pair_density(profile, quasi)
    if x is None:
        m = max(10 * h_rel, 1e-6)
        if regime == MIDDLE:
            x = np.geomspace(profile.xmin * (1 + m), profile.x0 * (1 - m), n)
        else:
            x = np.geomspace(profile.x0 * (1 + m), min(profile.xcap, profile.x0 * 1e3) * (1 - m), n)
        grid = f"{n} points in regime {regime}"
    else:
        x = np.asarray(x, dtype=float).ravel()
        grid = f"{x.size} supplied points"
    tp, tm = profile.t_pm(x)
    lhs = theta * (tp - tm + 1.0)
    if analytic:
        dlog = dist.dlogpdf_dlogx(x) + profile.dlog_d_dlogx(x)
        res = (lhs + dlog) / (dist.mu + 1.0)
        tol = ODE_ANALYTIC_TOL if tol is None else tol
    else:
        def pt(z):
            return np.exp(dist.logpdf(z) - dist.logpdf(x)) * profile.d(z)

        h = h_rel * x
        # everything scaled by P(x) so the density's magnitude drops out
        deriv = (pt(x + h) - pt(x - h)) / (2.0 * h)
        res = (lhs * pt(x) + x * deriv) / (np.abs(pt(x)) * (dist.mu + 1.0))
        tol = ODE_TOL if tol is None else tol
    return _report("ode_analytic" if analytic else "ode", grid, res, {"x": x}, tol,
                   {"theta": theta, "h_rel": None if analytic else h_rel})


def ode_convergence_order(profile: NonGibratProfile, theta: float = 1.0, h_rel: float = 1e-3, **kw) -> float:
    """log2 of the ratio of max residuals at h and h/2; about 2 for central differences."""
    r1 = residual_ode(profile, theta, h_rel=h_rel, tol=np.inf, **kw).max_abs_residual
    r2 = residual_ode(profile, theta, h_rel=h_rel / 2, tol=np.inf, **kw).max_abs_residual
    return math.log2(r1 / r2)


def residual_functional_identity(profile, theta: float = 1.0, x=None, R=None, allow_cross_regime: bool = False,
                                 tol: float = FUNCTIONAL_TOL, n: int = 50) -> ResidualReport:
    """G(R**(1/theta) x) - G(x) - [t_plus(x) - t_minus(R**(1/theta) x)] ln R, absolute."""
    if x is None:
        x, R = _regime_pairs(profile, MIDDLE, n, theta)
        grid = f"{n}x{n} pairs in the middle region"
    else:
        x, R = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(R, dtype=float))
        x, R = x.ravel(), R.ravel()
        grid = f"{x.size} supplied pairs"
    y = R ** (1.0 / theta) * x
    informational = False
    if isinstance(profile, NonGibratProfile):
        cross = profile.regime(x) != profile.regime(y)
        if np.any(cross) and not allow_cross_regime:
            raise DomainError(f"{int(cross.sum())} grid pairs straddle regimes; pass allow_cross_regime=True")
        informational = bool(np.any(cross))
    res = _functional_residual(profile, theta, x, y, R)
    return _report("functional_identity", grid, res, {"x": x, "R": R}, tol, {"theta": theta},
                   informational=informational)


def _functional_residual(profile, theta, x, y, R):
    tp_x, _ = profile.t_pm(x)
    _, tm_y = profile.t_pm(y)
    return profile.exponent_integral(y, theta) - profile.exponent_integral(x, theta) - (tp_x - tm_y) * np.log(R)


def uniqueness_violation(general: GeneralTentProfile, theta: float = 1.0, x=None, R=None,
                         tol: float = UNIQUENESS_TOL, center: float = 63396.0, decades: float = 1.0,
                         n: int = 40) -> ResidualReport:
    """Functional-identity residual for a member of the quadratic-in-ln x family.

    Zero exactly when ``Cm2 == Cp1 == 0``.  The default grid spans ``decades``
    decades of x below ``center`` and growth rates in [0.1, 10].
    """
    if x is None:
        xs = np.geomspace(center / 10.0**decades, center, n)
        Rs = np.geomspace(0.1, 10.0, n)
        x, R = (v.ravel() for v in np.meshgrid(xs, Rs, indexing="ij"))
        grid = f"{n}x{n}: x over {decades:g} decade(s) below {center:g}, R in [0.1, 10]"
    else:
        x, R = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(R, dtype=float))
        x, R = x.ravel(), R.ravel()
        grid = f"{x.size} supplied pairs"
    y = R ** (1.0 / theta) * x
    for z in (x, y):
        tp, tm = general.t_pm(z)
        if np.any(tp <= 0) or np.any(tm <= 0):
            raise DomainError("exponents are not positive on the grid")
    res = _functional_residual(general, theta, x, y, R)
    return _report("uniqueness", grid, res, {"x": x, "R": R}, tol,
                   {"Cm2": general.Cm2, "Cp1": general.Cp1, "theta": theta})


@dataclass
class QuasiRelationReport:
    theta: float
    mu1: float
    mu2: float
    mu_ratio_residual: float
    sigma1: float
    sigma2: float
    sigma_ratio_residual: float
    curvature_residuals: tuple[float, float]
    fitted_sigma_ratio: float | None
    fitted_residual: float | None
    tolerance: float
    verdict: str

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        return asdict(self)


def check_quasi_relations(q: QuasiDistributionPair, fitted_sigmas: tuple[float, float] | None = None,
                          tol: float = 0.05, exact_tol: float = 1e-12) -> QuasiRelationReport:
    """(mu1+1)/(mu2+1) = theta, theta*alpha = 1/(2 sigma1**2), alpha/theta = 1/(2 sigma2**2)."""
    th = q.theta
    mu_res = abs((q.mu1 + 1.0) / (q.mu2 + 1.0) - th)
    s1, s2 = q.lognormal1.sigma, q.lognormal2.sigma
    curv = (abs(th * q.alpha - 1.0 / (2 * s1 * s1)), abs(q.alpha / th - 1.0 / (2 * s2 * s2)))
    sr_res = abs(s2 / s1 - th)
    ok = mu_res <= exact_tol and sr_res <= exact_tol * 10 and max(curv) <= exact_tol * max(1.0, q.alpha)
    fsr = fres = None
    if fitted_sigmas is not None:
        fsr = fitted_sigmas[1] / fitted_sigmas[0]
        fres = abs(fsr - th)
        ok = ok and fres <= tol
    return QuasiRelationReport(th, q.mu1, q.mu2, mu_res, s1, s2, sr_res, curv, fsr, fres, tol,
                               "pass" if ok else "fail")


# ---------------------------------------------------------------- suite


def random_profile(rng: np.random.Generator) -> NonGibratProfile:
    """An admissible profile with a positive tail index."""
    t_minus = rng.uniform(0.3, 1.5)
    t_plus = t_minus + rng.uniform(0.3, 2.0)
    x0 = 10.0 ** rng.uniform(3.0, 6.0)
    xmin = x0 / 10.0 ** rng.uniform(0.5, 2.0)
    alpha = rng.uniform(0.0, 0.9) * t_plus / math.log(x0 / xmin)
    return NonGibratProfile(t_plus, t_minus, alpha, x0, xmin, xcap=x0 * 1e4)


@dataclass
class SuiteReport:
    reports: list
    quasi: QuasiRelationReport
    ode_order: float
    seed: int

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports) and self.quasi.passed and 1.8 <= self.ode_order <= 2.2

    @property
    def failures(self) -> list:
        return [r for r in self.reports if not r.passed]

    def max_residual(self, name: str) -> float:
        vals = [r.max_abs_residual for r in self.reports if r.name == name and r.verdict != "info"]
        return max(vals) if vals else float("nan")

    def to_dict(self) -> dict:
        return {"passed": self.passed, "seed": self.seed, "ode_order": self.ode_order,
                "quasi_relations": self.quasi.to_dict(), "reports": [r.to_dict() for r in self.reports]}


def run_suite(profile: NonGibratProfile | None = None, seed: int = 0, n_random: int = 20, theta: float = 0.95,
              a: float = 10**0.15, inject_c2: float = 0.0, inject_cp1: float = 0.0, grid_halve: bool = False
              ) -> SuiteReport:
    """All identity checks on the given profile plus ``n_random`` random admissible ones."""
    from .synthesis import default_profile

    profile = profile or default_profile()
    q = QuasiBalanceParams(theta, a)
    h_rel = 5e-5 if grid_halve else 1e-4
    rng = np.random.default_rng(seed)
    reps = []

    def battery(p, tag):
        out = [
            residual_balance_identity(p, regime=MIDDLE),
            residual_balance_identity(p, regime=TAIL),
            residual_balance_identity(p, q, regime=MIDDLE),
            residual_balance_identity(p, q, regime=TAIL),
            residual_functional_identity(p, 1.0),
            residual_functional_identity(p, theta),
            residual_ode(p, 1.0, h_rel=h_rel),
            residual_ode(p, 1.0, analytic=True),
            residual_ode(p, theta, a=a, analytic=True),
            uniqueness_violation(GeneralTentProfile.from_profile(p), 1.0, *_regime_pairs(p, MIDDLE, 40)),
        ]
        for r in out:
            r.details["profile"] = tag
        return out

    reps += battery(profile, "default")
    for i in range(n_random):
        reps += battery(random_profile(rng), f"random-{i}")

    # injected deviations from the linear family
    gen = GeneralTentProfile.from_profile(profile, Cm2=inject_c2, Cp1=inject_cp1)
    u = uniqueness_violation(gen, 1.0, center=profile.x0)
    u.details["profile"] = "injected" if (inject_c2 or inject_cp1) else "default"
    reps.append(u)

    # reported, not asserted
    x1, R = cross_regime_grid(profile)
    r = residual_balance_identity(profile, x1=x1, R=R, allow_cross_regime=True)
    r.name = "balance_identity_cross_x0"
    reps.append(r)
    r = residual_functional_identity(profile, 1.0, x1, R, allow_cross_regime=True)
    r.name = "functional_identity_cross_x0"
    reps.append(r)

    qp = QuasiDistributionPair.from_profile(profile, theta, a)
    order = ode_convergence_order(profile, 1.0, h_rel=2e-3 if not grid_halve else 1e-3)
    return SuiteReport(reps, check_quasi_relations(qp), order, seed)
