"""Estimation pipeline: conditional growth histograms, tent fits, the Non-Gibrat
profile with change points, the Pareto index and the combined-density MLE.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .balance import PairedPanel, QuasiBalanceParams, modified_growth_rate
from .binning import BinningScheme, make_bins
from .distributions import DEFAULT_XCAP, Variant, normalization_constant
from .errors import DomainError, FitError, NumericalError
from .growth_kernel import LN10

log = logging.getLogger(__name__)

__all__ = [
    "BinningScheme", "make_bins", "GrowthHistogram", "conditional_growth_histograms",
    "TentFit", "fit_tent", "fit_tents", "NonGibratFit", "fit_non_gibrat",
    "estimate_pareto_index", "PdfFit", "fit_combined_pdf",
]

MIN_OCCUPANCY = 30


# ---------------------------------------------------------------- histograms


@dataclass(frozen=True, eq=False)
class GrowthHistogram:
    """Histogram of r = log10(x2/x1) for the pairs whose x1 falls in one bin.

    ``censored`` marks r-bins that pairs from this x1-bin could only partly reach
    because the partner value would leave the panel's support.
    """

    bin_index: int
    lower: float
    upper: float
    n: int
    edges: np.ndarray
    counts: np.ndarray
    censored: np.ndarray

    @property
    def width(self) -> float:
        return float(self.edges[1] - self.edges[0])

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def density(self) -> np.ndarray:
        if self.n == 0:
            return np.zeros_like(self.centers)
        return self.counts / (self.n * self.width)

    @property
    def usable(self) -> bool:
        return self.n > 0

    def mirrored(self) -> "GrowthHistogram":
        return GrowthHistogram(self.bin_index, self.lower, self.upper, self.n, -self.edges[::-1],
                               self.counts[::-1].copy(), self.censored[::-1].copy())


def conditional_growth_histograms(panel: PairedPanel, scheme: BinningScheme | None = None,
                                  r_binwidth: float = 0.1, support: tuple[float, float] | None = None,
                                  quasi: QuasiBalanceParams | None = None) -> list[GrowthHistogram]:
    """One histogram per x1-bin over a common r-grid aligned so that 0 is an edge.

    The grid spans at least [-4, 4] and always covers every observed r.  With
    ``support=(lo, hi)`` an r-bin is censored for an x1-bin when some x1 in the bin
    and some r in the r-bin would put x2 outside ``[lo, hi]``.  With ``quasi`` the
    histograms are of the log10 modified growth rate ``x2 / (a x1**theta)``.
    """
    if len(panel) == 0:
        raise DomainError("panel is empty")
    if r_binwidth <= 0:
        raise DomainError("r_binwidth must be positive")
    scheme = scheme or BinningScheme()
    th, a = (1.0, 1.0) if quasi is None else (quasi.theta, quasi.a)
    r = panel.r if quasi is None else np.log10(modified_growth_rate(panel, quasi))
    k_lo = min(int(math.floor(r.min() / r_binwidth)), -int(round(4.0 / r_binwidth)))
    k_hi = max(int(math.ceil(r.max() / r_binwidth)), int(round(4.0 / r_binwidth)))
    if k_hi == k_lo:
        k_hi += 1
    edges = r_binwidth * np.arange(k_lo, k_hi + 1)
    idx = scheme.assign(panel.x1)
    out = []
    for b, (lo, hi) in enumerate(make_bins(scheme), start=1):
        sel = idx == b
        # r exactly on the top edge belongs to the last r-bin
        counts = np.histogram(r[sel], bins=edges)[0]
        if support is not None:
            censored = ((a * lo**th * 10.0 ** edges[:-1] < support[0])
                        | (a * hi**th * 10.0 ** edges[1:] > support[1]))
        else:
            censored = np.zeros(edges.size - 1, dtype=bool)
        out.append(GrowthHistogram(b, lo, hi, int(sel.sum()), edges, counts, censored))
    return out


# ---------------------------------------------------------------- tent fits


@dataclass(frozen=True)
class TentFit:
    bin_index: int
    c_hat: float
    t_plus_hat: float
    t_minus_hat: float
    stderrs: tuple[float, float, float]
    n_obs: int
    lower: float = float("nan")
    upper: float = float("nan")
    method: str = "poisson"
    n_rbins: int = 0

    @property
    def t_plus_stderr(self) -> float:
        return self.stderrs[1]

    @property
    def t_minus_stderr(self) -> float:
        return self.stderrs[2]

    def to_dict(self) -> dict:
        return {"bin": self.bin_index, "lower": self.lower, "upper": self.upper, "n_obs": self.n_obs,
                "c": self.c_hat, "t_plus": self.t_plus_hat, "t_minus": self.t_minus_hat,
                "stderr": list(self.stderrs), "method": self.method}


def _tent_design(centers):
    return np.column_stack([np.ones_like(centers), np.maximum(centers, 0.0), np.minimum(centers, 0.0)])


def fit_tent(h: GrowthHistogram, method: str = "poisson", min_side: int = 3) -> TentFit:
    """Two half-lines in log10 q with a shared intercept c at r = 0.

    ``method="wls"`` regresses log10 of the nonempty r-bins with weights equal to the
    counts.  ``method="poisson"`` (default) maximizes the Poisson likelihood of every
    uncensored r-bin, zeros included, which removes the upward bias that dropping
    empty bins puts on the sparse outer r-bins.  Both return c, t_plus, t_minus and
    known-variance standard errors.
    """
    if not h.usable:
        raise FitError(f"bin {h.bin_index} is empty")
    rc = h.centers
    keep = ~h.censored
    if method == "wls":
        keep &= h.counts > 0
    for side, mask in (("positive", rc > 0), ("negative", rc < 0)):
        k = int(np.sum(keep & mask & (h.counts > 0)))
        if k < min_side:
            raise FitError(f"bin {h.bin_index}: only {k} usable r-bins on the {side} side (need {min_side})")
    X = _tent_design(rc[keep])
    cnt = h.counts[keep].astype(float)
    if method == "wls":
        y = np.log10(cnt / (h.n * h.width))
        w = cnt * LN10**2
        A = X.T @ (w[:, None] * X)
        beta = np.linalg.solve(A, X.T @ (w * y))
        cov = np.linalg.inv(A)
    elif method == "poisson":
        beta, cov = _poisson_tent(X, cnt, h.n * h.width)
    else:
        raise ValueError(f"unknown method {method!r}")
    se = np.sqrt(np.diag(cov))
    tp, tm = -beta[1], beta[2]
    if not (tp > 0 and tm > 0):
        raise FitError(f"bin {h.bin_index}: nonpositive tent exponent ({tp:.3g}, {tm:.3g})")
    return TentFit(h.bin_index, float(beta[0]), float(tp), float(tm), (float(se[0]), float(se[1]), float(se[2])),
                   h.n, h.lower, h.upper, method, int(keep.sum()))


def _poisson_tent(X, counts, scale, max_iter=100, tol=1e-10):
    """Newton iterations for the log-linear Poisson model E[count] = scale*10**(X @ beta)."""
    Z = LN10 * X
    off = math.log(scale)
    # start from a least-squares fit of log(count + 0.5)
    g = np.linalg.lstsq(Z, np.log(counts + 0.5) - off, rcond=None)[0]
    for _ in range(max_iter):
        eta = np.clip(off + Z @ g, -700.0, 700.0)
        m = np.exp(eta)
        grad = Z.T @ (counts - m)
        H = Z.T @ (m[:, None] * Z)
        step = np.linalg.solve(H, grad)
        # halve steps that lower the likelihood
        ll = counts @ eta - m.sum()
        t = 1.0
        while t > 1e-8:
            gn = g + t * step
            en = np.clip(off + Z @ gn, -700.0, 700.0)
            if counts @ en - np.exp(en).sum() >= ll - 1e-12:
                break
            t *= 0.5
        g = gn
        if np.max(np.abs(t * step)) < tol:
            break
    else:
        raise FitError("Poisson tent fit did not converge")
    m = np.exp(off + Z @ g)
    cov_g = np.linalg.inv(Z.T @ (m[:, None] * Z))
    # g is in the ln-scaled parameterization only through Z; beta == g
    return g, cov_g


def fit_tents(histograms, method: str = "poisson", min_occupancy: int = MIN_OCCUPANCY) -> list[TentFit]:
    """Tent fits for every bin with enough pairs; sparse or unfittable bins are skipped with a warning."""
    fits = []
    for h in histograms:
        if h.n < min_occupancy:
            if h.n > 0:
                log.warning("bin %d has %d pairs (< %d); no tent fit", h.bin_index, h.n, min_occupancy)
            continue
        try:
            fits.append(fit_tent(h, method))
        except FitError as e:
            log.warning("%s", e)
    return fits


# ---------------------------------------------------------------- Non-Gibrat profile


@dataclass(frozen=True)
class NonGibratFit:
    alpha_hat: float
    alpha_stderr: float
    x0_hat: float
    xmin_hat: float
    t_plus_x0_hat: float
    t_minus_x0_hat: float
    t_plus_x0_stderr: float
    t_minus_x0_stderr: float
    alpha_plus: float
    alpha_minus: float
    alpha_plus_stderr: float
    alpha_minus_stderr: float
    window: tuple[int, int]
    x0_bin: int
    xmin_bin: int
    gibrat: bool
    chi2: float
    residuals: dict = field(default_factory=dict)
    tail_slopes: dict = field(default_factory=dict)

    @property
    def mu_hat(self) -> float:
        """Tail index implied by the kernel, t_plus(x0) - t_minus(x0)."""
        return self.t_plus_x0_hat - self.t_minus_x0_hat

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha_hat, "alpha_stderr": self.alpha_stderr,
            "alpha_plus": self.alpha_plus, "alpha_plus_stderr": self.alpha_plus_stderr,
            "alpha_minus": self.alpha_minus, "alpha_minus_stderr": self.alpha_minus_stderr,
            "x0": self.x0_hat, "x0_bin": self.x0_bin, "xmin": self.xmin_hat, "xmin_bin": self.xmin_bin,
            "t_plus_x0": self.t_plus_x0_hat, "t_plus_x0_stderr": self.t_plus_x0_stderr,
            "t_minus_x0": self.t_minus_x0_hat, "t_minus_x0_stderr": self.t_minus_x0_stderr,
            "window": list(self.window), "gibrat": self.gibrat, "chi2": self.chi2,
            "tail_slopes": self.tail_slopes, "residuals": self.residuals,
        }


def _wls(X, y, w):
    A = X.T @ (w[:, None] * X)
    cov = np.linalg.inv(A)
    beta = cov @ (X.T @ (w * y))
    res = y - X @ beta
    return beta, cov, float(w @ (res * res))


def _slope_fit(u, t, se):
    """Weighted straight line t = b0 + b1*u; returns (b1, stderr of b1)."""
    X = np.column_stack([np.ones_like(u), u])
    beta, cov, _ = _wls(X, t, 1.0 / se**2)
    return float(beta[1]), float(math.sqrt(cov[1, 1]))


def fit_non_gibrat(tentfits, scheme: BinningScheme | None = None, min_middle: int = 3, min_top: int = 2
                   ) -> NonGibratFit:
    """Piecewise-linear profile in ln x1 with change points at bin lower bounds.

    For each candidate pair of bins (jmin, j0) the exponents are modeled as flat
    below the lower bound of jmin, linear in ln(x1/x0) between (slopes +alpha_plus
    for t_plus, -alpha_minus for t_minus) and flat from the lower bound of j0 up,
    continuous throughout.  The candidate with the smallest weighted SSE wins.  A
    flat (Gibrat) profile is preferred when it has the lower BIC, in which case
    alpha is reported as 0 and the flat region spans every bin.
    """
    fits = sorted(tentfits, key=lambda f: f.bin_index)
    if len(fits) < 4:
        raise FitError(f"need at least 4 usable tent fits, got {len(fits)}")
    scheme = scheme or BinningScheme()
    bins = np.array([f.bin_index for f in fits])
    L = np.array([scheme.lower(int(b)) for b in bins])
    tp = np.array([f.t_plus_hat for f in fits])
    tm = np.array([f.t_minus_hat for f in fits])
    sp = np.array([f.t_plus_stderr for f in fits])
    sm = np.array([f.t_minus_stderr for f in fits])
    if np.any(~np.isfinite(sp) | (sp <= 0)) or np.any(~np.isfinite(sm) | (sm <= 0)):
        raise FitError("tent fits need finite positive stderrs")
    wp, wm = 1.0 / sp**2, 1.0 / sm**2
    lnL = np.log(L)
    n = len(fits)

    best = None
    for i0 in range(min_middle - 1, n - min_top + 1):
        for imin in range(0, i0 - min_middle + 2):
            uc = np.clip(lnL - lnL[i0], lnL[imin] - lnL[i0], 0.0)
            X = np.column_stack([np.ones(n), uc])
            bp, cp, ssp = _wls(X, tp, wp)
            bm, cm, ssm = _wls(X, tm, wm)
            tp_fit, tm_fit = X @ bp, X @ bm
            if np.any(tp_fit <= 0) or np.any(tm_fit <= 0):
                continue
            sse = ssp + ssm
            if best is None or sse < best[0]:
                best = (sse, i0, imin, bp, cp, bm, cm)
    if best is None:
        raise FitError("no change-point candidate gives positive exponents")

    # Gibrat alternative: both exponents constant
    Xf = np.ones((n, 1))
    bpf, cpf, sspf = _wls(Xf, tp, wp)
    bmf, cmf, ssmf = _wls(Xf, tm, wm)
    N = 2 * n
    bic_kinked = best[0] + 6 * math.log(N)
    bic_flat = sspf + ssmf + 2 * math.log(N)

    sse, i0, imin, bp, cp, bm, cm = best
    ap, am = float(bp[1]), float(-bm[1])
    sap, sam = math.sqrt(cp[1, 1]), math.sqrt(cm[1, 1])
    uc = np.clip(lnL - lnL[i0], lnL[imin] - lnL[i0], 0.0)
    resid = {
        "bins": bins.tolist(),
        "t_plus": (tp - (bp[0] + bp[1] * uc)).tolist(),
        "t_minus": (tm - (bm[0] + bm[1] * uc)).tolist(),
        "bic_kinked": bic_kinked,
        "bic_flat": bic_flat,
    }
    gibrat = bic_flat <= bic_kinked
    if gibrat:
        all_u = lnL - lnL[0]
        s_plus = _slope_fit(all_u, tp, sp)
        s_minus = _slope_fit(all_u, tm, sm)
        return NonGibratFit(
            alpha_hat=0.0, alpha_stderr=0.5 * math.hypot(s_plus[1], s_minus[1]),
            x0_hat=float(L[0]), xmin_hat=float(L[0]),
            t_plus_x0_hat=float(bpf[0]), t_minus_x0_hat=float(bmf[0]),
            t_plus_x0_stderr=float(math.sqrt(cpf[0, 0])), t_minus_x0_stderr=float(math.sqrt(cmf[0, 0])),
            alpha_plus=0.0, alpha_minus=0.0, alpha_plus_stderr=s_plus[1], alpha_minus_stderr=s_minus[1],
            window=(int(bins[0]), int(bins[-1])), x0_bin=int(bins[0]), xmin_bin=int(bins[0]),
            gibrat=True, chi2=float(sspf + ssmf), residuals=resid,
            tail_slopes={"t_plus": s_plus[0], "t_plus_stderr": s_plus[1],
                         "t_minus": s_minus[0], "t_minus_stderr": s_minus[1],
                         "bins": [int(bins[0]), int(bins[-1])]},
        )

    top = slice(i0, n)
    u_top = lnL[top] - lnL[i0]
    s_plus = _slope_fit(u_top, tp[top], sp[top])
    s_minus = _slope_fit(u_top, tm[top], sm[top])
    return NonGibratFit(
        alpha_hat=0.5 * (ap + am),
        alpha_stderr=0.5 * math.hypot(sap, sam),
        x0_hat=float(L[i0]),
        xmin_hat=float(L[imin]),
        t_plus_x0_hat=float(bp[0]),
        t_minus_x0_hat=float(bm[0]),
        t_plus_x0_stderr=float(math.sqrt(cp[0, 0])),
        t_minus_x0_stderr=float(math.sqrt(cm[0, 0])),
        alpha_plus=ap, alpha_minus=am, alpha_plus_stderr=sap, alpha_minus_stderr=sam,
        window=(int(bins[imin]), int(bins[i0])),
        x0_bin=int(bins[i0]), xmin_bin=int(bins[imin]),
        gibrat=False, chi2=float(sse), residuals=resid,
        tail_slopes={"t_plus": s_plus[0], "t_plus_stderr": s_plus[1],
                     "t_minus": s_minus[0], "t_minus_stderr": s_minus[1],
                     "bins": [int(bins[i0]), int(bins[-1])]},
    )


# ---------------------------------------------------------------- Pareto index and PDF fit


def estimate_pareto_index(values, x0: float, min_tail: int = 30) -> tuple[float, float]:
    """Hill estimator mu = n / sum(ln(x/x0)) over values above x0; stderr mu/sqrt(n)."""
    x = np.asarray(values, dtype=float)
    tail = x[x > x0]
    if tail.size < min_tail:
        raise FitError(f"only {tail.size} values above x0 (need {min_tail})")
    s = float(np.sum(np.log(tail / x0)))
    mu = tail.size / s
    return mu, mu / math.sqrt(tail.size)


@dataclass(frozen=True)
class PdfFit:
    mu_hat: float
    alpha_hat: float
    C_hat: float
    loglik: float
    n_obs: int
    mu_stderr: float = float("nan")
    alpha_stderr: float = float("nan")
    x0: float = float("nan")
    xmin: float = float("nan")
    xcap: float = DEFAULT_XCAP
    discrimination: dict = field(default_factory=dict)

    @property
    def sigma(self) -> float:
        """Log-normal width of the middle region, 1/sqrt(2 alpha)."""
        return 1.0 / math.sqrt(2.0 * self.alpha_hat) if self.alpha_hat > 0 else float("inf")

    def to_dict(self) -> dict:
        return {"mu": self.mu_hat, "mu_stderr": self.mu_stderr, "alpha": self.alpha_hat,
                "alpha_stderr": self.alpha_stderr, "C": self.C_hat, "loglik": self.loglik,
                "n_obs": self.n_obs, "x0": self.x0, "xmin": self.xmin, "xcap": self.xcap,
                "discrimination": [{"alpha": a, "loglik": ll} for a, ll in self.discrimination.items()]}


def fit_combined_pdf(values, x0: float, xmin: float, alpha_grid=(0.10, 0.14, 0.20), xcap: float = DEFAULT_XCAP
                     ) -> PdfFit:
    """Maximum likelihood of the constant-d combined density over (mu, alpha) with x0, xmin fixed.

    The discrimination table holds, for each alpha in ``alpha_grid``, the
    log-likelihood maximized over mu at that fixed alpha.
    """
    x = np.asarray(values, dtype=float)
    if x.size < 2:
        raise DomainError("need at least 2 values")
    if np.any(x < xmin) or np.any(x > xcap):
        raise DomainError(f"values must lie in [xmin, xcap] = [{xmin}, {xcap}]")
    n = x.size
    lx = np.log(x)
    u = lx - math.log(x0)
    S1 = float(lx.sum())
    S2 = float(np.sum(np.where(u <= 0, u * u, 0.0)))

    def loglik(mu, alpha):
        C = normalization_constant(mu, alpha, x0, xmin, xcap, Variant.CONSTANT_D)
        return n * math.log(C) - (mu + 1.0) * S1 - alpha * S2

    trace = []

    def nll(p):
        mu, alpha = float(p[0]), float(p[1])
        try:
            v = -loglik(mu, alpha)
        except NumericalError:
            v = float("inf")
        trace.append((mu, alpha, v))
        return v / n

    # starting point: Hill index above x0 and the curvature of a log-normal fit below
    try:
        mu0 = estimate_pareto_index(x, x0)[0]
    except FitError:
        mu0 = 1.0
    below = u[u <= 0]
    alpha0 = 0.5 / max(float(np.var(below)), 1e-3) if below.size > 2 else 0.1
    res = optimize.minimize(nll, [min(max(mu0, 0.05), 10.0), min(alpha0, 2.0)], method="L-BFGS-B",
                            bounds=[(1e-3, 20.0), (0.0, 5.0)], options={"ftol": 1e-14, "gtol": 1e-10})
    if not res.success or not np.isfinite(res.fun):
        raise FitError(f"PDF fit did not converge: {res.message}; last trace {trace[-5:]}")
    mu_hat, alpha_hat = map(float, res.x)
    ll_hat = -res.fun * n

    se = _hessian_stderr(lambda p: -loglik(*p), np.array([mu_hat, alpha_hat]))

    table = {}
    for a in alpha_grid:
        r = optimize.minimize_scalar(lambda m: -loglik(m, a) / n, bounds=(1e-3, 20.0), method="bounded",
                                     options={"xatol": 1e-10})
        if not r.success:
            raise FitError(f"profile likelihood at alpha={a} did not converge")
        table[float(a)] = float(-r.fun * n)
    C = normalization_constant(mu_hat, alpha_hat, x0, xmin, xcap, Variant.CONSTANT_D)
    return PdfFit(mu_hat, alpha_hat, C, float(ll_hat), n, se[0], se[1], x0, xmin, xcap, table)


def _hessian_stderr(f, p, rel=1e-4):
    """Standard errors from a central-difference Hessian; NaN where it is not positive definite.

    Parameters at a bound (alpha = 0) get a one-sided step.
    """
    k = p.size
    h = rel * np.maximum(np.abs(p), 1e-2)
    base = p.copy()
    base = np.where(base - h < 0, h, base)
    H = np.empty((k, k))
    for i in range(k):
        for j in range(k):
            ei, ej = np.eye(k)[i] * h[i], np.eye(k)[j] * h[j]
            H[i, j] = (f(base + ei + ej) - f(base + ei - ej) - f(base - ei + ej) + f(base - ei - ej)) / (4 * h[i] * h[j])
    try:
        cov = np.linalg.inv(H)
        d = np.diag(cov)
        return np.where(d > 0, np.sqrt(np.abs(d)), np.nan)
    except np.linalg.LinAlgError:
        warnings.warn("singular Hessian in PDF fit", RuntimeWarning, stacklevel=2)
        return np.array([np.nan] * k)
