"""End-to-end analysis of a two-period panel: kernel profile, tail index, balance, densities."""
from __future__ import annotations

import json
import logging
import math
import warnings
from importlib import resources
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .balance import PairedPanel, fit_regression_line, test_detailed_balance, test_quasi_balance, theta_from_gamma
from .binning import BinningScheme
from .distributions import DEFAULT_XCAP
from .errors import ConfigurationError, DomainError, FitError
from .estimation import (
    conditional_growth_histograms,
    estimate_pareto_index,
    fit_combined_pdf,
    fit_non_gibrat,
    fit_tents,
)

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = "1.0"
BIN_GROUPS = ((1, 5), (6, 10), (11, 15), (16, 20))


def report_schema() -> dict:
    """JSON schema of the analysis report, shipped with the package."""
    return json.loads(resources.files("nongibrat").joinpath("schemas/analysis_report.schema.json").read_text())


@dataclass(frozen=True)
class AnalysisOptions:
    """Knobs of :func:`analyze_panel`.

    ``pdf_xmin=None`` starts the density fits at the larger of the fitted ``xmin``
    and ten times the smallest observed value, so that a truncated lower edge of
    the sample does not leak into the fit.  ``xcap=None`` uses the default cap or
    the largest observed value if that is higher.  ``Gamma=None`` is ``log10(xcap)``.

    ``growth`` picks the growth rate behind the tent fits: ``raw`` is x2/x1,
    ``modified`` is x2/(a x1**theta) at the fitted line, and ``auto`` uses the
    modified rate when the detailed-balance test rejects.
    """

    n_bins: int = 20
    r_binwidth: float = 0.1
    tent_method: str = "poisson"
    regression: str = "rma"
    n_permutations: int = 999
    seed: int = 0
    level: float = 0.05
    alpha_grid: tuple = (0.10, 0.14, 0.20)
    pdf_xmin: float | None = None
    xcap: float | None = None
    Gamma: float | None = None
    n_jobs: int = 1
    growth: str = "auto"

    def __post_init__(self):
        if self.growth not in ("auto", "raw", "modified"):
            raise ConfigurationError(f"growth must be auto, raw or modified, got {self.growth!r}")
        if self.tent_method not in ("poisson", "wls"):
            raise ConfigurationError(f"unknown tent method {self.tent_method!r}")
        if self.regression not in ("rma", "ols"):
            raise ConfigurationError(f"unknown regression {self.regression!r}")
        if self.n_permutations < 1 or self.n_bins < 4 or self.r_binwidth <= 0 or not 0 < self.level < 1:
            raise ConfigurationError("n_permutations >= 1, n_bins >= 4, r_binwidth > 0 and 0 < level < 1 required")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alpha_grid"] = list(self.alpha_grid)
        return d


@dataclass
class AnalysisResult:
    report: dict
    tables: dict = field(default_factory=dict)

    def estimate(self, name: str) -> float:
        return self.report["estimates"][name]["value"]


class _Collector(logging.Handler):
    def __init__(self):
        super().__init__(logging.WARNING)
        self.messages = []

    def emit(self, record):
        self.messages.append(record.getMessage())


def _est(value, stderr, window, source):
    return {"value": value, "stderr": stderr, "window": [int(window[0]), int(window[1])], "source": source}


def _bin_of(scheme: BinningScheme, x: float) -> int:
    b = int(scheme.assign(np.array([x]))[0])
    if b == 0:
        b = 1 if x < scheme.edges[0] else scheme.n_bins
    return b


def _log_histogram(values, lo, hi, per_decade=10):
    k0, k1 = math.floor(math.log10(lo) * per_decade), math.ceil(math.log10(hi) * per_decade)
    edges = 10.0 ** (np.arange(k0, max(k1, k0 + 1) + 1) / per_decade)
    counts = np.histogram(values, bins=edges)[0]
    return edges, counts / (values.size * np.diff(edges))


def _tables(panel, scheme, histograms, tentfits):
    tables = {}
    x1, x2 = panel.x1, panel.x2
    lo, hi = min(x1.min(), x2.min()), max(x1.max(), x2.max())
    edges, p1 = _log_histogram(x1, lo, hi)
    _, p2 = _log_histogram(x2, lo, hi)
    centers = np.sqrt(edges[1:] * edges[:-1])
    keep = (p1 > 0) | (p2 > 0)
    tables["pdf_x.tsv"] = (centers[keep], p1[keep], p2[keep])
    for g0, g1 in BIN_GROUPS:
        rows = []
        for h in histograms:
            if g0 <= h.bin_index <= g1 and h.n > 0:
                q = h.density
                nz = q > 0
                rows.append(np.column_stack([np.full(nz.sum(), h.bin_index), h.centers[nz], q[nz]]))
        arr = np.vstack(rows) if rows else np.empty((0, 3))
        tables[f"q_r_bins{g0:02d}-{g1:02d}.tsv"] = (arr[:, 0], arr[:, 1], arr[:, 2])
    tables["t_pm.tsv"] = (np.array([f.lower for f in tentfits]), np.array([f.t_plus_hat for f in tentfits]),
                          np.array([f.t_minus_hat for f in tentfits]))
    return tables


def analyze_panel(panel: PairedPanel, options: AnalysisOptions | None = None, provenance: dict | None = None
                  ) -> AnalysisResult:
    """Run the full estimation chain on ``panel`` and assemble a JSON-ready report.

    Raises :class:`FitError` when the kernel profile cannot be fitted.  Steps that
    fail further down (a density fit, a symmetry test on too few pairs) are
    reported as ``null`` with the reason in ``warnings``.
    """
    opt = options or AnalysisOptions()
    collector = _Collector()
    root = logging.getLogger("nongibrat")
    root.addHandler(collector)
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            report, tables = _analyze(panel, opt, collector)
    finally:
        root.removeHandler(collector)
    report["warnings"] = collector.messages + [str(w.message) for w in caught] + report["warnings"]
    prov = {"version": __version__, "seed": opt.seed, "options": opt.to_dict()}
    prov.update(provenance or {})
    report["provenance"] = prov
    return AnalysisResult(_order(report), tables)


def _order(report):
    keys = ["schema_version", "provenance", "n_pairs", "growth_rate", "estimates", "tent_fits", "non_gibrat", "symmetry",
            "pdf_fit", "discrimination", "quasi", "warnings"]
    return {k: report[k] for k in keys if k in report}


def _analyze(panel, opt, collector):
    notes = []
    scheme = BinningScheme(n_bins=opt.n_bins)
    x1, x2 = panel.x1, panel.x2
    joint = (float(min(x1.min(), x2.min())), float(max(x1.max(), x2.max())))
    xcap = opt.xcap if opt.xcap is not None else max(DEFAULT_XCAP, joint[1])
    Gamma = opt.Gamma if opt.Gamma is not None else math.log10(xcap)
    occupied = np.unique(scheme.assign(x1))
    occupied = occupied[occupied > 0]
    all_bins = (int(occupied.min()), int(occupied.max())) if occupied.size else (1, scheme.n_bins)

    reg = fit_regression_line(panel, method=opt.regression)
    est = {
        "theta": _est(reg.theta, reg.theta_stderr, all_bins, f"{reg.method} regression of log10 x2 on log10 x1"),
        "log10_a": _est(reg.log10_a, reg.log10_a_stderr, all_bins, f"{reg.method} regression intercept"),
        "a": _est(reg.a, reg.a * math.log(10.0) * reg.log10_a_stderr, all_bins, "10**log10_a"),
    }

    symmetry = {}
    sym_kw = dict(bins=scheme, n_permutations=opt.n_permutations, seed=opt.seed, level=opt.level, n_jobs=opt.n_jobs)
    for name, run in (("detailed_balance", lambda: test_detailed_balance(panel, **sym_kw)),
                      ("quasi_balance", lambda: test_quasi_balance(panel, reg.params(Gamma), **sym_kw))):
        try:
            symmetry[name] = run().to_dict()
        except (DomainError, FitError) as e:
            notes.append(f"{name} test skipped: {e}")
            symmetry[name] = None

    growth = opt.growth
    if growth == "auto":
        db = symmetry["detailed_balance"]
        growth = "modified" if db is not None and db["verdict"] == "fail" else "raw"
    if growth == "modified":
        q, support = reg.params(Gamma), (float(x2.min()), float(x2.max()))
    else:
        q, support = None, joint
    hists = conditional_growth_histograms(panel, scheme, opt.r_binwidth, support=support, quasi=q)
    tents = fit_tents(hists, method=opt.tent_method)
    ng = fit_non_gibrat(tents, scheme)

    def resolution(b):
        return (scheme.upper(b) - scheme.lower(b)) / math.sqrt(12.0)

    est.update({
        "alpha": _est(ng.alpha_hat, ng.alpha_stderr, (ng.xmin_bin, ng.x0_bin), "tent profile"),
        "x0": _est(ng.x0_hat, resolution(ng.x0_bin), (ng.x0_bin, ng.x0_bin), "tent profile change point"),
        "xmin": _est(ng.xmin_hat, resolution(ng.xmin_bin), (ng.xmin_bin, ng.xmin_bin), "tent profile change point"),
        "t_plus_x0": _est(ng.t_plus_x0_hat, ng.t_plus_x0_stderr, (ng.x0_bin, scheme.n_bins), "tent profile"),
        "t_minus_x0": _est(ng.t_minus_x0_hat, ng.t_minus_x0_stderr, (ng.x0_bin, scheme.n_bins), "tent profile"),
        "mu_kernel": _est(ng.mu_hat, math.hypot(ng.t_plus_x0_stderr, ng.t_minus_x0_stderr),
                          (ng.x0_bin, scheme.n_bins), "t_plus(x0) - t_minus(x0)"),
    })
    try:
        mu, mu_se = estimate_pareto_index(x1, ng.x0_hat)
        est["mu"] = _est(mu, mu_se, (ng.x0_bin, scheme.n_bins), "Hill estimator on x1 above x0")
    except FitError as e:
        notes.append(f"Hill estimator skipped: {e}")
        est["mu"] = _est(None, None, (ng.x0_bin, scheme.n_bins), "Hill estimator on x1 above x0")

    # The change point sits on a bin boundary but is read off at bin lower bounds,
    # so it is known to about one bin.  The density fit takes whichever of the
    # neighbouring boundaries fits best.
    pdf_xmin = opt.pdf_xmin if opt.pdf_xmin is not None else max(ng.xmin_hat, 10.0 * joint[0])
    sel1 = x1[(x1 >= pdf_xmin) & (x1 <= xcap)]
    f1, x0_bin = None, None
    for b in range(max(1, ng.x0_bin - 1), min(scheme.n_bins, ng.x0_bin + 1) + 1):
        x0 = scheme.lower(b)
        if not x0 > pdf_xmin:
            continue
        try:
            fit = fit_combined_pdf(sel1, x0, pdf_xmin, opt.alpha_grid, xcap)
        except (DomainError, FitError) as e:
            notes.append(f"density fit on x1 with x0 at bin {b} failed: {e}")
            continue
        if f1 is None or fit.loglik > f1.loglik:
            f1, x0_bin = fit, b
    f2 = None
    if f1 is None:
        notes.append("density fit on x1 skipped: no admissible x0 above the fit threshold")
    else:
        th, a = reg.theta, reg.a
        x0p, xminp, capp = a * f1.x0**th, a * pdf_xmin**th, a * xcap**th
        try:
            f2 = fit_combined_pdf(x2[(x2 >= xminp) & (x2 <= capp)], x0p, xminp, opt.alpha_grid, capp)
        except (DomainError, FitError) as e:
            notes.append(f"density fit on x2 skipped: {e}")

    discrimination = None
    if f1 is not None:
        pdf_window = (_bin_of(scheme, pdf_xmin), scheme.n_bins)
        est["x0_pdf"] = _est(f1.x0, resolution(x0_bin), (x0_bin, x0_bin), "density fit, best neighbouring boundary")
        est["mu_pdf"] = _est(f1.mu_hat, f1.mu_stderr, pdf_window, "density fit on x1")
        est["alpha_pdf"] = _est(f1.alpha_hat, f1.alpha_stderr, pdf_window, "density fit on x1")
        table = sorted(f1.discrimination.items())
        best = max(table, key=lambda t: t[1])
        discrimination = {
            "alpha_grid": [a_ for a_, _ in table],
            "loglik": [ll for _, ll in table],
            "best_alpha": best[0],
            "delta_loglik": [ll - best[1] for _, ll in table],
        }

    quasi = {"Gamma": Gamma, "theta_from_gamma": theta_from_gamma(reg.a, Gamma) if Gamma > 0 else None,
             "sigma1": None, "sigma2": None, "sigma_ratio": None,
             "pdf_fit_x2": f2.to_dict() if f2 is not None else None}
    if f1 is not None and f2 is not None and f1.alpha_hat > 0 and f2.alpha_hat > 0:
        quasi.update(sigma1=f1.sigma, sigma2=f2.sigma, sigma_ratio=f2.sigma / f1.sigma)

    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "n_pairs": len(panel),
        "growth_rate": growth,
        "estimates": est,
        "tent_fits": [t.to_dict() for t in tents],
        "non_gibrat": ng.to_dict(),
        "symmetry": symmetry,
        "pdf_fit": f1.to_dict() if f1 is not None else None,
        "discrimination": discrimination,
        "quasi": quasi,
        "warnings": notes,
    }
    return report, _tables(panel, scheme, hists, tents)
