import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nongibrat.balance import PairedPanel
from nongibrat.binning import BinningScheme, make_bins
from nongibrat.distributions import CombinedDistribution
from nongibrat.errors import DomainError, FitError
from nongibrat.estimation import (
    GrowthHistogram,
    TentFit,
    conditional_growth_histograms,
    estimate_pareto_index,
    fit_combined_pdf,
    fit_non_gibrat,
    fit_tent,
    fit_tents,
)
from nongibrat.growth_kernel import NonGibratProfile, TentKernelAt

X0 = 63395.72769844456
XMIN = 1592.4286822139893


# ---------------------------------------------------------------- binning


def test_first_bin():
    lo, hi = make_bins()[0]
    assert lo == pytest.approx(40.0, rel=1e-15)
    assert hi == pytest.approx(63.3957, rel=1e-5)


def test_named_bin_bounds():
    s = BinningScheme()
    assert s.lower(9) == pytest.approx(1592.4287, rel=1e-7)
    assert s.lower(17) == pytest.approx(63395.728, rel=1e-7)
    assert len(make_bins()) == 20


def test_bins_contiguous():
    b = make_bins(BinningScheme(base=2.0, offset=0.5, step=0.3, n_bins=7))
    assert all(b[i][1] == b[i + 1][0] for i in range(6))
    assert all(lo < hi for lo, hi in b)


def test_bad_scheme():
    with pytest.raises(ValueError):
        BinningScheme(n_bins=0)


@given(st.floats(40.0, 4e5 * (1 - 1e-12)))
def test_binning_partition(x):
    s = BinningScheme()
    k = int(s.assign(x))
    lo, hi = make_bins(s)[k - 1]
    assert lo <= x < hi
    assert sum(lo <= x < hi for lo, hi in make_bins(s)) == 1


def test_out_of_range_is_zero():
    s = BinningScheme()
    np.testing.assert_array_equal(s.assign([39.9, s.edges[-1], 1e9]), [0, 0, 0])


# ---------------------------------------------------------------- histograms


def test_single_pair_no_growth():
    hs = conditional_growth_histograms(PairedPanel(np.array([5000.0]), np.array([5000.0])))
    h = next(h for h in hs if h.n)
    k = int(np.argmax(h.counts))
    assert h.counts.sum() == 1
    assert h.edges[k] <= 0.0 < h.edges[k + 1]
    assert sum(not g.usable for g in hs) == 19


def test_histograms_partition_and_normalize(static_panel):
    hs = conditional_growth_histograms(static_panel)
    in_range = BinningScheme().assign(static_panel.x1) > 0
    assert sum(h.n for h in hs) == int(in_range.sum())
    for h in hs:
        if h.n:
            assert h.counts.sum() == h.n
            assert abs(h.density.sum() * h.width - 1.0) < 1.0 / h.n + 1e-12


def test_histogram_grid_has_zero_edge():
    rng = np.random.default_rng(0)
    x1 = np.exp(rng.uniform(5, 10, 500))
    hs = conditional_growth_histograms(PairedPanel(x1, x1 * np.exp(rng.normal(0, 3, 500))), r_binwidth=0.25)
    e = hs[0].edges
    assert np.any(np.isclose(e, 0.0, atol=1e-15))
    assert e[0] <= -4 and e[-1] >= 4


def test_histogram_censoring():
    x1 = np.full(10, 5000.0)
    hs = conditional_growth_histograms(PairedPanel(x1, x1), support=(1000.0, 1e5))
    h = next(h for h in hs if h.n)
    c = h.centers
    # r above log10(1e5/lower) or below log10(1e3/upper) cannot be fully reached
    assert np.all(h.censored[c > math.log10(1e5 / h.lower)])
    assert np.all(h.censored[c < math.log10(1e3 / h.upper)])
    assert not h.censored[np.argmin(np.abs(c - 0.05))]


def test_histogram_domain():
    with pytest.raises(DomainError):
        conditional_growth_histograms(PairedPanel(np.array([]), np.array([])))
    with pytest.raises(DomainError):
        conditional_growth_histograms(PairedPanel(np.ones(2), np.ones(2)), r_binwidth=0.0)


# ---------------------------------------------------------------- tent fits


def _noiseless(c, tp, tm, n=10_000, w=0.1):
    edges = w * np.arange(-30, 31)
    rc = 0.5 * (edges[1:] + edges[:-1])
    logq = c + np.where(rc > 0, -tp * rc, tm * rc)
    counts = n * w * 10.0**logq
    return GrowthHistogram(5, 250.0, 400.0, n, edges, counts, np.zeros(rc.size, bool))


@pytest.mark.parametrize("method", ["wls", "poisson"])
def test_tent_exact_recovery(method):
    f = fit_tent(_noiseless(0.0, 1.5, 0.5), method)
    assert f.c_hat == pytest.approx(0.0, abs=1e-9)
    assert f.t_plus_hat == pytest.approx(1.5, rel=1e-9)
    assert f.t_minus_hat == pytest.approx(0.5, rel=1e-9)
    assert all(np.isfinite(f.stderrs)) and all(s >= 0 for s in f.stderrs)


@pytest.mark.parametrize("method", ["wls", "poisson"])
def test_tent_mirror_swaps_exponents(method, rng):
    x1 = np.full(20_000, 5000.0)
    R = TentKernelAt(1.8, 0.8).sample(rng, x1.size)
    h = next(h for h in conditional_growth_histograms(PairedPanel(x1, x1 * R)) if h.n)
    a, b = fit_tent(h, method), fit_tent(h.mirrored(), method)
    assert b.t_plus_hat == pytest.approx(a.t_minus_hat, rel=1e-9)
    assert b.t_minus_hat == pytest.approx(a.t_plus_hat, rel=1e-9)
    assert b.c_hat == pytest.approx(a.c_hat, abs=1e-9)


@pytest.mark.parametrize("method", ["wls", "poisson"])
def test_tent_renormalization(method):
    h = _noiseless(0.2, 1.2, 0.7)
    scaled = GrowthHistogram(h.bin_index, h.lower, h.upper, h.n, h.edges, 10 * h.counts, h.censored)
    a, b = fit_tent(h, method), fit_tent(scaled, method)
    assert b.c_hat - a.c_hat == pytest.approx(1.0, abs=1e-9)
    assert b.t_plus_hat == pytest.approx(a.t_plus_hat, rel=1e-9)
    assert b.t_minus_hat == pytest.approx(a.t_minus_hat, rel=1e-9)


@pytest.mark.parametrize("method", ["wls", "poisson"])
def test_tent_kernel_samples(method):
    x1 = np.full(100_000, 5000.0)
    R = TentKernelAt(1.8, 0.8).sample(np.random.default_rng(21), x1.size)
    h = next(h for h in conditional_growth_histograms(PairedPanel(x1, x1 * R)) if h.n)
    f = fit_tent(h, method)
    assert abs(f.t_plus_hat - 1.8) < 2 * f.t_plus_stderr
    assert abs(f.t_minus_hat - 0.8) < 2 * f.t_minus_stderr


def test_tent_error_names_side():
    x1 = np.full(500, 5000.0)
    x2 = x1 * 10 ** np.random.default_rng(0).uniform(0, 1, 500)
    h = next(h for h in conditional_growth_histograms(PairedPanel(x1, x2)) if h.n)
    with pytest.raises(FitError, match="negative"):
        fit_tent(h)
    with pytest.raises(FitError, match="positive"):
        fit_tent(h.mirrored())


def test_fit_tents_skips_sparse(caplog, rng):
    x1 = np.concatenate([np.full(5000, 5000.0), np.full(10, 100.0)])
    R = TentKernelAt(1.5, 1.0).sample(rng, x1.size)
    fits = fit_tents(conditional_growth_histograms(PairedPanel(x1, x1 * R)))
    assert len(fits) == 1
    assert "no tent fit" in caplog.text


@pytest.fixture(scope="module")
def static_fits(static_panel):
    # r-bins that would push x2 outside the observed support are censored
    x = np.concatenate([static_panel.x1, static_panel.x2])
    return fit_tents(conditional_growth_histograms(static_panel, support=(x.min(), x.max())))


def test_static_panel_exponent_sum_constant(static_fits):
    fits = [f for f in static_fits if 9 <= f.bin_index <= 16]
    s = np.array([f.t_plus_hat + f.t_minus_hat for f in fits])
    se = np.array([math.hypot(f.t_plus_stderr, f.t_minus_stderr) for f in fits])
    w = 1 / se**2
    mean = np.sum(w * s) / w.sum()
    assert np.all(np.abs(s - mean) < 2 * np.sqrt(se**2 + 1 / w.sum()))
    assert mean == pytest.approx(2.6, abs=0.03)


# ---------------------------------------------------------------- non-Gibrat profile


def _profile_fits(alpha, noise, seed):
    """Tent fits at bin lower bounds from a known profile, with Gaussian noise."""
    prof = NonGibratProfile(1.8, 0.8, alpha, X0, XMIN, xfloor=30.0)
    rng = np.random.default_rng(seed)
    s = BinningScheme()
    out = []
    for b in range(1, 21):
        tp, tm = prof.t_pm(s.lower(b))
        out.append(TentFit(b, 0.0, float(tp + noise * rng.normal()), float(tm + noise * rng.normal()),
                           (noise, noise, noise), 1000))
    return out


def test_non_gibrat_recovery_from_profile():
    g = fit_non_gibrat(_profile_fits(0.14, 0.01, 1))
    assert 0.11 <= g.alpha_hat <= 0.17
    assert abs(g.x0_bin - 17) <= 1
    assert abs(g.xmin_bin - 9) <= 1
    assert g.xmin_hat < g.x0_hat
    assert not g.gibrat
    assert g.mu_hat == pytest.approx(1.0, abs=0.05)


def test_non_gibrat_noiseless_exact():
    g = fit_non_gibrat(_profile_fits(0.14, 1e-6, 2))
    assert g.alpha_hat == pytest.approx(0.14, abs=1e-4)
    assert (g.xmin_bin, g.x0_bin) == (9, 17)
    assert g.window == (9, 17)


def test_non_gibrat_flat_case():
    g = fit_non_gibrat(_profile_fits(0.0, 0.02, 3))
    assert g.gibrat
    assert g.alpha_hat < 0.02
    assert g.window == (1, 20)


def test_non_gibrat_symmetric_slopes():
    g = fit_non_gibrat(_profile_fits(0.14, 0.02, 4))
    assert abs(g.alpha_plus - g.alpha_minus) < 2 * math.hypot(g.alpha_plus_stderr, g.alpha_minus_stderr)


def test_non_gibrat_on_static_panel(static_fits):
    g = fit_non_gibrat(static_fits)
    assert 0.11 <= g.alpha_hat <= 0.17
    assert abs(g.x0_bin - 17) <= 1
    assert abs(g.alpha_plus - g.alpha_minus) < 2 * math.hypot(g.alpha_plus_stderr, g.alpha_minus_stderr)
    d = g.to_dict()
    assert d["window"] == [g.xmin_bin, g.x0_bin]


def test_non_gibrat_needs_four_fits():
    with pytest.raises(FitError):
        fit_non_gibrat(_profile_fits(0.14, 0.01, 5)[:3])


# ---------------------------------------------------------------- Pareto index


@pytest.mark.parametrize("n", [100, 1000, 100_000])
def test_hill_on_quantile_grid(n):
    u = (np.arange(n) + 0.5) / n
    x = 10.0 * (1 - u) ** -1.0
    mu, se = estimate_pareto_index(x, 10.0)
    assert se == pytest.approx(mu / math.sqrt(n))
    assert abs(mu - 1) < 3 / math.log(n) ** 2


def test_hill_converges_on_grid():
    errs = []
    for n in (100, 1000, 10_000, 100_000):
        u = (np.arange(n) + 0.5) / n
        errs.append(abs(estimate_pareto_index(10.0 * (1 - u) ** -1.0, 10.0)[0] - 1))
    assert all(a > b for a, b in zip(errs, errs[1:]))


def test_hill_on_static_panel(static_panel):
    mu, se = estimate_pareto_index(static_panel.x1, X0)
    assert abs(mu - 1.0) < 0.05


def test_hill_needs_tail():
    with pytest.raises(FitError):
        estimate_pareto_index(np.full(100, 5.0), 10.0)


# ---------------------------------------------------------------- PDF fit


@pytest.fixture(scope="module")
def pdf_sample():
    return CombinedDistribution(1.0, 0.14, X0, XMIN).sample(np.random.default_rng(11), 200_000)


@pytest.fixture(scope="module")
def pdf_fit(pdf_sample):
    return fit_combined_pdf(pdf_sample, X0, XMIN)


def test_pdf_round_trip(pdf_fit):
    assert abs(pdf_fit.mu_hat - 1.0) < 0.1
    assert abs(pdf_fit.alpha_hat - 0.14) < 0.03
    assert np.isfinite(pdf_fit.loglik)
    assert pdf_fit.C_hat > 0
    assert pdf_fit.sigma == pytest.approx(1 / math.sqrt(2 * pdf_fit.alpha_hat))


def test_pdf_discrimination(pdf_fit):
    ll = pdf_fit.discrimination
    assert ll[0.14] > ll[0.10]
    assert ll[0.14] > ll[0.20]
    assert all(v <= pdf_fit.loglik + 1e-6 for v in ll.values())


def test_pdf_alpha_zero():
    x = CombinedDistribution(1.0, 0.0, X0, XMIN).sample(np.random.default_rng(12), 50_000)
    assert fit_combined_pdf(x, X0, XMIN).alpha_hat <= 0.02


def test_pdf_domain(pdf_sample):
    with pytest.raises(DomainError):
        fit_combined_pdf(pdf_sample, X0, 2 * XMIN)
    with pytest.raises(DomainError):
        fit_combined_pdf(pdf_sample[:1], X0, XMIN)
