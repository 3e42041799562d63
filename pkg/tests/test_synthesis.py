import math

import numpy as np
import pytest
from scipy import integrate, stats

from conftest import QUASI, SEED
from nongibrat.balance import QuasiBalanceParams, fit_regression_line
from nongibrat.distributions import Variant, PiecewiseDensity
from nongibrat.errors import ConfigurationError, DomainError
from nongibrat.growth_kernel import NonGibratProfile
from nongibrat.synthesis import (
    SynthesisConfig,
    default_profile,
    generate_gibrat_paths,
    generate_gibrat_trajectory,
    generate_panel,
    generate_quasi_panel,
    generate_static_panel,
    lognormal_growth,
)


def _accepted_marginal_cdf(profile, n_grid=400_001):
    """CDF of x1 after pair rejection, built from closed forms on a log grid.

    x1 has density x**(-mu-1) exp(-alpha ln^2(x/x0)) / d(x) below x0 and
    x**(-mu-1) / d(x0) above; a pair is kept when x1*R stays inside the support,
    which for the tent kernel happens with probability
    1 - (t+/s) (lo/x)**t- - (t-/s) (x/hi)**t+ in s = t+ + t-.
    """
    lo, hi, x0, mu, al = profile.lower, profile.xcap, profile.x0, profile.mu, profile.alpha
    t = np.linspace(math.log(lo), math.log(hi), n_grid)
    x = np.exp(t)
    tp, tm = profile.t_pm(x)
    s = tp + tm
    d = tp * tm / s
    u = np.minimum(t - math.log(x0), 0.0)
    f = x ** (-mu) * np.exp(-al * u * u) / d
    keep = 1.0 - (tp / s) * (lo / x) ** tm - (tm / s) * (x / hi) ** tp
    F = integrate.cumulative_trapezoid(f * keep, t, initial=0.0)
    F /= F[-1]
    return lambda v: np.interp(np.log(v), t, F)


# ---------------------------------------------------------------- static panels


def test_static_marginal_ks(static_panel, profile):
    cdf = _accepted_marginal_cdf(profile)
    assert stats.kstest(static_panel.x1, cdf).pvalue > 0.05
    assert stats.kstest(static_panel.x2, cdf).pvalue > 0.05


def test_static_marginals_match(static_panel):
    assert stats.ks_2samp(static_panel.x1, static_panel.x2).pvalue > 0.05


def test_static_support(static_panel, profile):
    for x in (static_panel.x1, static_panel.x2):
        assert x.min() >= profile.lower and x.max() <= profile.xcap
    assert static_panel.meta["mode"] == "static"


def test_default_profile_support():
    p = default_profile()
    assert p.lower == pytest.approx(159.24286822, rel=1e-9)
    assert p.x0 == pytest.approx(63395.7277, rel=1e-9)
    assert p.mu == pytest.approx(1.0, abs=1e-15)
    assert default_profile(floor_decades=0).lower == pytest.approx(1592.4286822, rel=1e-9)
    with pytest.raises(ConfigurationError):
        default_profile(floor_decades=-1)


def test_determinism():
    cfg = SynthesisConfig.defaults(n=5000, seed=3)
    a, b = generate_panel(cfg), generate_panel(cfg)
    assert np.array_equal(a.x1, b.x1) and np.array_equal(a.x2, b.x2)
    assert a.n_rejected == b.n_rejected
    c = generate_panel(SynthesisConfig.defaults(n=5000, seed=4))
    assert not np.array_equal(a.x1, c.x1)


def test_chunked_stream_deterministic_and_distinct():
    base = SynthesisConfig.defaults(n=6000, seed=3)
    chunked = SynthesisConfig(profile=base.profile, n=6000, seed=3, n_chunks=4)
    a, b = generate_panel(chunked), generate_panel(chunked)
    assert np.array_equal(a.x1, b.x1)
    assert len(a) == 6000
    assert not np.array_equal(a.x1, generate_panel(base).x1)
    assert stats.ks_2samp(a.x1, generate_panel(base).x1).pvalue > 0.01


def test_rejection_count_exact(monkeypatch):
    draws, growth = [], []
    orig_sample = PiecewiseDensity.sample
    orig_growth = NonGibratProfile.sample_growth

    def spy_sample(self, rng, size=None):
        out = orig_sample(self, rng, size)
        draws.append(out)
        return out

    def spy_growth(self, x, rng):
        out = orig_growth(self, x, rng)
        growth.append(out)
        return out

    monkeypatch.setattr(PiecewiseDensity, "sample", spy_sample)
    monkeypatch.setattr(NonGibratProfile, "sample_growth", spy_growth)
    cfg = SynthesisConfig.defaults(n=20_000, seed=5, floor_decades=0.0)
    panel = generate_static_panel(cfg)
    x1 = np.concatenate(draws)
    x2 = x1 * np.concatenate(growth)
    lo, hi = cfg.support1()
    ok = np.nonzero((x2 >= lo) & (x2 <= hi))[0]
    cut = ok[cfg.n - 1] + 1
    assert panel.n_rejected == cut - cfg.n
    assert panel.n_rejected > 0
    np.testing.assert_array_equal(panel.x1, x1[ok[: cfg.n]])


def test_excess_rejection_is_configuration_error():
    narrow = NonGibratProfile(1.8, 0.8, 0.0, 1000.0, 900.0, xcap=1100.0)
    with pytest.raises(ConfigurationError, match="rejection"):
        generate_static_panel(SynthesisConfig(profile=narrow, n=1000))


def test_config_validation(profile):
    with pytest.raises(ConfigurationError):
        SynthesisConfig(profile=profile, n=0)
    with pytest.raises(ConfigurationError):
        SynthesisConfig(profile=profile, n=10, n_chunks=11)
    with pytest.raises(ConfigurationError):
        generate_static_panel(SynthesisConfig(profile=profile, n=10, quasi=QUASI))
    with pytest.raises(ConfigurationError):
        generate_quasi_panel(SynthesisConfig(profile=profile, n=10))


def test_dist_profile_consistency(profile):
    from nongibrat.distributions import CombinedDistribution
    ok = CombinedDistribution.from_profile(profile)
    SynthesisConfig(profile=profile, n=10, dist=ok)
    bad = CombinedDistribution(1.2, profile.alpha, profile.x0, profile.xmin, profile.xcap)
    with pytest.raises(ConfigurationError, match="mu"):
        SynthesisConfig(profile=profile, n=10, dist=bad)


def test_constant_d_variant_generates(profile):
    p = generate_panel(SynthesisConfig(profile=profile, n=2000, variant=Variant.CONSTANT_D))
    assert len(p) == 2000


# ---------------------------------------------------------------- quasi panels


def test_quasi_regression_slope(quasi_panel):
    assert abs(fit_regression_line(quasi_panel).theta - 0.95) < 0.02


def test_quasi_support(quasi_panel):
    lo, hi = quasi_panel.meta["support2"]
    assert quasi_panel.x2.min() >= lo and quasi_panel.x2.max() <= hi
    assert quasi_panel.meta["theta"] == 0.95


def test_quasi_unit_parameters_match_static(static_panel):
    q = generate_panel(SynthesisConfig.defaults(n=50_000, seed=SEED + 1, quasi=QuasiBalanceParams(1.0, 1.0)))
    assert stats.ks_2samp(q.x1, static_panel.x1).pvalue > 0.05
    assert stats.ks_2samp(q.r, static_panel.r).pvalue > 0.05


def test_quasi_nonpositive_index_rejected(profile):
    with pytest.raises(ConfigurationError):
        generate_panel(SynthesisConfig(profile=profile, n=10, quasi=QuasiBalanceParams(0.4, 1.0)))


def test_symmetrized_generator_keeps_marginals(profile):
    cfg = SynthesisConfig(profile=profile, n=50_000, seed=2, symmetrize=True)
    p = generate_panel(cfg)
    assert stats.ks_2samp(p.x1, p.x2).pvalue > 0.05
    assert stats.kstest(p.x1, _accepted_marginal_cdf(profile)).pvalue > 0.01


# ---------------------------------------------------------------- Gibrat process


def test_unit_growth_constant_path():
    path = generate_gibrat_trajectory(lambda rng, size: np.ones(size), 50, 7.0, np.random.default_rng(0))
    assert path.shape == (51,)
    np.testing.assert_allclose(path, 7.0, rtol=1e-14)


def test_gibrat_normality():
    logx = generate_gibrat_paths(lognormal_growth(0.1), 100, 1.0, np.random.default_rng(6), 100_000, log=True)
    z = logx[:, -1]
    assert abs(stats.skew(z)) < 0.05
    assert abs(stats.kurtosis(z)) < 0.1


def test_gibrat_mean_additivity():
    sigma, m, T, n = 0.2, 0.01, 100, 100_000
    z = generate_gibrat_paths(lognormal_growth(sigma, m), T, 5.0, np.random.default_rng(7), n, log=True)[:, -1]
    se = sigma * math.sqrt(T) / math.sqrt(n)
    assert abs(z.mean() - (T * m + math.log(5.0))) < 4 * se


def test_gibrat_log_space_no_overflow():
    z = generate_gibrat_paths(lognormal_growth(1.0, 10.0), 100, 1.0, np.random.default_rng(1), 3, log=True)
    assert np.all(np.isfinite(z)) and z[:, -1].min() > 700


def test_gibrat_generic_sampler_and_errors():
    rng = np.random.default_rng(2)
    path = generate_gibrat_trajectory(lambda r, size: r.uniform(0.5, 1.5, size), 10, 1.0, rng)
    assert np.all(path > 0)
    with pytest.raises(DomainError):
        generate_gibrat_trajectory(lambda r, size: np.zeros(size), 10, 1.0, rng)
    with pytest.raises(DomainError):
        generate_gibrat_trajectory(lognormal_growth(0.1), 0, 1.0, rng)
    with pytest.raises(DomainError):
        generate_gibrat_trajectory(lognormal_growth(0.1), 5, -1.0, rng)
