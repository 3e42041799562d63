"""Seeded Monte Carlo panels: static balanced pairs, quasi-balanced pairs, Gibrat paths.

A panel is generated by drawing ``x1`` from the stationary density that solves the
balance equation for the chosen kernel profile, drawing a growth rate from the
tent kernel at ``x1`` and setting ``x2 = R*x1`` (static) or ``x2 = a*x1**theta*R``
(quasi).  Pairs leaving the support are rejected whole; the support is mapped onto
itself by the (quasi-)balance symmetry, so rejection keeps the joint density
symmetric.

Firms near the lower support bound that shrink are rejected, which depletes the
density there.  The default profile therefore continues the linear law one decade
below the analysis threshold ``xmin``; the linear law is the only exponent profile
that stays balanced across that range, so no kink is added.

Forward sampling balances pairs within one regime exactly but not pairs that
straddle the kink at ``x0``.  ``symmetrize=True`` re-orients every pair at random
with the orientation law of an exactly invariant joint density, which makes the
panel balanced everywhere at the price of averaging the kernel across the kink.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .balance import PairedPanel, QuasiBalanceParams
from .binning import BinningScheme
from .distributions import CombinedDistribution, PiecewiseDensity, Variant, stationary_density
from .errors import ConfigurationError, DomainError
from .growth_kernel import NonGibratProfile

MAX_REJECTION = 0.5

DEFAULT_T_PLUS_X0 = 1.8
DEFAULT_T_MINUS_X0 = 0.8
DEFAULT_ALPHA = 0.14


def default_profile(alpha: float = DEFAULT_ALPHA, t_plus_x0: float = DEFAULT_T_PLUS_X0,
                    t_minus_x0: float = DEFAULT_T_MINUS_X0, x0: float | None = None,
                    xmin: float | None = None, xcap: float = 1e9, floor_decades: float = 1.0
                    ) -> NonGibratProfile:
    """Generating profile at the reference point.

    ``x0`` defaults to the lower bound of bin 17 and ``xmin`` to that of bin 9.  The
    linear law runs from ``x0`` down to ``xmin / 10**floor_decades``, the lower bound
    of the generated support; ``floor_decades=0`` starts the support at ``xmin``.
    """
    bins = BinningScheme()
    x0 = bins.lower(17) if x0 is None else x0
    xmin = bins.lower(9) if xmin is None else xmin
    if floor_decades < 0:
        raise ConfigurationError("floor_decades must be >= 0")
    return NonGibratProfile(t_plus_x0, t_minus_x0, alpha, x0, xmin / 10.0**floor_decades, xcap)


@dataclass(frozen=True)
class SynthesisConfig:
    profile: NonGibratProfile
    n: int
    seed: int = 7
    quasi: QuasiBalanceParams | None = None
    dist: CombinedDistribution | None = None
    variant: Variant = Variant.EXACT_DB
    n_chunks: int = 1
    symmetrize: bool = False

    def __post_init__(self):
        if self.n < 1:
            raise ConfigurationError("n must be >= 1")
        if self.n_chunks < 1 or self.n_chunks > self.n:
            raise ConfigurationError("n_chunks must lie in [1, n]")
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.dist is not None:
            p, d = self.profile, self.dist
            mismatch = [k for k, a, b in (("mu", d.mu, p.mu), ("alpha", d.alpha, p.alpha), ("x0", d.x0, p.x0),
                                           ("xmin", d.xmin, p.xmin), ("xcap", d.xcap, p.xcap))
                        if not math.isclose(a, b, rel_tol=1e-12)]
            if mismatch:
                raise ConfigurationError(f"distribution and profile disagree on {', '.join(mismatch)} "
                                         "(mu must equal t_plus(x0) - t_minus(x0))")

    @classmethod
    def defaults(cls, n: int = 200_000, seed: int = 7, quasi: QuasiBalanceParams | None = None, **kw):
        return cls(profile=default_profile(**kw), n=n, seed=seed, quasi=quasi)

    @property
    def is_static(self) -> bool:
        return self.quasi is None

    @property
    def theta(self) -> float:
        return 1.0 if self.quasi is None else self.quasi.theta

    @property
    def a(self) -> float:
        return 1.0 if self.quasi is None else self.quasi.a

    def support1(self) -> tuple[float, float]:
        return self.profile.lower, self.profile.xcap

    def support2(self) -> tuple[float, float]:
        lo, hi = self.support1()
        return self.a * lo**self.theta, self.a * hi**self.theta


def generating_density(cfg: SynthesisConfig) -> PiecewiseDensity:
    """Period-1 density used by the generator, before pair rejection.

    ``x**(-mu1-1) exp(-theta*alpha*uc*(2u-uc)) / d(x)`` with ``mu1 = theta*(mu+1) - 1``;
    the ``1/d(x)`` factor is dropped for the constant-d variant.
    """
    p, th = cfg.profile, cfg.theta
    mu1 = th * (p.mu + 1.0) - 1.0
    if mu1 <= 0:
        raise ConfigurationError(f"theta={th} gives a nonpositive period-1 index {mu1}")
    prof = p if cfg.variant is Variant.EXACT_DB else None
    return stationary_density(mu1, th * p.alpha, p.x0, p.xmin, p.lower, p.xcap, prof)


def _generate(cfg: SynthesisConfig, rng: np.random.Generator, n: int, density: PiecewiseDensity):
    lo2, hi2 = cfg.support2()
    th, a = cfg.theta, cfg.a
    x1s, x2s = [], []
    got = rejected = drawn = 0
    while got < n:
        m = max(64, int(1.2 * (n - got)) + 16)
        x1 = density.sample(rng, m)
        R = cfg.profile.sample_growth(x1, rng)
        x2 = R * (x1 if th == 1.0 and a == 1.0 else a * x1**th)
        ok = (x2 >= lo2) & (x2 <= hi2)
        drawn += m
        if drawn == m and (m - ok.sum()) / m > MAX_REJECTION:
            raise ConfigurationError(f"rejection rate {(m - ok.sum()) / m:.1%} exceeds {MAX_REJECTION:.0%}")
        need = n - got
        idx = np.nonzero(ok)[0]
        if idx.size > need:
            # count rejections only up to the last accepted draw that is kept
            cut = idx[need - 1] + 1
            rejected += int(cut - need)
            idx = idx[:need]
        else:
            rejected += int(m - idx.size)
        x1, x2 = x1[idx], x2[idx]
        if cfg.symmetrize:
            x1, x2 = _reorient(x1, x2, th, a, rng)
        x1s.append(x1)
        x2s.append(x2)
        got += idx.size
    return np.concatenate(x1s), np.concatenate(x2s), rejected


def _reorient(x1, x2, theta, a, rng):
    """Show each pair or its mirror image ((x2/a)**(1/theta), a*x1**theta).

    A pair with modified growth rate R keeps its orientation with probability
    ``1 / (1 + R**(1/theta - 1))``, the orientation law of a joint density that is
    exactly invariant under the mirror map.  Within one regime of the profile the
    forward draw already has that law and nothing changes in distribution; pairs
    straddling a kink of the profile are averaged with their mirror images.
    """
    s = 1.0 / theta - 1.0
    if s == 0.0:
        flip = rng.random(x1.size) < 0.5
        return np.where(flip, x2, x1), np.where(flip, x1, x2)
    R = x2 / (a * x1**theta)
    flip = rng.random(x1.size) >= 1.0 / (1.0 + R**s)
    y1 = np.where(flip, (x2 / a) ** (1.0 / theta), x1)
    y2 = np.where(flip, a * x1**theta, x2)
    return y1, y2


def _panel(cfg: SynthesisConfig) -> PairedPanel:
    density = generating_density(cfg)
    if cfg.n_chunks == 1:
        x1, x2, rej = _generate(cfg, np.random.default_rng(cfg.seed), cfg.n, density)
    else:
        sizes = [len(c) for c in np.array_split(np.arange(cfg.n), cfg.n_chunks)]
        parts = [_generate(cfg, np.random.default_rng(s), k, density)
                 for s, k in zip(np.random.SeedSequence(cfg.seed).spawn(cfg.n_chunks), sizes)]
        x1 = np.concatenate([p[0] for p in parts])
        x2 = np.concatenate([p[1] for p in parts])
        rej = sum(p[2] for p in parts)
    if rej / (rej + cfg.n) > MAX_REJECTION:
        raise ConfigurationError(f"rejection rate {rej / (rej + cfg.n):.1%} exceeds {MAX_REJECTION:.0%}")
    meta = {
        "mode": "static" if cfg.is_static else "quasi",
        "seed": cfg.seed,
        "n_chunks": cfg.n_chunks,
        "symmetrize": cfg.symmetrize,
        "theta": cfg.theta,
        "a": cfg.a,
        "support1": list(cfg.support1()),
        "support2": list(cfg.support2()),
    }
    return PairedPanel(x1, x2, n_rejected=rej, meta=meta)


def generate_static_panel(cfg: SynthesisConfig) -> PairedPanel:
    if not cfg.is_static:
        raise ConfigurationError("static generation needs a config without quasi parameters")
    return _panel(cfg)


def generate_quasi_panel(cfg: SynthesisConfig) -> PairedPanel:
    if cfg.is_static:
        raise ConfigurationError("quasi generation needs QuasiBalanceParams")
    return _panel(cfg)


def generate_panel(cfg: SynthesisConfig) -> PairedPanel:
    return _panel(cfg)


# ---------------------------------------------------------------- Gibrat process


def lognormal_growth(sigma: float, mean_log: float = 0.0):
    """Growth sampler with ln R ~ Normal(mean_log, sigma)."""

    def sampler(rng, size):
        return np.exp(rng.normal(mean_log, sigma, size))

    sampler.log_sampler = lambda rng, size: rng.normal(mean_log, sigma, size)
    return sampler


def _log_growth(growth_sampler, rng, size):
    if hasattr(growth_sampler, "log_sampler"):
        return growth_sampler.log_sampler(rng, size)
    R = np.asarray(growth_sampler(rng, size), dtype=float)
    if np.any(R <= 0):
        raise DomainError("growth rates must be positive")
    return np.log(R)


def generate_gibrat_trajectory(growth_sampler, T: int, x_init: float, rng: np.random.Generator,
                               log: bool = False) -> np.ndarray:
    """Path x(0..T) of x(t+1) = R(t) x(t) with i.i.d. R(t), accumulated in log space."""
    return generate_gibrat_paths(growth_sampler, T, x_init, rng, 1, log=log)[0]


def generate_gibrat_paths(growth_sampler, T: int, x_init: float, rng: np.random.Generator,
                          n_paths: int, log: bool = False) -> np.ndarray:
    """``n_paths`` independent trajectories, shape ``(n_paths, T + 1)``."""
    if T < 1:
        raise DomainError("T must be >= 1")
    if not x_init > 0:
        raise DomainError("x_init must be positive")
    steps = _log_growth(growth_sampler, rng, (n_paths, T))
    logx = np.empty((n_paths, T + 1))
    logx[:, 0] = math.log(x_init)
    np.cumsum(steps, axis=1, out=logx[:, 1:])
    logx[:, 1:] += logx[:, :1]
    if log:
        return logx
    with np.errstate(over="ignore"):
        return np.exp(logx)
