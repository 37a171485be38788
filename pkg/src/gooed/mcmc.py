"""Affine-invariant ensemble sampler (stretch move) for posterior sampling.

The sampler is written for batches of independent ensembles: positions have
shape ``(n_chains, n_walkers, n_theta)`` and the batched log-posterior maps
``(n_chains, k, n_theta) -> (n_chains, k)``.  A single ensemble is the
``n_chains == 1`` case.  Each update sweep moves the first half of the
walkers using partners from the second half and then the reverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import GooedError, PriorSpec


class InitializationError(GooedError):
    pass


class DiagnosticError(GooedError):
    pass


def default_n_walkers(n_theta: int) -> int:
    n = max(2 * n_theta, 10)
    return n + (n % 2)


@dataclass(frozen=True)
class StretchConfig:
    """Sampler settings.

    ``n_steps`` is the number of post-burn-in iterations.  When omitted, one
    ensemble snapshot is kept every ``n_walkers`` iterations, so ``n_samples``
    pooled draws cost ``n_samples`` iterations.  ``burn_in`` defaults to 5%
    of the post-burn-in iterations (50 for 1000).  ``init_jitter_sd`` defaults
    to ``1e-4`` times the prior scale of each coordinate.
    """

    n_walkers: Optional[int] = None
    a: float = 2.0
    n_steps: Optional[int] = None
    burn_in: Optional[int] = None
    init_jitter_sd: Optional[float] = None

    def __post_init__(self):
        if not self.a > 1:
            raise ValueError("stretch scale a must be > 1")
        if self.n_walkers is not None and (self.n_walkers % 2 or self.n_walkers < 4):
            raise ValueError("n_walkers must be even and >= 4")
        if self.burn_in is not None and self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if self.init_jitter_sd is not None and self.init_jitter_sd < 0:
            raise ValueError("init_jitter_sd must be >= 0")

    def walkers(self, n_theta: int) -> int:
        n = default_n_walkers(n_theta) if self.n_walkers is None else self.n_walkers
        if n < max(4, 2 * n_theta):
            raise ValueError(f"n_walkers must be >= max(4, 2*n_theta) = {max(4, 2 * n_theta)}")
        return n

    def schedule(self, n_theta: int, n_samples: int) -> tuple[int, int, int, int]:
        """Return ``(n_walkers, n_snapshots, thin, burn_in)``."""
        w = self.walkers(n_theta)
        n_snap = math.ceil(n_samples / w)
        if self.n_steps is None:
            thin = w
        else:
            thin = max(1, self.n_steps // n_snap)
        burn = self.burn_in
        if burn is None:
            burn = math.ceil(0.05 * n_snap * thin)
        return w, n_snap, thin, burn


@dataclass
class Ensemble:
    """Walker positions with their cached log-posteriors."""

    positions: np.ndarray
    log_posts: np.ndarray
    n_accepted: np.ndarray = field(default=None)
    n_proposed: int = 0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.log_posts = np.asarray(self.log_posts, dtype=float)
        if self.n_accepted is None:
            self.n_accepted = np.zeros(self.positions.shape[0], dtype=np.int64)

    @property
    def n_walkers(self) -> int:
        return self.positions.shape[0]


def gamma_from_uniform(a, u):
    """Inverse CDF of p(gamma) ~ gamma^{-1/2} on [1/a, a]."""
    return ((a - 1.0) * u + 1.0) ** 2 / a


def sample_gamma(a: float, rng: np.random.Generator, size=None):
    if not a > 1:
        raise ValueError("a must be > 1")
    return gamma_from_uniform(a, rng.random(size))


def gamma_cdf(g, a: float):
    """Analytic CDF of the stretch-factor distribution."""
    g = np.clip(g, 1.0 / a, a)
    return (np.sqrt(g) - np.sqrt(1.0 / a)) / (np.sqrt(a) - np.sqrt(1.0 / a))


def _sweep(pos, lp, log_post, a, rng, accepted, check=False):
    """One full update of every walker, in place."""
    n_chains, n_w, dim = pos.shape
    h = n_w // 2
    rows = np.arange(n_chains)[:, None]
    halves = ((slice(0, h), h), (slice(h, n_w), 0))
    for active, offset in halves:
        u = rng.random((n_chains, h))
        idx = rng.integers(0, h, size=(n_chains, h))
        u_acc = rng.random((n_chains, h))
        gamma = gamma_from_uniform(a, u)
        partners = pos[rows, idx + offset]
        current = pos[:, active]
        proposal = partners + gamma[..., None] * (current - partners)
        lp_prop = np.asarray(log_post(proposal), dtype=float)
        with np.errstate(invalid="ignore"):
            log_alpha = (dim - 1) * np.log(gamma) + lp_prop - lp[:, active]
            accept = np.isfinite(lp_prop) & (np.log(u_acc) < log_alpha)
        current[accept] = proposal[accept]
        pos[:, active] = current
        lp_act = lp[:, active]
        lp_act[accept] = lp_prop[accept]
        lp[:, active] = lp_act
        accepted[:, active] += accept
    if check:
        fresh = np.asarray(log_post(pos), dtype=float)
        if not np.array_equal(fresh, lp):
            raise AssertionError("cached log-posteriors drifted from recomputation")


def stretch_step(
    e: Ensemble,
    log_post: Callable[[np.ndarray], np.ndarray],
    a: float,
    rng: np.random.Generator,
    check: bool = False,
) -> Ensemble:
    """Return a new ensemble after one stretch-move update of every walker.

    ``log_post`` maps ``(k, n_theta)`` positions to ``(k,)`` unnormalised
    log-posterior values.  Proposals with non-finite log-posterior are
    rejected.
    """
    if e.n_walkers % 2 or e.n_walkers < 4:
        raise ValueError("ensemble needs an even number (>= 4) of walkers")
    pos = e.positions[None].copy()
    lp = e.log_posts[None].copy()
    acc = np.zeros((1, e.n_walkers), dtype=np.int64)
    _sweep(pos, lp, lambda x: log_post(x[0])[None], a, rng, acc, check=check)
    return Ensemble(pos[0], lp[0], e.n_accepted + acc[0], e.n_proposed + 1)


def acceptance_rate(e: Ensemble) -> float:
    """Fraction of accepted proposals across all walkers and steps."""
    if e.n_proposed == 0:
        raise DiagnosticError("no steps taken yet")
    return float(np.sum(e.n_accepted)) / (e.n_proposed * e.n_walkers)


def initial_ensemble(centers, n_walkers, jitter, rng, prior: Optional[PriorSpec] = None):
    """Walkers at ``centers`` plus Gaussian jitter, reflected into the prior box."""
    centers = np.asarray(centers, dtype=float)
    n_chains, dim = centers.shape
    pos = centers[:, None, :] + jitter * rng.standard_normal((n_chains, n_walkers, dim))
    if prior is not None and prior.bounded:
        lo, hi = prior.lo, prior.hi
        pos = lo + np.abs(pos - lo)
        pos = hi - np.abs(hi - pos)
        pos = np.clip(pos, lo, hi)
    return pos


@dataclass
class ChainResult:
    samples: np.ndarray  # (n_chains, n_samples, n_theta)
    acceptance: np.ndarray  # (n_chains,)
    ok: np.ndarray  # (n_chains,) initial log-posterior finite


def run_chains(
    cfg: StretchConfig,
    log_post: Callable[[np.ndarray], np.ndarray],
    centers,
    n_samples: int,
    rng: np.random.Generator,
    prior: Optional[PriorSpec] = None,
    check: bool = False,
) -> ChainResult:
    """Run independent ensembles, one per row of ``centers``, in lock-step.

    Chains whose centre has a non-finite log-posterior are flagged in
    ``ok`` and their samples are NaN; the caller decides what to do.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    n_chains, dim = centers.shape
    n_w, n_snap, thin, burn = cfg.schedule(dim, n_samples)
    if cfg.init_jitter_sd is not None:
        jitter = cfg.init_jitter_sd
    elif prior is not None:
        jitter = 1e-4 * prior.scale
    else:
        jitter = 1e-4
    lp_center = np.asarray(log_post(centers[:, None, :]), dtype=float)[:, 0]
    ok = np.isfinite(lp_center)
    pos = initial_ensemble(centers, n_w, jitter, rng, prior)
    lp = np.asarray(log_post(pos), dtype=float)
    # a jittered walker that lands on -inf restarts from the centre itself
    bad = ~np.isfinite(lp)
    if np.any(bad):
        pos[bad] = np.broadcast_to(centers[:, None, :], pos.shape)[bad]
        lp[bad] = np.broadcast_to(lp_center[:, None], lp.shape)[bad]
    # failed chains are parked on a dummy state so the sweep stays well defined
    if not np.all(ok):
        lp[~ok] = 0.0
    accepted = np.zeros((n_chains, n_w), dtype=np.int64)
    for _ in range(burn):
        _sweep(pos, lp, log_post, cfg.a, rng, accepted, check=check)
    accepted[:] = 0
    snaps = np.empty((n_chains, n_snap, n_w, dim))
    for s in range(n_snap):
        for _ in range(thin):
            _sweep(pos, lp, log_post, cfg.a, rng, accepted, check=check)
        snaps[:, s] = pos
    pooled = snaps.reshape(n_chains, n_snap * n_w, dim)[:, -n_samples:]
    pooled[~ok] = np.nan
    rate = accepted.sum(axis=1) / float(n_w * n_snap * thin)
    return ChainResult(pooled, rate, ok)


def run_chain(
    cfg: StretchConfig,
    log_post: Callable[[np.ndarray], np.ndarray],
    init_center,
    n_samples: int,
    rng: np.random.Generator,
    prior: Optional[PriorSpec] = None,
) -> np.ndarray:
    """Sample a posterior with walkers started around ``init_center``.

    ``log_post`` maps ``(k, n_theta) -> (k,)``.  Returns the last
    ``n_samples`` pooled walker positions as an ``(n_samples, n_theta)``
    array.
    """
    center = np.atleast_1d(np.asarray(init_center, dtype=float))
    if prior is not None and not bool(prior.contains(center)):
        raise InitializationError(f"initial centre {center} is outside the prior support")
    if not np.isfinite(float(np.asarray(log_post(center[None]))[0])):
        raise InitializationError(f"initial centre {center} has non-finite log-posterior")
    res = run_chains(
        cfg, lambda x: np.asarray(log_post(x[0]))[None], center[None], n_samples, rng, prior
    )
    return res.samples[0]
