"""Expected information gain estimators.

* :func:`expected_utility_nmc` - nested Monte Carlo estimate of the expected
  KL divergence from the prior-predictive to the posterior-predictive of the
  QoIs.  Outer samples reuse the prior draws stored in the
  :class:`PriorPredictiveCache`; each outer draw gets an ensemble-MCMC
  posterior sample started at the parameter that generated its data, and a
  KDE of the pushed-forward posterior samples.
* :func:`expected_utility_grid` - quadrature reference for parameter EIG on
  a tensor grid (one or two parameters).
* :func:`info_gain_realization` - information gain for a single simulated
  data set, in parameter space and in QoI space.

Random streams are derived from ``NmcConfig.seed`` by purpose, never from the
design, so every design sees the same outer draws (common random numbers).
Outer iterations are processed in fixed-size chunks; results do not depend
on the number of worker threads.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kde as kde_mod
from .core import (
    GooedError,
    ConfigurationError,
    Problem,
    as_design,
    evaluate_observation,
    predict_qoi,
    sample_prior,
    seed_stream,
    unchecked_log_likelihood,
)
from .kde import Adaptive, BandwidthPolicy, Fixed, KdeModel
from .mcmc import StretchConfig, run_chains

STREAM_NOISE, STREAM_MCMC, STREAM_CV, STREAM_RETRY, STREAM_PRIOR = 1, 2, 3, 4, 5


class EstimationError(GooedError):
    pass


class UnsupportedDimensionError(GooedError):
    pass


@dataclass(frozen=True)
class NmcConfig:
    n_out: int = 1000
    n_in: int = 1000
    mcmc: StretchConfig = field(default_factory=StretchConfig)
    bandwidth: BandwidthPolicy = field(default_factory=Adaptive)
    seed: int = 0
    loo: bool = False
    chunk_size: int = 200

    def __post_init__(self):
        if self.n_out < 1 or self.n_in < 2:
            raise ConfigurationError("need n_out >= 1 and n_in >= 2")
        if self.chunk_size < 1:
            raise ConfigurationError("chunk_size must be >= 1")


@dataclass(frozen=True)
class EigEstimate:
    u: float
    term_inner_mean: float
    term_prior_pred_mean: float
    n_out: int
    n_in: int
    d: np.ndarray
    bandwidth: float
    wall_time_s: float = 0.0
    mcmc_time_s: float = 0.0
    kde_time_s: float = 0.0
    acceptance: float = float("nan")
    inner_terms: Optional[np.ndarray] = field(default=None, repr=False)

    def record(self) -> dict:
        """Flat record for CSV/JSON output."""
        out = {f"d{k + 1}": float(v) for k, v in enumerate(np.atleast_1d(self.d))}
        out.update(
            u=self.u,
            term_inner_mean=self.term_inner_mean,
            term_prior_pred_mean=self.term_prior_pred_mean,
            n_out=self.n_out,
            n_in=self.n_in,
            bandwidth=self.bandwidth,
            acceptance=self.acceptance,
            wall_time_s=self.wall_time_s,
        )
        return out


@dataclass(frozen=True)
class PriorPredictiveCache:
    theta_samples: np.ndarray
    z_samples: np.ndarray
    kde: KdeModel
    log_pz: np.ndarray

    @property
    def n(self) -> int:
        return self.theta_samples.shape[0]

    @property
    def scale(self):
        return self.kde.scale

    def grid(self) -> np.ndarray:
        """Reference bandwidth candidates for posterior-predictive KDEs."""
        return kde_mod.default_grid(self.z_samples, scale=self.scale)


def _qoi_scale(z: np.ndarray):
    if z.shape[1] == 1:
        return None
    sd = np.std(z, axis=0)
    return np.where(sd > 0, sd, 1.0)


def prior_predictive_setup(
    p: Problem,
    n_out: int,
    policy: BandwidthPolicy,
    rng: np.random.Generator,
) -> PriorPredictiveCache:
    """Draw the outer prior samples once and fit the prior-predictive KDE.

    For vector QoIs each coordinate is standardised by its prior-predictive
    sd before the single-bandwidth kernel is applied.
    """
    if n_out < 2:
        raise ConfigurationError("prior-predictive setup needs n_out >= 2")
    theta = sample_prior(p.prior, n_out, rng)
    z = predict_qoi(p, theta, rng)
    scale = _qoi_scale(z)
    if isinstance(policy, Fixed):
        b = policy.b
    else:
        b = kde_mod.cv_select_bandwidth(z, grid=policy.grid, folds=policy.cv_folds, rng=rng, scale=scale)
    model = kde_mod.fit(z, b, scale)
    return PriorPredictiveCache(theta, z, model, model.log_density_self())


def make_log_post(p: Problem, y: np.ndarray, d: np.ndarray):
    """Batched unnormalised log-posterior for data ``y`` of shape ``(C, n_y)``."""
    y = np.asarray(y, dtype=float)[:, None, :]
    inv_sd = 1.0 / p.noise.sd
    prior = p.prior
    if prior.bounded:
        lo, hi = prior.lo, prior.hi

        # constant offsets are dropped: the sampler only uses differences
        def log_post(theta):
            inside = np.all((theta >= lo) & (theta <= hi), axis=-1)
            r = (y - p.observe(np.clip(theta, lo, hi), d)) * inv_sd
            ll = -0.5 * np.einsum("...k,...k->...", r, r)
            ll[~(inside & np.isfinite(ll))] = -np.inf
            return ll

        return log_post

    def log_post(theta):
        lp = p.log_prior(theta)
        ll = unchecked_log_likelihood(p, y, theta, d)
        return np.where(np.isfinite(lp), lp + ll, -np.inf)

    return log_post


def _posterior_chunk(p, d, y, centers, n_in, mcmc, rng):
    log_post = make_log_post(p, y, d)
    res = run_chains(mcmc, log_post, centers, n_in, rng, p.prior)
    ok = res.ok.copy()
    z = np.full(res.samples.shape[:2] + (p.n_z,), np.nan)
    if np.any(ok):
        with np.errstate(all="ignore"):
            zz = np.asarray(p.predict(res.samples[ok]), dtype=float)
        if p.prediction_noise is not None:
            zz = zz + p.prediction_noise * rng.standard_normal(zz.shape)
        z[ok] = zz
    ok &= np.all(np.isfinite(z), axis=(1, 2))
    return z, res.acceptance, ok


def posterior_predictive_samples(
    p: Problem,
    d,
    y: np.ndarray,
    centers: np.ndarray,
    cfg: NmcConfig,
    threads: int = 1,
):
    """Posterior-predictive samples for every outer data set.

    Returns ``(z, acceptance)`` with ``z`` of shape ``(n, n_in, n_z)``.
    Failed outer iterations are retried once on a fresh stream.
    """
    n = y.shape[0]
    cs = cfg.chunk_size
    starts = list(range(0, n, cs))

    def job(k):
        s = starts[k]
        sl = slice(s, s + cs)
        rng = seed_stream(cfg.seed, STREAM_MCMC, k)
        return _posterior_chunk(p, d, y[sl], centers[sl], cfg.n_in, cfg.mcmc, rng)

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(job, range(len(starts))))
    else:
        parts = [job(k) for k in range(len(starts))]
    z = np.concatenate([q[0] for q in parts])
    acc = np.concatenate([q[1] for q in parts])
    ok = np.concatenate([q[2] for q in parts])
    for i in np.flatnonzero(~ok):
        rng = seed_stream(cfg.seed, STREAM_RETRY, int(i))
        zi, ai, oki = _posterior_chunk(p, d, y[i : i + 1], centers[i : i + 1], cfg.n_in, cfg.mcmc, rng)
        if not oki[0]:
            raise EstimationError(
                f"outer iteration {i} failed twice (theta={centers[i].tolist()}, d={np.asarray(d).tolist()})"
            )
        z[i], acc[i] = zi[0], ai[0]
    return z, acc


def outer_data(p: Problem, d, cache: PriorPredictiveCache, n_out: int, seed: int):
    """Outer-loop parameters and simulated data (same noise draws for every d)."""
    if n_out > cache.n:
        raise ConfigurationError(f"cache holds {cache.n} prior samples, n_out={n_out} requested")
    theta = cache.theta_samples[:n_out]
    eps = seed_stream(seed, STREAM_NOISE).standard_normal((n_out, p.n_y))
    y = evaluate_observation(p, theta, d) + p.noise.sd * eps
    return theta, y


def resolve_posterior_bandwidth(cfg: NmcConfig, z_sets: np.ndarray, cache: PriorPredictiveCache) -> float:
    policy = cfg.bandwidth
    if isinstance(policy, Fixed):
        return policy.b
    rng = seed_stream(cfg.seed, STREAM_CV)
    return kde_mod.resolve_bandwidth(policy, list(z_sets[: policy.n_warm]), rng, scale=cache.scale, grid=cache.grid())


def inner_terms(z: np.ndarray, b: float, scale=None, loo: bool = False) -> np.ndarray:
    """Mean posterior-predictive log-density at its own samples, per outer set."""
    return np.array([np.mean(kde_mod.fit(zi, b, scale).log_density_self(loo)) for zi in z])


def expected_utility_nmc(
    p: Problem,
    d,
    cfg: NmcConfig,
    cache: PriorPredictiveCache,
    threads: int = 1,
    keep_terms: bool = False,
) -> EigEstimate:
    """Nested Monte Carlo estimate of the QoI expected information gain at ``d``."""
    t0 = time.perf_counter()
    d = as_design(p, d)
    theta, y = outer_data(p, d, cache, cfg.n_out, cfg.seed)
    z, acc = posterior_predictive_samples(p, d, y, theta, cfg, threads)
    t1 = time.perf_counter()
    b = resolve_posterior_bandwidth(cfg, z, cache)
    inner = inner_terms(z, b, cache.scale, cfg.loo)
    t2 = time.perf_counter()
    if not np.all(np.isfinite(inner)):
        raise EstimationError("non-finite posterior-predictive log-density")
    term_inner = float(np.mean(inner))
    term_prior = float(np.mean(cache.log_pz[: cfg.n_out]))
    return EigEstimate(
        u=term_inner - term_prior,
        term_inner_mean=term_inner,
        term_prior_pred_mean=term_prior,
        n_out=cfg.n_out,
        n_in=cfg.n_in,
        d=d,
        bandwidth=b,
        wall_time_s=t2 - t0,
        mcmc_time_s=t1 - t0,
        kde_time_s=t2 - t1,
        acceptance=float(np.mean(acc)),
        inner_terms=inner if keep_terms else None,
    )


def sweep_nmc(p: Problem, designs, cfg: NmcConfig, cache: PriorPredictiveCache, threads: int = 1):
    return [expected_utility_nmc(p, d, cfg, cache, threads) for d in np.atleast_2d(designs)]


# ---------------------------------------------------------------------------
# Grid reference
# ---------------------------------------------------------------------------


def parameter_grid(p: Problem, nodes: Optional[int] = None):
    """Midpoint nodes and normalised prior masses for a tensor grid."""
    if p.n_theta > 2:
        raise UnsupportedDimensionError("grid reference supports at most two parameters")
    if nodes is None:
        nodes = 2000 if p.n_theta == 1 else 200
    prior = p.prior
    if prior.bounded:
        lo, hi = prior.lo, prior.hi
    else:
        lo, hi = prior.mean - 10 * prior.sd, prior.mean + 10 * prior.sd
    axes = [lo[k] + (hi[k] - lo[k]) * (np.arange(nodes) + 0.5) / nodes for k in range(p.n_theta)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, p.n_theta)
    logw = p.log_prior(mesh)
    logw = logw - np.log(np.sum(np.exp(logw - logw.max()))) - logw.max()
    return mesh, logw


def _grid_kl(log_prior_w, loglik):
    """KL(posterior || prior) on a grid, rows of ``loglik`` are data sets.

    ``loglik`` is overwritten.
    """
    # log(post / prior) = loglik - m - log(norm)
    lp = loglik + log_prior_w
    m = lp.max(axis=1, keepdims=True)
    lp -= m
    np.exp(lp, out=lp)
    norm = lp.sum(axis=1)
    mean_ll = np.einsum("ij,ij->i", lp, loglik) / norm
    return mean_ll - m[:, 0] - np.log(norm)


def _grid_loglik(y, g_mesh, sd):
    """Gaussian log-likelihood up to a constant, shape ``(len(y), len(g_mesh))``."""
    inv = 1.0 / sd
    out = np.zeros((y.shape[0], g_mesh.shape[0]))
    for k in range(y.shape[1]):
        r = np.subtract.outer(y[:, k], g_mesh[:, k])
        r *= inv[k] if inv.size > 1 else inv[0]
        np.multiply(r, r, out=r)
        out -= 0.5 * r
    return out


def expected_utility_grid(
    p: Problem,
    d,
    grid_nodes: Optional[int] = None,
    n_out: int = 10000,
    rng: Optional[np.random.Generator] = None,
    target: str = "parameter",
    chunk: int = 256,
) -> float:
    """Parameter EIG by outer Monte Carlo and inner midpoint quadrature.

    ``target="qoi-identity"`` is the same computation, allowed only when the
    prediction model is the identity.
    """
    if target not in ("parameter", "qoi-identity"):
        raise ConfigurationError(f"unknown grid target {target!r}")
    if target == "qoi-identity" and not p.predict_is_identity:
        raise ConfigurationError("qoi-identity grid target needs an identity prediction model")
    if p.n_theta > 2:
        raise UnsupportedDimensionError("grid reference supports at most two parameters")
    if rng is None:
        rng = np.random.default_rng(0)
    d = as_design(p, d)
    mesh, logw = parameter_grid(p, grid_nodes)
    g_mesh = evaluate_observation(p, mesh, d)
    theta = sample_prior(p.prior, n_out, rng)
    y = evaluate_observation(p, theta, d) + p.noise.sd * rng.standard_normal((n_out, p.n_y))
    sd = p.noise.sd
    total = 0.0
    for s in range(0, n_out, chunk):
        total += float(np.sum(_grid_kl(logw, _grid_loglik(y[s : s + chunk], g_mesh, sd))))
    return total / n_out


# ---------------------------------------------------------------------------
# Single-realisation information gain
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InfoGain:
    ig_theta: float
    ig_z: float


def info_gain_realization(
    p: Problem,
    d,
    theta_true,
    rng: np.random.Generator,
    cfg: NmcConfig,
    cache: Optional[PriorPredictiveCache] = None,
    grid_nodes: Optional[int] = None,
    z_nodes: int = 2001,
) -> InfoGain:
    """Information gain from one data set simulated at ``theta_true``.

    The parameter gain is computed on the quadrature grid (``n_theta <= 2``);
    the QoI gain compares a KDE of posterior-predictive samples with the
    prior-predictive KDE by quadrature on a uniform z-grid (scalar QoIs).
    """
    d = as_design(p, d)
    theta_true = np.atleast_1d(np.asarray(theta_true, dtype=float))
    y = evaluate_observation(p, theta_true[None], d) + p.noise.sd * rng.standard_normal((1, p.n_y))

    ig_theta = float("nan")
    if p.n_theta <= 2:
        mesh, logw = parameter_grid(p, grid_nodes)
        ll = _grid_loglik(y, evaluate_observation(p, mesh, d), p.noise.sd)
        ig_theta = float(_grid_kl(logw, ll)[0])

    if p.n_z != 1:
        raise UnsupportedDimensionError("QoI information gain quadrature needs a scalar QoI")
    if cache is None:
        cache = prior_predictive_setup(p, cfg.n_out, Adaptive(), rng)
    z, _ = _posterior_chunk(p, d, y, theta_true[None], cfg.n_in, cfg.mcmc, rng)[:2]
    z = z[0]
    if isinstance(cfg.bandwidth, Fixed):
        b = cfg.bandwidth.b
    else:
        b = kde_mod.cv_select_bandwidth(z, grid=cache.grid(), folds=cfg.bandwidth.cv_folds, rng=rng)
    post = kde_mod.fit(z, b)
    pad = 3 * max(b, cache.kde.bandwidth)
    lo = min(cache.z_samples.min(), z.min()) - pad
    hi = max(cache.z_samples.max(), z.max()) + pad
    zg = np.linspace(lo, hi, z_nodes)
    lp_post = post.log_density(zg[:, None])
    lp_prior = cache.kde.log_density(zg[:, None])
    dens = np.exp(lp_post)
    ig_z = float(np.trapezoid(dens * (lp_post - lp_prior), zg))
    return InfoGain(ig_theta, ig_z)
