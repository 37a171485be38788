"""Domain types, model interfaces and sampling primitives.

Every model function in this package is vectorised over leading axes:
``observe(theta, d)`` takes ``theta`` of shape ``(..., n_theta)`` and a single
design ``d`` of shape ``(n_d,)`` and returns ``(..., n_y)``; ``predict(theta)``
returns ``(..., n_z)``.  Parameter, observation and QoI vectors are plain
float arrays; the helper validators below check their shapes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


class GooedError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(GooedError):
    pass


class ModelEvaluationError(GooedError):
    """A forward model returned non-finite values."""

    def __init__(self, message, theta=None, d=None):
        super().__init__(message)
        self.theta = theta
        self.d = d


class DomainError(GooedError):
    pass


# ---------------------------------------------------------------------------
# Priors and noise
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UniformBox:
    """Independent uniform prior on the box ``[lo, hi]``."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or np.any(~(lo < hi)):
            raise ConfigurationError("UniformBox requires lo < hi coordinatewise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def bounded(self) -> bool:
        return True

    @property
    def scale(self) -> np.ndarray:
        return self.hi - self.lo

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.lo + (self.hi - self.lo) * rng.random((n, self.dim))

    def contains(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return np.all((theta >= self.lo) & (theta <= self.hi), axis=-1)

    def log_pdf(self, theta) -> np.ndarray:
        inside = self.contains(theta)
        log_vol = float(np.sum(np.log(self.hi - self.lo)))
        return np.where(inside, -log_vol, -np.inf)


@dataclass(frozen=True)
class GaussianDiag:
    """Independent Gaussian prior with per-coordinate mean and sd."""

    mean: np.ndarray
    sd: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        sd = np.atleast_1d(np.asarray(self.sd, dtype=float))
        if mean.shape != sd.shape or np.any(~(sd > 0)):
            raise ConfigurationError("GaussianDiag requires sd > 0 coordinatewise")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "sd", sd)

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def bounded(self) -> bool:
        return False

    @property
    def scale(self) -> np.ndarray:
        return self.sd

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.mean + self.sd * rng.standard_normal((n, self.dim))

    def contains(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return np.all(np.isfinite(theta), axis=-1)

    def log_pdf(self, theta) -> np.ndarray:
        r = (np.asarray(theta, dtype=float) - self.mean) / self.sd
        return -0.5 * np.sum(r * r, axis=-1) - np.sum(np.log(self.sd)) - 0.5 * self.dim * LOG_2PI


PriorSpec = UniformBox | GaussianDiag


@dataclass(frozen=True)
class NoiseModel:
    """Additive diagonal Gaussian observation noise (sd per coordinate)."""

    sd: np.ndarray

    def __post_init__(self):
        sd = np.atleast_1d(np.asarray(self.sd, dtype=float))
        if np.any(~(sd > 0)):
            raise ConfigurationError("noise sd must be positive")
        object.__setattr__(self, "sd", sd)


# ---------------------------------------------------------------------------
# Problem
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Problem:
    """An experimental design problem.

    ``observe`` is the deterministic observation map G(theta, d) and
    ``predict`` the deterministic part of the prediction map.  When
    ``prediction_noise`` is set, QoIs are ``predict(theta) + eta`` with
    ``eta ~ N(0, diag(prediction_noise**2))``.
    """

    name: str
    n_theta: int
    n_y: int
    n_z: int
    n_d: int
    prior: PriorSpec
    observe: Callable[[np.ndarray, np.ndarray], np.ndarray]
    noise: NoiseModel
    predict: Callable[[np.ndarray], np.ndarray]
    design_bounds: np.ndarray = field(default=None)
    prediction_noise: Optional[np.ndarray] = None
    predict_is_identity: bool = False

    def __post_init__(self):
        if self.prior.dim != self.n_theta:
            raise ConfigurationError("prior dimension does not match n_theta")
        if self.noise.sd.size not in (1, self.n_y):
            raise ConfigurationError("noise sd must have length 1 or n_y")
        if self.design_bounds is None:
            bounds = np.tile([0.0, 1.0], (self.n_d, 1))
        else:
            bounds = np.asarray(self.design_bounds, dtype=float).reshape(self.n_d, 2)
        object.__setattr__(self, "design_bounds", bounds)
        if self.prediction_noise is not None:
            pn = np.atleast_1d(np.asarray(self.prediction_noise, dtype=float))
            if np.any(~(pn > 0)):
                raise ConfigurationError("prediction noise sd must be positive")
            object.__setattr__(self, "prediction_noise", pn)

    def replace(self, **changes) -> "Problem":
        from dataclasses import replace

        return replace(self, **changes)

    def log_prior(self, theta) -> np.ndarray:
        return self.prior.log_pdf(theta)


def as_design(p: Problem, d) -> np.ndarray:
    """Validate a design point against the problem's design bounds."""
    d = np.atleast_1d(np.asarray(d, dtype=float))
    if d.shape != (p.n_d,):
        raise ConfigurationError(f"design must have length {p.n_d}, got shape {d.shape}")
    lo, hi = p.design_bounds[:, 0], p.design_bounds[:, 1]
    if np.any(d < lo - 1e-12) or np.any(d > hi + 1e-12):
        raise DomainError(f"design {d} outside bounds {p.design_bounds.tolist()}")
    return d


def _as_theta(p: Problem, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if p.n_theta == 1 and (theta.ndim == 0 or theta.shape[-1] != 1):
        theta = theta[..., None]
    if theta.shape[-1] != p.n_theta:
        raise ConfigurationError(f"theta must have trailing dimension {p.n_theta}")
    return theta


def sample_prior(prior: PriorSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` i.i.d. prior samples, returned as an ``(n, dim)`` array."""
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    return prior.sample(n, rng)


def evaluate_observation(p: Problem, theta, d) -> np.ndarray:
    """Noise-free observation G(theta, d), checked for finiteness."""
    theta = _as_theta(p, theta)
    g = np.asarray(p.observe(theta, d), dtype=float)
    if not np.all(np.isfinite(g)):
        raise ModelEvaluationError("observation model returned non-finite values", theta, d)
    return g


def simulate_observation(p: Problem, theta, d, rng: np.random.Generator) -> np.ndarray:
    """Return ``G(theta, d) + eps`` with Gaussian noise drawn from ``rng``."""
    d = as_design(p, d)
    g = evaluate_observation(p, theta, d)
    return g + p.noise.sd * rng.standard_normal(g.shape)


def gaussian_loglik(residual, sd) -> np.ndarray:
    """Sum over the last axis of Gaussian log-densities of ``residual``."""
    r = residual / sd
    log_norm = np.broadcast_to(np.log(sd) + 0.5 * LOG_2PI, residual.shape[-1:]).sum()
    return -0.5 * np.sum(r * r, axis=-1) - log_norm


def log_likelihood(p: Problem, y, theta, d) -> np.ndarray:
    """Gaussian log-likelihood log p(y | theta, d).

    Vectorised over leading axes of ``theta`` (and ``y``, by broadcasting).
    """
    theta = _as_theta(p, theta)
    y = np.asarray(y, dtype=float)
    residual = y - np.asarray(p.observe(theta, d), dtype=float)
    if not np.all(np.isfinite(residual)):
        raise ModelEvaluationError("non-finite likelihood residual", theta, d)
    return gaussian_loglik(residual, p.noise.sd)


def unchecked_log_likelihood(p: Problem, y, theta, d) -> np.ndarray:
    """Like :func:`log_likelihood` but maps non-finite residuals to ``-inf``."""
    with np.errstate(all="ignore"):
        residual = y - np.asarray(p.observe(theta, d), dtype=float)
        ll = gaussian_loglik(residual, p.noise.sd)
    return np.where(np.isfinite(ll), ll, -np.inf)


def predict_qoi(p: Problem, theta, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Evaluate the prediction model, adding prediction noise when configured."""
    theta = _as_theta(p, theta)
    z = np.asarray(p.predict(theta), dtype=float)
    if p.prediction_noise is not None:
        if rng is None:
            raise ConfigurationError("a stochastic prediction model needs an rng")
        z = z + p.prediction_noise * rng.standard_normal(z.shape)
    if not np.all(np.isfinite(z)):
        raise ModelEvaluationError("prediction model returned non-finite values", theta)
    return z


def seed_stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for a named sub-stream of a master seed."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def check_dims(p: Problem, theta: Sequence[float] | None = None, y=None, z=None) -> None:
    if theta is not None and np.shape(theta)[-1] != p.n_theta:
        raise ConfigurationError("theta has the wrong length")
    if y is not None and np.shape(y)[-1] != p.n_y:
        raise ConfigurationError("y has the wrong length")
    if z is not None and np.shape(z)[-1] != p.n_z:
        raise ConfigurationError("z has the wrong length")
