"""Isotropic Gaussian kernel density estimation.

A :class:`KdeModel` uses one bandwidth ``b`` (the kernel standard deviation)
for all coordinates.  An optional per-coordinate ``scale`` standardises the
coordinates first, so the effective kernel sd along coordinate ``k`` is
``b * scale[k]``; densities are reported in the original units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .core import LOG_2PI, GooedError

_CHUNK_ELEMS = 2_000_000


class FitError(GooedError):
    pass


class BandwidthSelectionError(GooedError):
    pass


@dataclass(frozen=True)
class KdeModel:
    samples: np.ndarray  # (n, n_z)
    bandwidth: float
    scale: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def _std(self, z):
        z = np.asarray(z, dtype=float)
        return z if self.scale is None else z / self.scale

    def _log_norm(self) -> float:
        """log of the kernel normalising constant, in original units."""
        out = self.dim * (math.log(self.bandwidth) + 0.5 * LOG_2PI)
        if self.scale is not None:
            out += float(np.sum(np.log(self.scale)))
        return out

    def log_density(self, z) -> np.ndarray:
        """Log-density at query points ``z`` of shape ``(m, n_z)`` or ``(n_z,)``."""
        z = np.asarray(z, dtype=float)
        single = z.ndim == 0 or (z.ndim == 1 and z.size == self.dim)
        if single:
            q = z.reshape(1, self.dim)
        elif z.ndim == 1 and self.dim == 1:
            q = z[:, None]
        else:
            q = np.atleast_2d(z)
            if q.shape[1] != self.dim:
                raise ValueError(f"query must have {self.dim} columns")
        qs, xs = self._std(q), self._std(self.samples)
        inv = 1.0 / (2.0 * self.bandwidth**2)
        out = np.empty(qs.shape[0])
        step = max(1, _CHUNK_ELEMS // max(1, xs.shape[0] * self.dim))
        for start in range(0, qs.shape[0], step):
            block = qs[start : start + step]
            d2 = _sqdist(block, xs)
            out[start : start + step] = logsumexp(-d2 * inv, axis=1)
        out -= math.log(self.n) + self._log_norm()
        return out[0] if single else out

    def log_density_self(self, loo: bool = False) -> np.ndarray:
        """Log-density at each fitted sample.

        With ``loo=True`` each sample's own kernel is left out (requires
        ``n >= 2``).
        """
        xs = self._std(self.samples)
        n = self.n
        inv = 1.0 / (2.0 * self.bandwidth**2)
        out = np.empty(n)
        step = max(1, _CHUNK_ELEMS // max(1, n * self.dim))
        for start in range(0, n, step):
            d2 = _sqdist(xs[start : start + step], xs)
            d2 *= -inv
            if loo:
                rows = np.arange(d2.shape[0])
                d2[rows, start + rows] = -np.inf
                out[start : start + step] = logsumexp(d2, axis=1)
            else:
                # the self term is exp(0) = 1, so a plain sum cannot underflow
                np.exp(d2, out=d2)
                out[start : start + step] = np.log(d2.sum(axis=1))
        denom = n - 1 if loo else n
        if loo and n < 2:
            raise FitError("leave-one-out evaluation needs at least 2 samples")
        return out - (math.log(denom) + self._log_norm())


def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[1] == 1:
        diff = np.subtract.outer(a[:, 0], b[:, 0])
        np.multiply(diff, diff, out=diff)
        return diff
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _as_samples(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x


def fit(samples, b: float, scale=None) -> KdeModel:
    """Build a KDE with bandwidth ``b`` on ``samples`` of shape ``(n, n_z)``."""
    x = _as_samples(samples)
    if x.shape[0] == 0:
        raise FitError("cannot fit a KDE to an empty sample set")
    if not np.all(np.isfinite(x)):
        raise FitError("KDE samples must be finite")
    if not b > 0:
        raise FitError("bandwidth must be positive")
    if scale is not None:
        scale = np.asarray(scale, dtype=float).reshape(x.shape[1])
    return KdeModel(x, float(b), scale)


def log_density(m: KdeModel, z) -> np.ndarray:
    return m.log_density(z)


# ---------------------------------------------------------------------------
# Bandwidth selection
# ---------------------------------------------------------------------------


def default_grid(samples, n: int = 25, scale=None) -> np.ndarray:
    """Log-spaced candidates on ``[1e-3 R, R]``.

    ``R`` is the median over coordinates of the sample range (after
    standardisation by ``scale``).  A degenerate sample set falls back to
    ``R = max(1, median |z|)``.
    """
    x = _as_samples(samples)
    if scale is not None:
        x = x / scale
    spans = np.ptp(x, axis=0)
    r = float(np.median(spans))
    if not (r > 0 and np.isfinite(r)):
        r = max(1.0, float(np.median(np.abs(x))))
    return np.logspace(math.log10(1e-3 * r), math.log10(r), n)


def cv_scores(samples, grid, folds: int, rng: np.random.Generator, scale=None) -> np.ndarray:
    """Mean held-out log-likelihood for each candidate bandwidth."""
    x = _as_samples(samples)
    n = x.shape[0]
    if not 2 <= folds <= n:
        raise BandwidthSelectionError(f"need 2 <= folds <= n, got folds={folds}, n={n}")
    grid = np.asarray(grid, dtype=float)
    xs = x if scale is None else x / scale
    log_norm = x.shape[1] * (np.log(grid) + 0.5 * LOG_2PI)
    if scale is not None:
        log_norm = log_norm + float(np.sum(np.log(scale)))
    assign = rng.permutation(n) % folds
    total = np.zeros(grid.size)
    for k in range(folds):
        test, train = xs[assign == k], xs[assign != k]
        d2 = _sqdist(test, train)
        nearest = d2.min(axis=1, keepdims=True)
        excess = d2 - nearest
        for g, b in enumerate(grid):
            inv = 1.0 / (2.0 * b * b)
            ll = np.log(np.sum(np.exp(-excess * inv), axis=1)) - nearest[:, 0] * inv
            total[g] += np.sum(ll) - test.shape[0] * math.log(train.shape[0])
    return total / n - log_norm


def cv_select_bandwidth(samples, grid=None, folds: int = 5, rng=None, scale=None) -> float:
    """Grid bandwidth maximising the k-fold held-out log-likelihood.

    Ties go to the larger bandwidth.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if grid is None:
        grid = default_grid(samples, scale=scale)
    grid = np.asarray(grid, dtype=float)
    scores = cv_scores(samples, grid, folds, rng, scale)
    if not np.any(np.isfinite(scores)):
        raise BandwidthSelectionError("every candidate bandwidth has -inf held-out likelihood")
    scores = np.where(np.isfinite(scores), scores, -np.inf)
    best = np.flatnonzero(scores == scores.max())
    return float(grid[best[-1]])


@dataclass(frozen=True)
class Fixed:
    b: float

    def __post_init__(self):
        if not self.b > 0:
            raise ValueError("fixed bandwidth must be positive")


@dataclass(frozen=True)
class Adaptive:
    """Cross-validate on the first ``n_warm`` sample sets, then freeze the mean.

    ``grid=None`` means "use :func:`default_grid` on a reference sample set"
    (the caller decides which).
    """

    cv_folds: int = 5
    grid: Optional[Sequence[float]] = None
    n_warm: int = 10

    def __post_init__(self):
        if self.cv_folds < 2 or self.n_warm < 1:
            raise ValueError("Adaptive needs cv_folds >= 2 and n_warm >= 1")
        if self.grid is not None:
            g = np.asarray(self.grid, dtype=float)
            if g.size == 0 or np.any(g <= 0) or np.any(np.diff(g) <= 0):
                raise ValueError("grid must be nonempty, positive and increasing")


BandwidthPolicy = Fixed | Adaptive


def resolve_bandwidth(
    policy: BandwidthPolicy,
    warm_sample_sets: Sequence[np.ndarray],
    rng: np.random.Generator,
    scale=None,
    grid=None,
) -> float:
    """Fixed -> its value; Adaptive -> mean CV choice over the warm sets."""
    if isinstance(policy, Fixed):
        return policy.b
    sets = list(warm_sample_sets)[: policy.n_warm]
    if not sets:
        raise BandwidthSelectionError("adaptive bandwidth needs at least one warm sample set")
    g = policy.grid if policy.grid is not None else grid
    picks = [
        cv_select_bandwidth(s, grid=g, folds=policy.cv_folds, rng=rng, scale=scale) for s in sets
    ]
    return float(np.mean(picks))
