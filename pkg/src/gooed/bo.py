"""Bayesian optimisation of a noisy scalar objective over a box.

A zero-mean Gaussian process with a Matérn-5/2 kernel is fitted to centred
utility values; the next design maximises the upper confidence bound
``mean + kappa * sd``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import cho_solve, cholesky
from scipy.optimize import minimize, minimize_scalar

from .core import GooedError

SQRT5 = math.sqrt(5.0)
LAMBDA_FLOOR = 1e-10
RETUNE_EVERY = 10


class GpFitError(GooedError):
    pass


def matern52(r, l: float = 1.0):
    """Matérn kernel with smoothness 5/2 as a function of distance ``r``."""
    if not l > 0:
        raise ValueError("length scale must be positive")
    s = SQRT5 * np.asarray(r, dtype=float) / l
    return (1.0 + s + s * s / 3.0) * np.exp(-s)


def _dist(a, b):
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


@dataclass(frozen=True)
class GpModel:
    X: np.ndarray
    U: np.ndarray  # centred values
    offset: float
    length_scale: float
    noise: float
    chol: np.ndarray
    alpha: np.ndarray

    @property
    def k(self) -> int:
        return self.X.shape[0]


def gp_fit(X, U, l: float = 1.0, lam: Optional[float] = None) -> GpModel:
    """Fit the GP to designs ``X`` (k, n_d) and utilities ``U`` (k,).

    ``lam=None`` uses ``1e-4 * Var(U)``.  Every noise level is floored at
    ``1e-10``; on Cholesky failure it escalates ``lam <- max(lam, 1e-8) * 10``
    up to three times.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    U = np.asarray(U, dtype=float).reshape(-1)
    if X.shape[0] < 1 or X.shape[0] != U.size:
        raise GpFitError("need k >= 1 designs with one utility each")
    if not np.all(np.isfinite(U)):
        raise GpFitError("utilities must be finite")
    offset = float(np.mean(U))
    Uc = U - offset
    if lam is None:
        lam = 1e-4 * float(np.var(U)) if U.size > 1 else 0.0
    lam = max(float(lam), LAMBDA_FLOOR)
    K = matern52(_dist(X, X), l)
    for attempt in range(4):
        try:
            L = cholesky(K + lam * np.eye(len(U)), lower=True)
            break
        except np.linalg.LinAlgError:
            if attempt == 3:
                raise GpFitError(f"Cholesky failed with noise up to {lam:g}") from None
            lam = max(lam, 1e-8) * 10.0
    alpha = cho_solve((L, True), Uc)
    return GpModel(X, Uc, offset, float(l), lam, L, alpha)


def gp_posterior(m: GpModel, d):
    """Posterior mean and sd at one design (or at rows of a 2D array)."""
    q = np.asarray(d, dtype=float)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    ks = matern52(_dist(q, m.X), m.length_scale)
    mean = ks @ m.alpha + m.offset
    v = cho_solve((m.chol, True), ks.T)
    var = np.maximum(1.0 - np.sum(ks.T * v, axis=0), 0.0)
    sd = np.sqrt(var)
    if single:
        return float(mean[0]), float(sd[0])
    return mean, sd


def log_marginal_likelihood(m: GpModel) -> float:
    """log p(U | X, l, lam) of the centred utilities."""
    k = m.k
    return float(
        -0.5 * m.U @ m.alpha - np.sum(np.log(np.diag(m.chol))) - 0.5 * k * math.log(2 * math.pi)
    )


def tune_length_scale(X, U, lam: Optional[float] = None, bounds=(0.05, 10.0)) -> float:
    """Length scale maximising the marginal likelihood (searched in log space)."""
    lo, hi = math.log(bounds[0]), math.log(bounds[1])

    def neg(log_l):
        try:
            return -log_marginal_likelihood(gp_fit(X, U, math.exp(log_l), lam))
        except GpFitError:
            return np.inf

    res = minimize_scalar(neg, bounds=(lo, hi), method="bounded")
    return float(math.exp(res.x))


def ucb(m: GpModel, d, kappa: float = 2.56):
    mean, sd = gp_posterior(m, d)
    return mean + kappa * sd


def maximize_acquisition(
    m: GpModel,
    bounds,
    restarts: int,
    rng: np.random.Generator,
    kappa: float = 2.56,
) -> tuple[np.ndarray, float]:
    """Multistart L-BFGS-B ascent of the UCB inside ``bounds``.

    Starts are ``restarts`` uniform points plus the best training design.
    Returns the best point found and its acquisition value.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
    lo, hi = bounds[:, 0], bounds[:, 1]
    starts = lo + (hi - lo) * rng.random((restarts, lo.size))
    best_train = m.X[int(np.argmax(m.U))]
    starts = np.vstack([starts, best_train])

    def neg(x):
        return -float(ucb(m, np.clip(x, lo, hi), kappa))

    best_x, best_v = None, -np.inf
    for x0 in starts:
        v0 = -neg(x0)
        res = minimize(neg, x0, method="L-BFGS-B", bounds=bounds)
        x = np.clip(res.x, lo, hi)
        v = -neg(x)
        if v0 > v:
            x, v = np.clip(x0, lo, hi), v0
        if v > best_v:
            best_x, best_v = x, v
    return best_x, float(best_v)


@dataclass(frozen=True)
class BoConfig:
    bounds: np.ndarray
    n_init: int = 3
    max_iter: int = 60
    kappa: float = 2.56
    restarts: int = 16
    seed: int = 0
    length_scale: float = 1.0
    noise: Optional[float] = None
    eps_improve: float = 1e-3
    patience: int = 10
    retune: bool = False  # refit the length scale every RETUNE_EVERY acquisitions

    def __post_init__(self):
        b = np.asarray(self.bounds, dtype=float).reshape(-1, 2)
        if np.any(~(b[:, 0] < b[:, 1])):
            raise ValueError("bounds need lo < hi")
        object.__setattr__(self, "bounds", b)
        if self.n_init < 1:
            raise ValueError("n_init must be >= 1")
        if not self.kappa > 0:
            raise ValueError("kappa must be > 0")
        if self.max_iter < 0 or self.patience < 1 or self.restarts < 1:
            raise ValueError("max_iter >= 0, patience >= 1 and restarts >= 1 required")


@dataclass
class BoResult:
    d_star: np.ndarray
    u_star: float
    history: list = field(default_factory=list)
    stopped: str = ""
    length_scale: float = 1.0


def bo_optimize(
    objective: Callable[[np.ndarray], float],
    cfg: BoConfig,
    on_record: Optional[Callable[[dict], None]] = None,
) -> BoResult:
    """Maximise ``objective`` with GP-UCB.

    ``n_init`` uniform designs are evaluated first; each further iteration
    refits the GP, maximises the acquisition and evaluates the result.  The
    loop stops after ``max_iter`` acquisitions or when the incumbent has not
    improved by more than ``eps_improve`` for ``patience`` acquisitions.
    Objective failures (exceptions or non-finite values) are recorded with
    ``u = nan`` and left out of the GP.  ``on_record`` receives each history
    record as soon as it exists.
    """
    rng = np.random.default_rng(cfg.seed)
    lo, hi = cfg.bounds[:, 0], cfg.bounds[:, 1]
    X, U, history = [], [], []
    incumbent, d_best = -np.inf, None

    def evaluate(it, d, acq):
        nonlocal incumbent, d_best
        try:
            u = float(objective(d))
        except GooedError:
            u = float("nan")
        if math.isfinite(u):
            X.append(d)
            U.append(u)
            if u > incumbent:
                incumbent, d_best = u, d
        rec = {"iter": it, "d": d.tolist(), "u": u, "incumbent_u": incumbent, "acquisition_value": acq}
        history.append(rec)
        if on_record is not None:
            on_record(rec)

    for i in range(cfg.n_init):
        evaluate(i, lo + (hi - lo) * rng.random(lo.size), float("nan"))
    stopped, stale = "max_iter", 0
    length = cfg.length_scale
    for j, it in enumerate(range(cfg.n_init, cfg.n_init + cfg.max_iter)):
        if cfg.retune and j > 0 and j % RETUNE_EVERY == 0 and len(X) > 2:
            length = tune_length_scale(np.array(X), np.array(U), cfg.noise)
        if X:
            m = gp_fit(np.array(X), np.array(U), length, cfg.noise)
            d, acq = maximize_acquisition(m, cfg.bounds, cfg.restarts, rng, cfg.kappa)
        else:
            d, acq = lo + (hi - lo) * rng.random(lo.size), float("nan")
        before = incumbent
        evaluate(it, d, acq)
        stale = 0 if incumbent > before + cfg.eps_improve else stale + 1
        if stale >= cfg.patience:
            stopped = "no_improvement"
            break
    if d_best is None:
        raise GooedError("every objective evaluation failed")
    return BoResult(np.asarray(d_best), float(incumbent), history, stopped, length)
