"""Registry of the built-in benchmark problems.

All benchmark priors are uniform on the unit box and the default observation
noise is N(0, 1e-4), i.e. sd 0.01.  Two extra problems exist only as
validation oracles: ``linear_gaussian`` (closed-form EIG) and ``null``
(observation independent of the parameters).
"""

from __future__ import annotations

import numpy as np

from .core import ConfigurationError, GaussianDiag, NoiseModel, Problem, UniformBox

DEFAULT_NOISE_SD = 1e-2


def _unit_prior(n):
    return UniformBox(np.zeros(n), np.ones(n))


# observation models --------------------------------------------------------


def obs_1d(theta, d):
    """theta^3 d^2 + theta exp(-|0.2 - d|) for scalar theta and d."""
    t = theta[..., 0:1]
    d = float(np.asarray(d).reshape(-1)[0])
    return t**3 * d**2 + t * np.exp(-abs(0.2 - d))


def obs_2theta_1d(theta, d):
    """Two parameters, scalar design and observation."""
    d = float(np.asarray(d).reshape(-1)[0])
    return theta[..., 0:1] ** 3 * d**2 + theta[..., 1:2] * np.exp(-abs(0.2 - d))


def obs_2theta_2d(theta, d):
    """Two parameters, two design coordinates, two observations."""
    d1, d2 = np.asarray(d, dtype=float).reshape(2)
    t1, t2 = theta[..., 0], theta[..., 1]
    e = np.exp(-abs(0.2 - d2))
    return np.stack([t1**3 * d1**2 + t2 * e, t2**3 * d1**2 + t1 * e], axis=-1)


def obs_ndim(theta, d):
    """y_i = theta_i^3 d_i^2 + sum_{j != i} theta_j exp(-|0.2 - d_j|)."""
    d = np.asarray(d, dtype=float)
    w = theta * np.exp(-np.abs(0.2 - d))
    return theta**3 * d**2 + (np.sum(w, axis=-1, keepdims=True) - w)


# prediction models ---------------------------------------------------------


def pred_identity(theta):
    return theta


def pred_t1(theta):
    t = theta[..., 0:1]
    return np.sin(t) + t * np.exp(t + np.abs(0.5 - t))


def pred_t2(theta):
    """Piecewise-linear QoI; the closed interval [0.15, 0.7] maps to 5."""
    t = theta[..., 0:1]
    return np.where(t < 0.15, -100.0 * t + 25.0, np.where(t <= 0.7, 5.0, 50.0 * t + 25.0))


T3_MU, T3_SIGMA = 0.3, 0.2


def pred_t3(theta):
    t = theta[..., 0:1]
    return np.exp(-((t - T3_MU) ** 2) / (2 * T3_SIGMA**2)) / (np.sqrt(2 * np.pi) * T3_SIGMA)


def pred_easom(theta):
    # Exponent kept exactly as published: -(t1 - 0.4)^2 + (t2 - 0.6)^2.
    t1, t2 = theta[..., 0], theta[..., 1]
    return (np.cos(t1) * np.cos(t2) * np.exp(-((t1 - 0.4) ** 2) + (t2 - 0.6) ** 2))[..., None]


def pred_rosenbrock(theta):
    t1, t2 = theta[..., 0], theta[..., 1]
    return ((1 - t1) ** 2 + 5 * (t2 - t1**2) ** 2)[..., None]


def pred_rosenbrock_sum(theta):
    """sum_i [(1 - theta_i)^2 + sum_{j != i} 5 (theta_j - theta_i^2)^2]."""
    diff = theta[..., None, :] - (theta**2)[..., :, None]  # [i, j] = theta_j - theta_i^2
    n = theta.shape[-1]
    off = ~np.eye(n, dtype=bool)
    cross = 5.0 * np.sum(np.where(off, diff**2, 0.0), axis=(-2, -1))
    return (np.sum((1 - theta) ** 2, axis=-1) + cross)[..., None]


# registry --------------------------------------------------------------------


def _oned(name, predict, identity=False):
    return Problem(
        name=name, n_theta=1, n_y=1, n_z=1, n_d=1,
        prior=_unit_prior(1), observe=obs_1d, noise=NoiseModel([DEFAULT_NOISE_SD]),
        predict=predict, predict_is_identity=identity,
    )


def _twod(name, observe, predict, n_d):
    return Problem(
        name=name, n_theta=2, n_y=n_d, n_z=1, n_d=n_d,
        prior=_unit_prior(2), observe=observe, noise=NoiseModel([DEFAULT_NOISE_SD]),
        predict=predict,
    )


def _linear_gaussian(noise_sd=0.1):
    return Problem(
        name="linear_gaussian", n_theta=1, n_y=1, n_z=1, n_d=1,
        prior=GaussianDiag([0.0], [1.0]),
        observe=lambda theta, d: np.asarray(d, dtype=float).reshape(-1)[0] * theta,
        noise=NoiseModel([noise_sd]), predict=pred_identity,
        design_bounds=[[0.0, 2.0]], predict_is_identity=True,
    )


def _null():
    return Problem(
        name="null", n_theta=1, n_y=1, n_z=1, n_d=1,
        prior=_unit_prior(1),
        observe=lambda theta, d: np.zeros_like(theta) + np.asarray(d, dtype=float).reshape(-1)[0],
        noise=NoiseModel([DEFAULT_NOISE_SD]), predict=pred_identity,
        predict_is_identity=True,
    )


def _ndim(n):
    n = int(n)
    if n < 1:
        raise ConfigurationError("ndim problem needs N >= 1")
    return Problem(
        name=f"ndim{n}", n_theta=n, n_y=n, n_z=1, n_d=n,
        prior=_unit_prior(n), observe=obs_ndim, noise=NoiseModel([DEFAULT_NOISE_SD]),
        predict=pred_rosenbrock_sum,
    )


_REGISTRY = {
    "bm": lambda: _oned("bm", pred_identity, identity=True),
    "t1": lambda: _oned("t1", pred_t1),
    "t2": lambda: _oned("t2", pred_t2),
    "t3": lambda: _oned("t3", pred_t3),
    "easom1d": lambda: _twod("easom1d", obs_2theta_1d, pred_easom, 1),
    "rosenbrock1d": lambda: _twod("rosenbrock1d", obs_2theta_1d, pred_rosenbrock, 1),
    "easom2d": lambda: _twod("easom2d", obs_2theta_2d, pred_easom, 2),
    "rosenbrock2d": lambda: _twod("rosenbrock2d", obs_2theta_2d, pred_rosenbrock, 2),
    "linear_gaussian": _linear_gaussian,
    "null": _null,
}

PROBLEM_NAMES = tuple(_REGISTRY) + ("ndim",)


def builtin_problem(name: str, params=None, noise_sd: float | None = None) -> Problem:
    """Build a named benchmark problem.

    ``params`` is the dimension ``N`` for ``ndim`` (default 1) and the noise sd
    for ``linear_gaussian``; it is ignored otherwise.  ``noise_sd`` overrides
    the observation noise level.
    """
    key = str(name).lower()
    if key == "ndim":
        p = _ndim(1 if params is None else params)
    elif key == "linear_gaussian" and params is not None:
        p = _linear_gaussian(float(params))
    elif key in _REGISTRY:
        p = _REGISTRY[key]()
    else:
        raise ConfigurationError(f"unknown problem {name!r}; choose from {PROBLEM_NAMES}")
    if noise_sd is not None:
        p = p.replace(noise=NoiseModel(np.full(p.noise.sd.shape, float(noise_sd))))
    return p


def analytic_eig(p: Problem, d) -> float | None:
    """Closed-form EIG for the oracle problems, ``None`` for everything else."""
    d = float(np.asarray(d, dtype=float).reshape(-1)[0])
    if p.name == "linear_gaussian":
        ratio = (d * float(p.prior.sd[0]) / float(p.noise.sd[0])) ** 2
        return 0.5 * float(np.log1p(ratio))
    if p.name == "null":
        return 0.0
    return None
