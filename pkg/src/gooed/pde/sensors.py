"""Sensor-placement problems built on a tabulated solver surrogate.

The surrogate stores solver snapshots at the nodes of a regular grid over the
source location ``theta in [0, 1]^2``.  A query at ``(theta, x)`` samples
every tabulated field at ``x`` (bilinear in space) and then interpolates the
resulting table bilinearly in ``theta``.  Tables per sensor location are
cached, so repeated queries at a fixed design cost one interpolation.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from ..core import ConfigurationError, DomainError, NoiseModel, Problem, UniformBox
from .solver import (
    DESK_GRID,
    DESK_SOLVER,
    Field,
    Grid2D,
    SolverConfig,
    SourceParams,
    bilinear_weights,
    right_boundary_flux,
    sample_concentration,
    solve,
)

SENSOR_NOISE_SD = 0.05


@dataclass(frozen=True, eq=False)
class SurrogateSpec:
    theta_nodes: np.ndarray  # (m,) shared by both axes
    grid: Grid2D
    times: tuple  # (t_obs, t_pred)
    fields: np.ndarray  # (2, m, m, n, n)
    flux: np.ndarray  # (m, m) flux at t_pred

    def __post_init__(self):
        # per-instance cache of theta tables keyed on the query location
        object.__setattr__(self, "_tables", lru_cache(maxsize=4096)(self._table))

    @property
    def m(self) -> int:
        return self.theta_nodes.size

    def _table(self, level: int, x1: float, x2: float) -> np.ndarray:
        i, j, fx, fy = bilinear_weights(self.grid, np.array([x1, x2]))
        c = self.fields[level]
        return (
            (1 - fx) * (1 - fy) * c[:, :, i, j]
            + fx * (1 - fy) * c[:, :, i + 1, j]
            + (1 - fx) * fy * c[:, :, i, j + 1]
            + fx * fy * c[:, :, i + 1, j + 1]
        )

    def table(self, level: int, x) -> np.ndarray:
        """Tabulated values at location ``x`` for every theta node, shape ``(m, m)``."""
        x = np.asarray(x, dtype=float).reshape(2)
        return self._tables(int(level), float(x[0]), float(x[1]))

    def interpolate(self, table: np.ndarray, theta) -> np.ndarray:
        """Bilinear interpolation of an ``(m, m)`` theta table at ``theta`` (..., 2)."""
        theta = np.asarray(theta, dtype=float)
        if np.any(theta < -1e-12) or np.any(theta > 1 + 1e-12):
            raise DomainError("source location outside [0, 1]^2")
        nodes = self.theta_nodes
        s = (np.clip(theta, 0.0, 1.0) - nodes[0]) / (nodes[1] - nodes[0])
        k = np.minimum(np.floor(s).astype(int), self.m - 2)
        f = s - k
        a, b = k[..., 0], k[..., 1]
        fa, fb = f[..., 0], f[..., 1]
        return (
            (1 - fa) * (1 - fb) * table[a, b]
            + fa * (1 - fb) * table[a + 1, b]
            + (1 - fa) * fb * table[a, b + 1]
            + fa * fb * table[a + 1, b + 1]
        )

    def concentration(self, theta, x, level: int) -> np.ndarray:
        return self.interpolate(self.table(level, x), theta)

    def flux_at(self, theta) -> np.ndarray:
        return self.interpolate(self.flux, theta)


def tabulate_surrogate(
    n_per_axis: int = 17,
    grid: Grid2D = DESK_GRID,
    cfg: SolverConfig = DESK_SOLVER,
    threads: int = 1,
) -> SurrogateSpec:
    """Solve at every node of an ``n_per_axis`` square grid over ``[0, 1]^2``.

    The first two snapshot times of ``cfg`` are the observation and
    prediction times.
    """
    if n_per_axis < 5:
        raise ConfigurationError("the theta grid needs at least 5 nodes per axis")
    if len(cfg.snapshot_times) < 2:
        raise ConfigurationError("solver config needs observation and prediction snapshot times")
    nodes = np.linspace(0.0, 1.0, n_per_axis)
    pairs = [(a, b) for a in range(n_per_axis) for b in range(n_per_axis)]

    def job(ab):
        fs = solve(SourceParams((nodes[ab[0]], nodes[ab[1]])), grid, cfg)
        return fs[0].c, fs[1].c, right_boundary_flux(fs[1])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(job, pairs))
    else:
        results = [job(ab) for ab in pairs]
    n = grid.n
    fields = np.empty((2, n_per_axis, n_per_axis, n, n))
    flux = np.empty((n_per_axis, n_per_axis))
    for (a, b), (c1, c2, fl) in zip(pairs, results):
        fields[0, a, b], fields[1, a, b], flux[a, b] = c1, c2, fl
    return SurrogateSpec(nodes, grid, tuple(cfg.snapshot_times[:2]), fields, flux)


# ---------------------------------------------------------------------------
# QoI choices
# ---------------------------------------------------------------------------


def _check_xi(xi) -> np.ndarray:
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    if xi.shape[1] != 2 or np.any(xi < 0) or np.any(xi > 1):
        raise ConfigurationError("QoI locations must lie in [0, 1]^2")
    return xi


@dataclass(frozen=True)
class Concentration:
    """Concentrations at the prediction time at each location in ``xi``."""

    xi: Sequence

    def __post_init__(self):
        object.__setattr__(self, "xi", _check_xi(self.xi))


@dataclass(frozen=True)
class Flux:
    """Right-boundary flux at the prediction time."""


@dataclass(frozen=True)
class ConcentrationPlusFlux:
    xi: Sequence

    def __post_init__(self):
        object.__setattr__(self, "xi", _check_xi(self.xi))


@dataclass(frozen=True)
class Parameters:
    """The source location itself (the classical parameter-inference goal)."""


QoiSpec = Concentration | Flux | ConcentrationPlusFlux | Parameters


def build_sensor_problem(n_sensors: int, qoi: QoiSpec, surrogate: SurrogateSpec) -> Problem:
    """Problem with design ``d = (x_1, y_1, ..., x_k, y_k)`` for ``k`` sensors.

    Each sensor reads the observation-time concentration with noise sd 0.05.
    """
    if n_sensors not in (1, 2, 3):
        raise ConfigurationError("n_sensors must be 1, 2 or 3")
    sur = surrogate

    def observe(theta, d):
        pts = np.asarray(d, dtype=float).reshape(n_sensors, 2)
        return np.stack([sur.concentration(theta, x, 0) for x in pts], axis=-1)

    if isinstance(qoi, Concentration):
        xi = qoi.xi

        def predict(theta):
            return np.stack([sur.concentration(theta, x, 1) for x in xi], axis=-1)

        n_z, identity, label = xi.shape[0], False, "concentration"
    elif isinstance(qoi, Flux):

        def predict(theta):
            return sur.flux_at(theta)[..., None]

        n_z, identity, label = 1, False, "flux"
    elif isinstance(qoi, ConcentrationPlusFlux):
        xi = qoi.xi

        def predict(theta):
            cols = [sur.concentration(theta, x, 1) for x in xi] + [sur.flux_at(theta)]
            return np.stack(cols, axis=-1)

        n_z, identity, label = xi.shape[0] + 1, False, "concentration+flux"
    elif isinstance(qoi, Parameters):

        def predict(theta):
            return np.asarray(theta, dtype=float)

        n_z, identity, label = 2, True, "parameters"
    else:
        raise ConfigurationError(f"unknown QoI spec {qoi!r}")

    return Problem(
        name=f"sensors{n_sensors}-{label}",
        n_theta=2,
        n_y=n_sensors,
        n_z=n_z,
        n_d=2 * n_sensors,
        prior=UniformBox(np.zeros(2), np.ones(2)),
        observe=observe,
        noise=NoiseModel([SENSOR_NOISE_SD]),
        predict=predict,
        predict_is_identity=identity,
    )


def direct_concentration(theta, x, level: int, grid: Grid2D = DESK_GRID, cfg: SolverConfig = DESK_SOLVER) -> float:
    """Solver value at ``(theta, x)`` without the surrogate (for checks)."""
    f: Field = solve(SourceParams(tuple(theta)), grid, cfg)[level]
    return sample_concentration(f, x)
