"""Vertex-centred finite-volume solver for

    dc/dt = lap(c) - u(t) . grad(c) + S(x; theta),   x in [-1, 2]^2,

with ``u(t) = (50 t, 50 t)``, zero initial condition and no-flux walls.

Nodes sit on a uniform lattice that includes the walls; wall nodes own half
(or, at corners, quarter) control volumes.  Convection is written in
conservative form with QUICK face values and advanced by second-order
Adams-Bashforth.  Diffusion is Crank-Nicolson, solved approximately
factorised as two tridiagonal sweeps (x1 then x2).  Both operators conserve
the discrete mass exactly, so total mass grows as ``s t`` up to the part of
the Gaussian source that lies outside the domain.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import ndtr

from ..core import ConfigurationError, DomainError, GooedError

DOMAIN = (-1.0, 2.0)
CFL_LIMIT = 1.0


class SolverError(GooedError):
    pass


class CflWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Grid2D:
    """Uniform node lattice on ``[lo, hi]^2`` with spacing ``dx``.

    ``1/dx`` must be an integer so that every integer coordinate (in
    particular ``x1 = 1``) is a node.
    """

    dx: float = 0.05
    lo: float = DOMAIN[0]
    hi: float = DOMAIN[1]

    def __post_init__(self):
        if not self.dx > 0:
            raise ConfigurationError("dx must be positive")
        per_unit = 1.0 / self.dx
        cells = (self.hi - self.lo) / self.dx
        if abs(per_unit - round(per_unit)) > 1e-9 or abs(cells - round(cells)) > 1e-9:
            raise ConfigurationError(f"dx={self.dx} must divide 1 and the domain extent exactly")

    @property
    def n(self) -> int:
        return int(round((self.hi - self.lo) / self.dx)) + 1

    @property
    def x(self) -> np.ndarray:
        return self.lo + self.dx * np.arange(self.n)

    def index_of(self, coord: float) -> int:
        k = (coord - self.lo) / self.dx
        if abs(k - round(k)) > 1e-9:
            raise ConfigurationError(f"{coord} is not a grid node")
        return int(round(k))

    def weights_1d(self) -> np.ndarray:
        w = np.full(self.n, self.dx)
        w[[0, -1]] *= 0.5
        return w

    def volumes(self) -> np.ndarray:
        w = self.weights_1d()
        return np.outer(w, w)


@dataclass(frozen=True)
class SourceParams:
    theta: tuple[float, float]
    s: float = 2.0
    h: float = 0.05

    def __post_init__(self):
        th = tuple(float(v) for v in np.asarray(self.theta, dtype=float).reshape(2))
        object.__setattr__(self, "theta", th)
        if not self.h > 0:
            raise ConfigurationError("source width h must be positive")


@dataclass(frozen=True)
class SolverConfig:
    """Time stepping.  ``velocity`` holds the slopes ``a`` in ``u = a t``."""

    dt: float = 2.5e-3
    t_end: float = 0.2
    snapshot_times: tuple = (0.05, 0.2)
    velocity: tuple = (50.0, 50.0)

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        times = tuple(float(t) for t in self.snapshot_times)
        object.__setattr__(self, "snapshot_times", times)
        if list(times) != sorted(times) or not times:
            raise ConfigurationError("snapshot times must be a sorted nonempty list")
        if times[-1] > self.t_end + 1e-12:
            raise ConfigurationError("snapshot times must not exceed t_end")
        for t in times + (self.t_end,):
            k = t / self.dt
            if abs(k - round(k)) > 1e-6:
                raise ConfigurationError(f"time {t} is not a multiple of dt={self.dt}")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def speed(self, t: float) -> np.ndarray:
        return np.asarray(self.velocity, dtype=float) * t


DESK_GRID = Grid2D(0.05)
DESK_SOLVER = SolverConfig()
FINE_GRID = Grid2D(0.01)
FINE_SOLVER = SolverConfig(dt=5e-4)


@dataclass(frozen=True)
class Field:
    """Concentration on the nodes; ``c[i, j]`` is at ``(x[i], x[j])``."""

    c: np.ndarray
    t: float
    grid: Grid2D
    theta: Optional[tuple] = None

    def mass(self) -> float:
        return float(np.sum(self.c * self.grid.volumes()))

    def centroid(self) -> np.ndarray:
        w = self.c * self.grid.volumes()
        x = self.grid.x
        total = w.sum()
        return np.array([np.sum(w.sum(axis=1) * x), np.sum(w.sum(axis=0) * x)]) / total


def source_field(src: SourceParams, grid: Grid2D) -> np.ndarray:
    """Control-volume averages of the Gaussian source."""
    x = grid.x
    left = np.maximum(x - grid.dx / 2, grid.lo)
    right = np.minimum(x + grid.dx / 2, grid.hi)

    def mass_1d(center):
        return ndtr((right - center) / src.h) - ndtr((left - center) / src.h)

    m = np.outer(mass_1d(src.theta[0]), mass_1d(src.theta[1]))
    return src.s * m / grid.volumes()


def _pad(c: np.ndarray, axis: int) -> np.ndarray:
    """Append mirror ghost nodes on both ends of ``axis``."""
    c = np.moveaxis(c, axis, 0)
    return np.concatenate([c[1:2], c, c[-2:-1]], axis=0)


def convection(c: np.ndarray, u: float, axis: int, dx: float) -> np.ndarray:
    """``-d(u c)/dx`` along ``axis`` with QUICK faces and closed walls."""
    if u == 0.0:
        return np.zeros_like(c)
    p = _pad(c, axis)  # p[k] is node k - 1
    if u > 0:
        face = 0.75 * p[1:-2] + 0.375 * p[2:-1] - 0.125 * p[:-3]
    else:
        face = 0.75 * p[2:-1] + 0.375 * p[1:-2] - 0.125 * p[3:]
    flux = u * face
    net = np.zeros_like(p[1:-1])
    net[:-1] += flux
    net[1:] -= flux
    vol = np.full(net.shape[0], dx)
    vol[[0, -1]] *= 0.5
    out = -net / vol.reshape((-1,) + (1,) * (net.ndim - 1))
    return np.moveaxis(out, 0, axis)


def laplacian_1d(c: np.ndarray, axis: int, dx: float) -> np.ndarray:
    p = _pad(c, axis)
    out = (p[2:] - 2.0 * p[1:-1] + p[:-2]) / (dx * dx)
    return np.moveaxis(out, 0, axis)


def _implicit_band(n: int, alpha: float, dx: float) -> np.ndarray:
    """Banded form of ``I - alpha * L`` for the 1D mirror-ghost Laplacian."""
    r = alpha / (dx * dx)
    ab = np.zeros((3, n))
    ab[0, 1:] = -r
    ab[1, :] = 1.0 + 2.0 * r
    ab[2, :-1] = -r
    ab[0, 1] = -2.0 * r
    ab[2, n - 2] = -2.0 * r
    return ab


def _snapshot_steps(cfg: SolverConfig) -> dict:
    return {int(round(t / cfg.dt)): t for t in cfg.snapshot_times}


def solve(
    src: Optional[SourceParams],
    grid: Grid2D = DESK_GRID,
    cfg: SolverConfig = DESK_SOLVER,
    c0: Optional[np.ndarray] = None,
) -> list[Field]:
    """Integrate to ``cfg.t_end`` and return a field at each snapshot time.

    ``src=None`` (or ``s=0``) switches the source off; ``c0`` replaces the zero
    initial condition.  A CFL number above 1 raises :class:`CflWarning`.
    """
    n, dx, dt = grid.n, grid.dx, cfg.dt
    c = np.zeros((n, n)) if c0 is None else np.array(c0, dtype=float)
    if c.shape != (n, n):
        raise ConfigurationError(f"initial field must have shape {(n, n)}")
    forcing = np.zeros((n, n)) if src is None or src.s == 0 else source_field(src, grid)
    u_max = float(np.max(np.abs(cfg.speed(cfg.t_end))))
    if u_max * dt / dx > CFL_LIMIT:
        warnings.warn(f"CFL number {u_max * dt / dx:.3g} exceeds {CFL_LIMIT}", CflWarning, stacklevel=2)
    band = _implicit_band(n, 0.5 * dt, dx)
    wanted = _snapshot_steps(cfg)
    theta = None if src is None else src.theta
    out = [Field(c.copy(), 0.0, grid, theta)] if 0 in wanted else []
    prev = None
    for k in range(cfg.n_steps):
        u = cfg.speed((k + 0.5) * dt)
        # unit-speed convection of the current level, one entry per axis
        cur = (convection(c, math.copysign(1.0, u[0]), 0, dx), convection(c, math.copysign(1.0, u[1]), 1, dx))
        if prev is None:
            conv = u[0] * cur[0] + u[1] * cur[1]
        else:
            conv = u[0] * (1.5 * cur[0] - 0.5 * prev[0]) + u[1] * (1.5 * cur[1] - 0.5 * prev[1])
        prev = cur
        lap = laplacian_1d(c, 0, dx) + laplacian_1d(c, 1, dx)
        rhs = dt * (conv + forcing + lap)
        w = solve_banded((1, 1), band, rhs)
        delta = solve_banded((1, 1), band, w.T).T
        c = c + delta
        if not np.all(np.isfinite(c)):
            raise SolverError(f"non-finite concentration at step {k + 1}")
        if k + 1 in wanted:
            out.append(Field(c.copy(), (k + 1) * dt, grid, theta))
    return out


# ---------------------------------------------------------------------------
# Field queries
# ---------------------------------------------------------------------------


def bilinear_weights(grid: Grid2D, x) -> tuple:
    """Lower-left node indices and fractional offsets for points ``x`` (..., 2)."""
    x = np.asarray(x, dtype=float)
    tol = 1e-12
    if np.any(x < grid.lo - tol) or np.any(x > grid.hi + tol):
        raise DomainError(f"location outside [{grid.lo}, {grid.hi}]^2")
    s = (np.clip(x, grid.lo, grid.hi) - grid.lo) / grid.dx
    i = np.minimum(np.floor(s).astype(int), grid.n - 2)
    return i[..., 0], i[..., 1], s[..., 0] - i[..., 0], s[..., 1] - i[..., 1]


def sample_concentration(f: Field, x):
    """Bilinear interpolation of the field at ``x`` (shape ``(2,)`` or ``(..., 2)``)."""
    i, j, fx, fy = bilinear_weights(f.grid, x)
    c = f.c
    v = (
        (1 - fx) * (1 - fy) * c[i, j]
        + fx * (1 - fy) * c[i + 1, j]
        + (1 - fx) * fy * c[i, j + 1]
        + fx * fy * c[i + 1, j + 1]
    )
    return float(v) if np.ndim(v) == 0 else v


def right_boundary_flux(f: Field, grid: Optional[Grid2D] = None) -> float:
    """``-int_{-1}^{1} dc/dx1 (1, x2) dx2`` by central differences and the trapezoid rule."""
    grid = f.grid if grid is None else grid
    i = grid.index_of(1.0)
    j0, j1 = grid.index_of(-1.0), grid.index_of(1.0)
    grad = (f.c[i + 1, j0 : j1 + 1] - f.c[i - 1, j0 : j1 + 1]) / (2 * grid.dx)
    return -float(np.trapezoid(grad, dx=grid.dx))


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def field_header(f: Field, extra: Optional[dict] = None) -> dict:
    h = {
        "dx": f.grid.dx,
        "domain": [f.grid.lo, f.grid.hi],
        "n": f.grid.n,
        "t": f.t,
        "theta": None if f.theta is None else list(f.theta),
    }
    if extra:
        h.update(extra)
    return h


def export_field(f: Field, path, extra: Optional[dict] = None) -> Path:
    """Write a field as CSV (``.csv``) or flat little-endian float64 (other suffixes).

    Both formats start with one JSON header line.  CSV rows are
    ``x1,x2,c`` with ``x2`` varying fastest; the binary payload is the
    ``(n, n)`` array in C order.
    """
    path = Path(path)
    header = json.dumps(field_header(f, extra), sort_keys=True)
    if path.suffix == ".csv":
        x = f.grid.x
        x1, x2 = np.meshgrid(x, x, indexing="ij")
        rows = np.column_stack([x1.ravel(), x2.ravel(), f.c.ravel()])
        with open(path, "w") as fh:
            fh.write(f"# {header}\n")
            fh.write("x1,x2,c\n")
            np.savetxt(fh, rows, delimiter=",", fmt="%.17g")
    else:
        with open(path, "wb") as fh:
            fh.write(header.encode() + b"\n")
            fh.write(np.ascontiguousarray(f.c, dtype="<f8").tobytes())
    return path


def read_field(path) -> Field:
    path = Path(path)
    if path.suffix == ".csv":
        with open(path) as fh:
            header = json.loads(fh.readline()[2:])
            data = np.loadtxt(fh, delimiter=",", skiprows=1)
        c = data[:, 2].reshape(header["n"], header["n"])
    else:
        with open(path, "rb") as fh:
            header = json.loads(fh.readline())
            c = np.frombuffer(fh.read(), dtype="<f8").reshape(header["n"], header["n"]).copy()
    grid = Grid2D(header["dx"], *header["domain"])
    theta = None if header["theta"] is None else tuple(header["theta"])
    return Field(c, header["t"], grid, theta)
