"""Study configuration: JSON schema, parsing and provenance hashing.

One JSON file describes one study.  Example::

    {
      "problem": {"name": "bm"},
      "estimator": {"n_out": 500, "n_in": 500,
                    "bandwidth": {"kind": "adaptive", "n_warm": 10}},
      "sweep": {"points": 21},
      "seed": 7
    }

``problem.name`` is a built-in problem or ``"sensors"`` (which also takes
``n_sensors``, ``qoi`` and ``surrogate``).  Exactly one of ``sweep`` and
``bo`` must be present.  ``sweep`` is ``{"points": n}`` (n per design axis
over the design bounds), ``{"axes": [[lo, hi, n], ...]}`` or
``{"designs": [[...], ...]}``.  The full schema is :data:`CONFIG_SCHEMA`.
"""

from __future__ import annotations

import copy
import hashlib
import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import jsonschema
import numpy as np

from .bo import BoConfig
from .core import ConfigurationError, NoiseModel, Problem
from .eig import NmcConfig
from .kde import Adaptive, Fixed
from .mcmc import StretchConfig
from .problems import PROBLEM_NAMES, builtin_problem

MAX_SWEEP_POINTS = 100_000

_POS_INT = {"type": "integer", "minimum": 1}
_NUM = {"type": "number"}
_POINT2 = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}

CONFIG_SCHEMA: dict = {
    "type": "object",
    "additionalProperties": False,
    "required": ["problem"],
    "properties": {
        "problem": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"type": "string", "enum": list(PROBLEM_NAMES) + ["sensors"]},
                "params": {"type": ["number", "null"]},
                "noise_sd": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "n_sensors": {"type": "integer", "minimum": 1, "maximum": 3},
                "qoi": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind"],
                    "properties": {
                        "kind": {"enum": ["concentration", "flux", "concentration+flux", "parameters"]},
                        "xi": {"type": "array", "items": _POINT2, "minItems": 1},
                    },
                },
                "surrogate": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"n_per_axis": {"type": "integer", "minimum": 5}},
                },
            },
        },
        "estimator": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_out": _POS_INT,
                "n_in": {"type": "integer", "minimum": 2},
                "loo": {"type": "boolean"},
                "chunk_size": _POS_INT,
                "bandwidth": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind"],
                    "properties": {
                        "kind": {"enum": ["fixed", "adaptive"]},
                        "b": {"type": "number", "exclusiveMinimum": 0},
                        "cv_folds": {"type": "integer", "minimum": 2},
                        "n_warm": _POS_INT,
                        "grid": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                    },
                },
                "mcmc": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "a": {"type": "number", "exclusiveMinimum": 1},
                        "n_walkers": {"type": ["integer", "null"], "minimum": 4},
                        "n_steps": {"type": ["integer", "null"], "minimum": 1},
                        "burn_in": {"type": ["integer", "null"], "minimum": 0},
                        "init_jitter_sd": {"type": ["number", "null"], "minimum": 0},
                    },
                },
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "points": _POS_INT,
                "axes": {
                    "type": "array",
                    "items": {"type": "array", "prefixItems": [_NUM, _NUM, _POS_INT], "minItems": 3, "maxItems": 3},
                },
                "designs": {"type": "array", "items": {"type": "array", "items": _NUM}},
            },
            "minProperties": 1,
            "maxProperties": 1,
        },
        "bo": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_init": _POS_INT,
                "max_iter": {"type": "integer", "minimum": 0},
                "kappa": {"type": "number", "exclusiveMinimum": 0},
                "restarts": _POS_INT,
                "length_scale": {"type": "number", "exclusiveMinimum": 0},
                "noise": {"type": ["number", "null"], "minimum": 0},
                "eps_improve": {"type": "number", "minimum": 0},
                "patience": _POS_INT,
                "retune": {"type": "boolean"},
            },
        },
        "validate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "grid_n_out": _POS_INT,
                "grid_nodes": {"type": ["integer", "null"], "minimum": 10},
                "min_rank_correlation": _NUM,
                "max_argmax_distance": _NUM,
                "max_abs_analytic": _NUM,
                "max_mean_abs_delta": _NUM,
                "mi_allowance": _NUM,
            },
        },
        "pde": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "theta": _POINT2,
                "field_format": {"enum": ["csv", "bin"]},
            },
        },
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
    },
}


@dataclass(frozen=True)
class StudyConfig:
    raw: dict
    seed: int
    fine_resolution: bool = False

    @property
    def effective(self) -> dict:
        """The config as hashed: file contents plus command-line overrides."""
        out = copy.deepcopy(self.raw)
        out["seed"] = self.seed
        if self.fine_resolution:
            out["fine_resolution"] = True
        return out

    @property
    def config_hash(self) -> str:
        return config_hash(self.effective)

    def section(self, name: str) -> dict:
        return self.raw.get(name) or {}


def config_hash(cfg: dict) -> str:
    """Short SHA-256 of the canonical JSON form (independent of key order)."""
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def load_config(path, seed: Optional[int] = None, fine_resolution: bool = False) -> StudyConfig:
    """Read and validate a study file.  ``seed`` overrides the file's seed."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return parse_config(raw, seed, fine_resolution)


def parse_config(raw: Any, seed: Optional[int] = None, fine_resolution: bool = False) -> StudyConfig:
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigurationError(f"invalid config at {where}: {exc.message}") from None
    if ("sweep" in raw) == ("bo" in raw):
        raise ConfigurationError("config needs exactly one of 'sweep' and 'bo'")
    if seed is None:
        seed = raw.get("seed")
    if seed is None:
        raise ConfigurationError("a seed is required (config 'seed' or --seed)")
    if not 0 <= int(seed) < 2**64:
        raise ConfigurationError("seed must be an unsigned 64-bit integer")
    prob = raw["problem"]
    if prob["name"] == "sensors":
        if "qoi" not in prob:
            raise ConfigurationError("sensor problems need a 'qoi' section")
        needs_xi = prob["qoi"]["kind"] in ("concentration", "concentration+flux")
        if needs_xi and "xi" not in prob["qoi"]:
            raise ConfigurationError(f"QoI kind {prob['qoi']['kind']!r} needs 'xi'")
    return StudyConfig(raw, int(seed), fine_resolution)


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def build_problem(cfg: StudyConfig, threads: int = 1) -> Problem:
    spec = cfg.section("problem")
    if spec["name"] != "sensors":
        return builtin_problem(spec["name"], spec.get("params"), spec.get("noise_sd"))
    from . import pde

    grid, solver = (pde.FINE_GRID, pde.FINE_SOLVER) if cfg.fine_resolution else (pde.DESK_GRID, pde.DESK_SOLVER)
    n_axis = spec.get("surrogate", {}).get("n_per_axis", 17)
    sur = pde.tabulate_surrogate(n_axis, grid, solver, threads)
    q = spec["qoi"]
    kinds = {
        "concentration": lambda: pde.Concentration(q["xi"]),
        "flux": pde.Flux,
        "concentration+flux": lambda: pde.ConcentrationPlusFlux(q["xi"]),
        "parameters": pde.Parameters,
    }
    p = pde.build_sensor_problem(spec.get("n_sensors", 1), kinds[q["kind"]](), sur)
    if spec.get("noise_sd") is not None:
        p = p.replace(noise=NoiseModel([spec["noise_sd"]]))
    return p


def build_nmc(cfg: StudyConfig) -> NmcConfig:
    est = cfg.section("estimator")
    bw = est.get("bandwidth", {"kind": "adaptive"})
    if bw["kind"] == "fixed":
        if "b" not in bw:
            raise ConfigurationError("fixed bandwidth needs 'b'")
        policy = Fixed(bw["b"])
    else:
        policy = Adaptive(
            cv_folds=bw.get("cv_folds", 5),
            grid=tuple(bw["grid"]) if bw.get("grid") else None,
            n_warm=bw.get("n_warm", 10),
        )
    m = est.get("mcmc", {})
    mcmc = StretchConfig(
        n_walkers=m.get("n_walkers"),
        a=m.get("a", 2.0),
        n_steps=m.get("n_steps"),
        burn_in=m.get("burn_in"),
        init_jitter_sd=m.get("init_jitter_sd"),
    )
    try:
        return NmcConfig(
            n_out=est.get("n_out", 1000),
            n_in=est.get("n_in", 1000),
            mcmc=mcmc,
            bandwidth=policy,
            seed=cfg.seed,
            loo=est.get("loo", False),
            chunk_size=est.get("chunk_size", 200),
        )
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc


def build_bo(cfg: StudyConfig, p: Problem) -> BoConfig:
    b = cfg.section("bo")
    try:
        return BoConfig(
            bounds=p.design_bounds,
            n_init=b.get("n_init", 3),
            max_iter=b.get("max_iter", 60),
            kappa=b.get("kappa", 2.56),
            restarts=b.get("restarts", 16),
            seed=cfg.seed,
            length_scale=b.get("length_scale", 1.0),
            noise=b.get("noise"),
            eps_improve=b.get("eps_improve", 1e-3),
            patience=b.get("patience", 10),
            retune=b.get("retune", False),
        )
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc


def sweep_designs(cfg: StudyConfig, p: Problem) -> np.ndarray:
    """Design points of the sweep, one per row, in output order."""
    s = cfg.section("sweep")
    if "designs" in s:
        d = np.asarray(s["designs"], dtype=float)
        if d.ndim != 2 or d.shape[1] != p.n_d:
            raise ConfigurationError(f"sweep designs must be a list of length-{p.n_d} points")
        return d
    if "axes" in s:
        if len(s["axes"]) != p.n_d:
            raise ConfigurationError(f"sweep axes must list {p.n_d} entries")
        axes = [np.linspace(lo, hi, int(n)) for lo, hi, n in s["axes"]]
    elif "points" in s:
        axes = [np.linspace(lo, hi, s["points"]) for lo, hi in p.design_bounds]
    else:
        raise ConfigurationError("this command needs a 'sweep' section")
    total = int(np.prod([a.size for a in axes]))
    if total > MAX_SWEEP_POINTS:
        raise ConfigurationError(f"sweep has {total} points; the limit is {MAX_SWEEP_POINTS}")
    return np.array(list(itertools.product(*axes)), dtype=float).reshape(total, p.n_d)
