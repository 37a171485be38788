"""Command-line front end.

    gooed sweep|optimize|validate|pde-demo --config FILE --out DIR
          [--seed N] [--threads N] [--paper-resolution] [--emit-plot-script]

Exit codes: 0 success, 2 validation failure, 3 configuration error,
4 runtime error.  Every CSV row carries the config hash, seed and toolkit
version; wall-clock timings go to a separate ``timings.csv`` so that result
files are byte-identical across reruns and thread counts.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.stats import spearmanr

from . import __version__
from .bo import bo_optimize
from .core import ConfigurationError, GooedError, Problem, seed_stream
from .eig import (
    STREAM_PRIOR,
    expected_utility_grid,
    expected_utility_nmc,
    prior_predictive_setup,
)
from .problems import analytic_eig
from .study import StudyConfig, build_bo, build_nmc, build_problem, load_config, sweep_designs

EXIT_OK, EXIT_VALIDATION, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3, 4
STREAM_GRID = 6


class ValidationFailure(GooedError):
    pass


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class RecordWriter:
    """CSV writer with a fixed column order, flushed after every row.

    When the target already holds rows from the same config hash, those rows
    are kept and ``done`` reports how many leading records can be skipped.
    """

    def __init__(self, path: Path, columns: Sequence[str], config_hash: str, resume: bool = True):
        self.path = Path(path)
        self.columns = list(columns)
        self.done = 0
        kept: list[list[str]] = []
        if resume and self.path.exists():
            with open(self.path, newline="") as fh:
                rows = list(csv.reader(fh))
            if rows and rows[0] == self.columns:
                h = self.columns.index("config_hash")
                kept = [r for r in rows[1:] if len(r) == len(self.columns) and r[h] == config_hash]
                if len(kept) != len(rows) - 1:
                    kept = []
        self._fh = open(self.path, "w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(self.columns)
        for r in kept:
            self._w.writerow(r)
        self.done = len(kept)
        self._fh.flush()

    def kept_rows(self) -> list[dict]:
        with open(self.path, newline="") as fh:
            return list(csv.DictReader(fh))

    def write(self, record: dict) -> None:
        self._w.writerow([_fmt(record[c]) for c in self.columns])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


class Study:
    """Shared state for one command invocation."""

    def __init__(self, cfg: StudyConfig, out: Path, threads: int, emit_plot: bool):
        self.cfg = cfg
        self.out = out
        self.threads = threads
        self.emit_plot = emit_plot
        self.hash = cfg.config_hash
        self.timings: list[dict] = []

    def meta(self) -> dict:
        return {"config_hash": self.hash, "seed": self.cfg.seed, "version": __version__}

    def write_json(self, name: str, payload: dict) -> Path:
        path = self.out / name
        body = dict(payload)
        body.update(self.meta())
        path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
        return path

    def write_timings(self) -> None:
        if not self.timings:
            return
        cols = list(self.timings[0])
        with open(self.out / "timings.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for t in self.timings:
                w.writerow([_fmt(t[c]) for c in cols])


def _check_output_dir(out: Path) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc


def _design_cols(n_d: int) -> list[str]:
    return [f"d{k + 1}" for k in range(n_d)]


SWEEP_FIELDS = ["u", "term_inner_mean", "term_prior_pred_mean", "n_out", "n_in", "bandwidth", "acceptance"]
META_FIELDS = ["config_hash", "seed", "version"]


def _nmc_setup(study: Study, p: Problem):
    nmc = build_nmc(study.cfg)
    cache = prior_predictive_setup(p, nmc.n_out, nmc.bandwidth, seed_stream(study.cfg.seed, STREAM_PRIOR))
    return nmc, cache


def run_sweep(study: Study, p: Problem, filename: str = "sweep.csv", extra=None) -> list[dict]:
    """NMC sweep over the configured design grid; returns all records."""
    designs = sweep_designs(study.cfg, p)
    nmc, cache = _nmc_setup(study, p)
    extra_cols = [] if extra is None else list(extra(designs[0]))
    cols = _design_cols(p.n_d) + SWEEP_FIELDS + extra_cols + META_FIELDS
    writer = RecordWriter(study.out / filename, cols, study.hash)
    records = [dict(r) for r in writer.kept_rows()][: writer.done]
    try:
        for d in designs[writer.done :]:
            est = expected_utility_nmc(p, d, nmc, cache, study.threads)
            rec = dict(zip(_design_cols(p.n_d), d.tolist()))
            rec.update({k: v for k, v in est.record().items() if k in SWEEP_FIELDS})
            if extra is not None:
                rec.update(extra(d))
            rec.update(study.meta())
            writer.write(rec)
            records.append(rec)
            t = dict(zip(_design_cols(p.n_d), d.tolist()))
            t.update(wall_time_s=est.wall_time_s, mcmc_time_s=est.mcmc_time_s, kde_time_s=est.kde_time_s)
            study.timings.append(t)
    finally:
        writer.close()
    if study.emit_plot:
        write_plot_script(study.out / filename, p.n_d, "u")
    return records


def run_optimize(study: Study, p: Problem, prefix: str = "") -> dict:
    nmc, cache = _nmc_setup(study, p)
    bo_cfg = build_bo(study.cfg, p)

    def objective(d):
        est = expected_utility_nmc(p, d, nmc, cache, study.threads)
        t = dict(zip(_design_cols(p.n_d), np.asarray(d).tolist()))
        t.update(wall_time_s=est.wall_time_s, mcmc_time_s=est.mcmc_time_s, kde_time_s=est.kde_time_s)
        study.timings.append(t)
        return est.u

    cols = ["iter"] + _design_cols(p.n_d) + ["u", "incumbent_u", "acquisition_value"] + META_FIELDS
    writer = RecordWriter(study.out / f"{prefix}history.csv", cols, study.hash, resume=False)

    def on_record(h):
        rec = {"iter": h["iter"], **dict(zip(_design_cols(p.n_d), h["d"]))}
        rec.update(u=h["u"], incumbent_u=h["incumbent_u"], acquisition_value=h["acquisition_value"])
        rec.update(study.meta())
        writer.write(rec)

    try:
        res = bo_optimize(objective, bo_cfg, on_record)
    finally:
        writer.close()
    summary = {
        "d_star": res.d_star.tolist(),
        "u_star": res.u_star,
        "stopped": res.stopped,
        "n_evaluations": len(res.history),
    }
    study.write_json(f"{prefix}optimize.json", summary)
    if study.emit_plot:
        write_plot_script(study.out / f"{prefix}history.csv", 0, "incumbent_u")
    return summary


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_sweep(study: Study) -> int:
    p = build_problem(study.cfg, study.threads)
    if not study.cfg.section("sweep"):
        raise ConfigurationError("the sweep command needs a 'sweep' section")
    run_sweep(study, p)
    return EXIT_OK


def cmd_optimize(study: Study) -> int:
    p = build_problem(study.cfg, study.threads)
    if not study.cfg.section("bo"):
        raise ConfigurationError("the optimize command needs a 'bo' section")
    run_optimize(study, p)
    return EXIT_OK


def validation_report(designs, u_nmc, u_grid, u_exact, identity: bool, opts: dict) -> dict:
    """Compare NMC utilities with the grid reference (and closed form if known)."""
    u_nmc, u_grid = np.asarray(u_nmc, dtype=float), np.asarray(u_grid, dtype=float)
    delta = u_nmc - u_grid
    checks: dict[str, bool] = {}
    report: dict = {"n_designs": int(len(u_nmc)), "mean_delta": float(np.mean(delta))}
    if identity:
        rho = float(spearmanr(u_nmc, u_grid)[0]) if len(u_nmc) > 2 else float("nan")
        dist = float(np.linalg.norm(designs[int(np.argmax(u_nmc))] - designs[int(np.argmax(u_grid))]))
        report.update(
            rank_correlation=rho,
            argmax_nmc=designs[int(np.argmax(u_nmc))].tolist(),
            argmax_grid=designs[int(np.argmax(u_grid))].tolist(),
            argmax_distance=dist,
            mean_abs_delta=float(np.mean(np.abs(delta))),
        )
        checks["rank_correlation"] = math.isfinite(rho) and rho >= opts.get("min_rank_correlation", 0.9)
        checks["argmax_distance"] = dist <= opts.get("max_argmax_distance", 0.1)
        checks["mean_abs_delta"] = report["mean_abs_delta"] <= opts.get("max_mean_abs_delta", 0.5)
    else:
        allowance = opts.get("mi_allowance", 0.15)
        report["max_excess_over_parameter_eig"] = float(np.max(delta))
        checks["qoi_eig_below_parameter_eig"] = bool(np.all(delta <= allowance))
    if u_exact is not None and np.all(np.isfinite(u_exact)):
        err = float(np.max(np.abs(u_nmc - np.asarray(u_exact))))
        report["max_abs_analytic"] = err
        checks["analytic"] = err <= opts.get("max_abs_analytic", 0.15)
    report["checks"] = checks
    report["passed"] = all(checks.values())
    diagnosis = []
    if not report["passed"]:
        below = int(np.sum(delta < 0))
        if report["mean_delta"] < 0 and below > len(delta) / 2:
            diagnosis.append(
                f"underestimation: NMC is below the reference at {below} of {len(delta)} designs "
                f"(mean delta {report['mean_delta']:.3g} nats); an oversized KDE bandwidth smooths "
                "the posterior-predictive density and biases the utility low"
            )
        elif report["mean_delta"] > 0:
            diagnosis.append(
                f"overestimation: mean delta {report['mean_delta']:.3g} nats; an undersized KDE "
                "bandwidth sharpens the posterior-predictive density and biases the utility high"
            )
        failed = [k for k, ok in checks.items() if not ok]
        diagnosis.append("failed checks: " + ", ".join(failed))
    report["diagnosis"] = diagnosis
    return report


def cmd_validate(study: Study) -> int:
    p = build_problem(study.cfg, study.threads)
    if p.n_theta > 2:
        raise ConfigurationError("validate needs a problem with at most two parameters")
    opts = study.cfg.section("validate")
    grid_n_out = opts.get("grid_n_out", 10000)
    grid_nodes = opts.get("grid_nodes")
    seed = study.cfg.seed

    def reference(d):
        g = expected_utility_grid(p, d, grid_nodes, grid_n_out, seed_stream(seed, STREAM_GRID))
        exact = analytic_eig(p, d) if p.n_d == 1 else None
        return {"u_grid": g, "u_analytic": float("nan") if exact is None else exact}

    records = run_sweep(study, p, "validate.csv", extra=reference)
    designs = np.array([[float(r[c]) for c in _design_cols(p.n_d)] for r in records])
    u_nmc = [float(r["u"]) for r in records]
    u_grid = [float(r["u_grid"]) for r in records]
    exact = np.array([float(r["u_analytic"]) for r in records])
    report = validation_report(
        designs, u_nmc, u_grid, exact if np.all(np.isfinite(exact)) else None, p.predict_is_identity, opts
    )
    study.write_json("validate.json", report)
    if not report["passed"]:
        raise ValidationFailure("; ".join(report["diagnosis"]))
    return EXIT_OK


def cmd_pde_demo(study: Study) -> int:
    from . import pde

    cfg = study.cfg
    grid, solver = (pde.FINE_GRID, pde.FINE_SOLVER) if cfg.fine_resolution else (pde.DESK_GRID, pde.DESK_SOLVER)
    demo = cfg.section("pde")
    theta = tuple(demo.get("theta", (0.257, 0.528)))
    fmt = demo.get("field_format", "csv")
    fields = pde.solve(pde.SourceParams(theta), grid, solver)
    snapshots = []
    for f in fields:
        path = study.out / f"field_t{f.t:g}.{fmt}"
        pde.export_field(f, path, extra=study.meta())
        snapshots.append(
            {
                "t": f.t,
                "file": path.name,
                "mass": f.mass(),
                "centroid": f.centroid().tolist(),
                "right_boundary_flux": pde.right_boundary_flux(f),
            }
        )
        if study.emit_plot and fmt == "csv":
            write_field_plot_script(path, grid.n)
    study.write_json("snapshots.json", {"theta": list(theta), "dx": grid.dx, "dt": solver.dt, "snapshots": snapshots})

    if cfg.section("problem").get("name") != "sensors":
        raise ConfigurationError("pde-demo needs problem.name = 'sensors'")
    p = build_problem(cfg, study.threads)
    obs_field = fields[0]

    def readouts(d):
        pts = np.asarray(d, dtype=float).reshape(-1, 2)
        return {f"readout{k + 1}": pde.sample_concentration(obs_field, x) for k, x in enumerate(pts)}

    if cfg.section("sweep"):
        run_sweep(study, p, "sensor_sweep.csv", extra=readouts)
    else:
        run_optimize(study, p, prefix="sensor_")
    return EXIT_OK


COMMANDS = {
    "sweep": cmd_sweep,
    "optimize": cmd_optimize,
    "validate": cmd_validate,
    "pde-demo": cmd_pde_demo,
}


# ---------------------------------------------------------------------------
# Plot scripts
# ---------------------------------------------------------------------------


def write_plot_script(csv_path: Path, n_d: int, column: str) -> Path:
    """Gnuplot script plotting ``column`` against the design (or iteration)."""
    csv_path = Path(csv_path)
    with open(csv_path, newline="") as fh:
        header = next(csv.reader(fh))
    col = header.index(column) + 1
    lines = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set terminal pngcairo size 900,650",
        f"set output '{csv_path.stem}.png'",
    ]
    if n_d == 0:
        lines += ["set xlabel 'iteration'", f"set ylabel '{column}'",
                  f"plot '{csv_path.name}' using 1:{col} with steps"]
    elif n_d == 1:
        lines += ["set xlabel 'd'", f"set ylabel '{column}'",
                  f"plot '{csv_path.name}' using 1:{col} with linespoints"]
    else:
        lines += ["set xlabel 'd1'", "set ylabel 'd2'", "set view map", "set dgrid3d 50,50",
                  f"splot '{csv_path.name}' using 1:2:{col} with pm3d"]
    path = csv_path.with_suffix(".gp")
    path.write_text("\n".join(lines) + "\n")
    return path


def write_field_plot_script(csv_path: Path, n: int) -> Path:
    csv_path = Path(csv_path)
    lines = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set terminal pngcairo size 800,700",
        f"set output '{csv_path.stem}.png'",
        "set view map",
        "set size ratio -1",
        f"set dgrid3d {n},{n}",
        f"splot '{csv_path.name}' using 1:2:3 with pm3d notitle",
    ]
    path = csv_path.with_suffix(".gp")
    path.write_text("\n".join(lines) + "\n")
    return path


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gooed", description="Goal-oriented Bayesian experimental design studies.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, type=Path, help="study JSON file")
    ap.add_argument("--out", required=True, type=Path, help="output directory")
    ap.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    ap.add_argument("--threads", type=int, default=1, help="worker thread cap (results do not depend on it)")
    ap.add_argument("--paper-resolution", dest="fine_resolution", action="store_true", help="fine PDE grid and time step")
    ap.add_argument("--emit-plot-script", action="store_true", help="write a gnuplot script next to each CSV")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigurationError("--threads must be >= 1")
        cfg = load_config(args.config, args.seed, args.fine_resolution)
        _check_output_dir(args.out)
        study = Study(cfg, args.out, args.threads, args.emit_plot_script)
        try:
            return COMMANDS[args.command](study)
        finally:
            study.write_timings()
    except ValidationFailure as exc:
        print(f"gooed: validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ConfigurationError as exc:
        print(f"gooed: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GooedError, OSError, FloatingPointError) as exc:
        print(f"gooed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
