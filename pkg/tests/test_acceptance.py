"""End-to-end acceptance checks.

Each test carries ``@pytest.mark.criterion(n)``; the terminal summary (see
``conftest.py``) prints one PASS/FAIL line per criterion number.  Sweeps that
feed several checks are module fixtures.
"""

import json
import time

import numpy as np
import pytest
from scipy.optimize import least_squares
from scipy.stats import kstest, spearmanr

from gooed.bo import BoConfig, bo_optimize
from gooed.cli import EXIT_OK, main
from gooed.core import seed_stream
from gooed.eig import (
    STREAM_PRIOR,
    NmcConfig,
    expected_utility_grid,
    expected_utility_nmc,
    inner_terms,
    outer_data,
    posterior_predictive_samples,
    prior_predictive_setup,
    sweep_nmc,
)
from gooed.kde import Adaptive
from gooed.mcmc import Ensemble, StretchConfig, gamma_cdf, run_chain, sample_gamma, stretch_step
from gooed.pde import (
    Concentration,
    Grid2D,
    Parameters,
    SolverConfig,
    SourceParams,
    build_sensor_problem,
    solve,
)
from gooed.problems import analytic_eig, builtin_problem

pytestmark = pytest.mark.slow

BM_DESIGNS = np.linspace(0.0, 1.0, 20)[:, None]
FIVE_DESIGNS = np.array([[0.1], [0.3], [0.5], [0.7], [0.9]])
ELEVEN = np.linspace(0.0, 1.0, 11)[:, None]
SENSOR_AXIS = np.linspace(0.0, 1.0, 9)


def study_cache(p, cfg):
    return prior_predictive_setup(p, cfg.n_out, cfg.bandwidth, seed_stream(cfg.seed, STREAM_PRIOR))


def nmc_sweep(name, designs, n=500, seed=0):
    p = builtin_problem(name)
    cfg = NmcConfig(n_out=n, n_in=n, seed=seed)
    return np.array([e.u for e in sweep_nmc(p, designs, cfg, study_cache(p, cfg))])


def grid_sweep(name, designs, n_out=10_000):
    p = builtin_problem(name)
    return np.array([expected_utility_grid(p, d, n_out=n_out, rng=np.random.default_rng(0)) for d in designs])


@pytest.fixture(scope="module")
def bm_curves():
    return {"nmc": nmc_sweep("bm", BM_DESIGNS), "grid": grid_sweep("bm", BM_DESIGNS)}


@pytest.fixture(scope="module")
def eleven_point_sweeps():
    return {name: nmc_sweep(name, ELEVEN) for name in ("t2", "t3")}


# ---------------------------------------------------------------------------
# 1. closed-form oracle
# ---------------------------------------------------------------------------


@pytest.mark.criterion(1)
def test_linear_gaussian_oracle(record_property):
    start = time.perf_counter()
    p = builtin_problem("linear_gaussian")
    cfg = NmcConfig(n_out=1000, n_in=1000, seed=0)
    cache = study_cache(p, cfg)
    worst_grid = worst_nmc = 0.0
    for d in (0.25, 0.5, 1.0):
        exact = analytic_eig(p, [d])
        u_grid = expected_utility_grid(p, [d], n_out=20_000, rng=np.random.default_rng(1))
        u_nmc = expected_utility_nmc(p, [d], cfg, cache).u
        worst_grid = max(worst_grid, abs(u_grid - exact))
        worst_nmc = max(worst_nmc, abs(u_nmc - exact))
    elapsed = time.perf_counter() - start
    record_property("detail", f"grid err {worst_grid:.4f}, nmc err {worst_nmc:.3f}, {elapsed:.0f}s")
    assert worst_grid <= 0.02
    assert worst_nmc <= 0.15
    assert elapsed < 300


# ---------------------------------------------------------------------------
# 2-5. one-dimensional test problems
# ---------------------------------------------------------------------------


@pytest.mark.criterion(2)
def test_bm_estimators_agree(bm_curves, record_property):
    rho = spearmanr(bm_curves["nmc"], bm_curves["grid"]).statistic
    gap = abs(BM_DESIGNS[np.argmax(bm_curves["nmc"]), 0] - BM_DESIGNS[np.argmax(bm_curves["grid"]), 0])
    record_property("detail", f"spearman {rho:.3f}, argmax gap {gap:.3f}")
    assert rho >= 0.9
    assert gap <= 0.1


@pytest.mark.criterion(3)
def test_bandwidth_envelope(record_property):
    p = builtin_problem("bm")
    cfg = NmcConfig(n_out=500, n_in=500, seed=0)
    cache = study_cache(p, cfg)
    prior_term = float(np.mean(cache.log_pz[: cfg.n_out]))
    gaps = []
    for d in BM_DESIGNS:
        theta, y = outer_data(p, d, cache, cfg.n_out, cfg.seed)
        z, _ = posterior_predictive_samples(p, d, y, theta, cfg)
        lo, hi = (float(np.mean(inner_terms(z, b))) - prior_term for b in (0.0035, 0.006))
        gaps.append(lo - hi)
    record_property("detail", f"smallest gap {min(gaps):.4f}")
    assert min(gaps) >= 0.0


@pytest.mark.criterion(4)
@pytest.mark.parametrize("name", ["t2", "t3"])
def test_prediction_gain_bounded_by_parameter_gain(name, record_property):
    u_z = nmc_sweep(name, FIVE_DESIGNS)
    u_theta = grid_sweep(name, FIVE_DESIGNS)
    excess = float(np.max(u_z - u_theta))
    record_property("detail", f"{name} max excess {excess:.3f}")
    assert excess <= 0.15


@pytest.mark.criterion(5)
def test_optimal_designs_depend_on_goal(bm_curves, eleven_point_sweeps, record_property):
    t3 = ELEVEN[np.argmax(eleven_point_sweeps["t3"]), 0]
    t2 = ELEVEN[np.argmax(eleven_point_sweeps["t2"]), 0]
    bm = BM_DESIGNS[np.argmax(bm_curves["nmc"]), 0]
    record_property("detail", f"argmax t3 {t3:.2f}, t2 {t2:.2f}, bm {bm:.2f}")
    assert 0.1 <= t3 <= 0.35
    assert t2 >= 0.9
    assert bm >= 0.9


# ---------------------------------------------------------------------------
# 6. sampler
# ---------------------------------------------------------------------------


def std_normal(x):
    return -0.5 * np.sum(x * x, axis=-1)


@pytest.mark.criterion(6)
def test_sampler_correctness(record_property):
    cfg = StretchConfig(n_walkers=32, n_steps=5000, init_jitter_sd=1.0)
    x = run_chain(cfg, std_normal, [0.0], 32 * 500, np.random.default_rng(3))
    ks = kstest(sample_gamma(2.0, np.random.default_rng(0), 200_000), lambda g: gamma_cdf(g, 2.0)).statistic

    A = np.array([[3.0, 0.5], [0.0, 0.2]])
    b = np.array([1.0, -2.0])
    Ainv = np.linalg.inv(A)
    mapped = lambda y: std_normal((y - b) @ Ainv.T)
    x0 = np.random.default_rng(5).standard_normal((12, 2))
    e1, e2 = Ensemble(x0, std_normal(x0)), Ensemble(x0 @ A.T + b, mapped(x0 @ A.T + b))
    r1, r2 = np.random.default_rng(9), np.random.default_rng(9)
    for _ in range(50):
        e1 = stretch_step(e1, std_normal, 2.0, r1)
        e2 = stretch_step(e2, mapped, 2.0, r2)
    drift = float(np.max(np.abs(e1.positions @ A.T + b - e2.positions)))

    record_property("detail", f"mean {x.mean():.3f}, var {x.var():.3f}, ks {ks:.4f}, affine drift {drift:.1e}")
    assert abs(x.mean()) <= 0.05
    assert abs(x.var() - 1.0) <= 0.1
    assert ks < 0.01
    assert drift < 1e-9


# ---------------------------------------------------------------------------
# 7. optimiser
# ---------------------------------------------------------------------------


@pytest.mark.criterion(7)
def test_bo_quadratic(record_property):
    r = bo_optimize(lambda d: -((d[0] - 0.7) ** 2), BoConfig(np.array([[0.0, 1.0]]), max_iter=40, seed=0))
    record_property("detail", f"quadratic d_star {r.d_star[0]:.4f}")
    assert abs(r.d_star[0] - 0.7) <= 0.05


@pytest.mark.criterion(7)
def test_bo_easom(record_property):
    p = builtin_problem("easom2d")
    nmc = NmcConfig(n_out=100, n_in=100, seed=0)
    cache = study_cache(p, nmc)
    axis = np.linspace(0.0, 1.0, 21)
    ref = [expected_utility_nmc(p, [a, b], nmc, cache).u for a in axis for b in axis]
    r = bo_optimize(lambda d: expected_utility_nmc(p, d, nmc, cache).u, BoConfig(p.design_bounds, seed=0))
    q95 = float(np.quantile(ref, 0.95))
    record_property("detail", f"easom u(d_star) {r.u_star:.3f} vs q95 {q95:.3f}")
    assert r.u_star >= q95


# ---------------------------------------------------------------------------
# 8. solver
# ---------------------------------------------------------------------------


def heat_kernel(x, t, x0=0.5):
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    return np.exp(-((X1 - x0) ** 2 + (X2 - x0) ** 2) / (4 * t)) / (4 * np.pi * t)


def diffusion_error(dx, t0=0.005, t1=0.02):
    g = Grid2D(dx)
    cfg = SolverConfig(dt=dx / 10, t_end=t1, snapshot_times=(t1,), velocity=(0.0, 0.0))
    f = solve(None, g, cfg, c0=heat_kernel(g.x, t0))[0]
    return float(np.sqrt(np.sum((f.c - heat_kernel(g.x, t0 + t1)) ** 2 * g.volumes())))


@pytest.mark.criterion(8)
def test_solver(record_property):
    start = time.perf_counter()
    zero = solve(SourceParams((0.5, 0.5), s=0.0))
    fields = solve(SourceParams((0.3, 0.4)))
    mass_err = max(abs(f.mass() - 2.0 * f.t) / (2.0 * f.t) for f in fields)
    dxs = [0.1, 0.05, 0.025, 0.0125]
    order = np.polyfit(np.log(dxs), np.log([diffusion_error(dx) for dx in dxs]), 1)[0]
    elapsed = time.perf_counter() - start
    record_property("detail", f"mass err {mass_err:.2e}, order {order:.2f}, {elapsed:.0f}s")
    assert all(np.all(f.c == 0.0) for f in zero)
    assert mass_err <= 5e-3
    assert 1.7 <= order <= 2.3
    assert elapsed < 600


# ---------------------------------------------------------------------------
# 9. sensor placement
# ---------------------------------------------------------------------------


def ring_fit(U, axis, degree=3):
    """Centre and radius of a radially symmetric polynomial fit to a surface.

    ``U ~ sum_k a_k |d - c|^(2k)``; the radius is the maximiser of the fitted
    radial profile on [0, 0.5].
    """
    D1, D2 = np.meshgrid(axis, axis, indexing="ij")
    x, y, u = D1.ravel(), D2.ravel(), U.ravel()

    def basis(c):
        r2 = (x - c[0]) ** 2 + (y - c[1]) ** 2
        return np.stack([r2**k for k in range(degree + 1)], axis=1)

    def resid(c):
        A = basis(c)
        return A @ np.linalg.lstsq(A, u, rcond=None)[0] - u

    c = least_squares(resid, [0.5, 0.5]).x
    a = np.linalg.lstsq(basis(c), u, rcond=None)[0]
    rho = np.linspace(0.0, 0.5, 501)
    profile = sum(a[k] * rho ** (2 * k) for k in range(degree + 1))
    return c, float(rho[np.argmax(profile)])


@pytest.mark.criterion(9)
def test_parameter_goal_ring(desk_surrogate, record_property):
    start = time.perf_counter()
    p = build_sensor_problem(1, Parameters(), desk_surrogate)
    U = np.array(
        [[expected_utility_grid(p, [a, b], n_out=200, rng=seed_stream(0, 6)) for b in SENSOR_AXIS] for a in SENSOR_AXIS]
    )
    centre, radius = ring_fit(U, SENSOR_AXIS)
    elapsed = time.perf_counter() - start
    record_property("detail", f"ring centre ({centre[0]:.3f}, {centre[1]:.3f}), radius {radius:.3f}, {elapsed:.0f}s")
    assert 0.1 <= radius <= 0.35
    assert np.all(centre > 0.5)
    assert elapsed < 3600


@pytest.mark.criterion(9)
def test_prediction_goal_pulls_left(desk_surrogate, record_property):
    start = time.perf_counter()
    p = build_sensor_problem(1, Concentration([[0.1, 1.0]]), desk_surrogate)
    cfg = NmcConfig(n_out=200, n_in=200, seed=0, bandwidth=Adaptive(n_warm=50))
    cache = study_cache(p, cfg)
    D = np.array([[a, b] for a in SENSOR_AXIS for b in SENSOR_AXIS])
    u = np.array([e.u for e in sweep_nmc(p, D, cfg, cache)])
    top = u >= np.quantile(u, 0.9)
    w = u[top] - u.min()
    left = float(np.sum(w[D[top, 0] < 0.5]) / np.sum(w))
    elapsed = time.perf_counter() - start
    record_property("detail", f"top-decile utility share left of d1=0.5: {left:.2f}, {elapsed:.0f}s")
    assert left > 0.5
    assert elapsed < 3600


# ---------------------------------------------------------------------------
# 10. cost trends
# ---------------------------------------------------------------------------


@pytest.mark.criterion(10)
def test_sampling_cost_scaling(record_property):
    p = builtin_problem("bm")
    cache = prior_predictive_setup(p, 400, Adaptive(), seed_stream(0, STREAM_PRIOR))
    d = np.array([0.5])
    theta, y = outer_data(p, d, cache, 400, 0)
    sizes = [250, 500, 1000]
    posterior_predictive_samples(p, d, y, theta, NmcConfig(n_out=400, n_in=100))
    times = {n: [] for n in sizes}
    for _ in range(5):
        for n in sizes:
            t = time.process_time()
            posterior_predictive_samples(p, d, y, theta, NmcConfig(n_out=400, n_in=n))
            times[n].append(time.process_time() - t)
    med = [np.median(times[n]) for n in sizes]
    slope = float(np.polyfit(np.log(sizes), np.log(med), 1)[0])
    record_property("detail", f"sampling time exponent {slope:.3f}")
    assert slope >= 1.0


@pytest.mark.criterion(10)
def test_sampling_share_grows_with_dimension(record_property):
    shares = []
    for n in (1, 2, 4):
        p = builtin_problem("ndim", n)
        cfg = NmcConfig(n_out=200, n_in=500)
        cache = study_cache(p, cfg)
        runs = [expected_utility_nmc(p, np.full(n, 0.5), cfg, cache) for _ in range(3)]
        m = np.median([e.mcmc_time_s for e in runs])
        k = np.median([e.kde_time_s for e in runs])
        shares.append(m / (m + k))
    record_property("detail", "sampling share " + ", ".join(f"{s:.3f}" for s in shares))
    assert shares[0] <= shares[1] <= shares[2]


# ---------------------------------------------------------------------------
# 11. reproducibility of every command
# ---------------------------------------------------------------------------

COMMAND_CONFIGS = {
    "sweep": {
        "problem": {"name": "t3"},
        "estimator": {"n_out": 40, "n_in": 40, "chunk_size": 7},
        "sweep": {"points": 4},
        "seed": 11,
    },
    "optimize": {
        "problem": {"name": "easom2d"},
        "estimator": {"n_out": 30, "n_in": 30, "chunk_size": 7},
        "bo": {"max_iter": 4, "restarts": 4},
        "seed": 12,
    },
    "validate": {
        "problem": {"name": "linear_gaussian"},
        "estimator": {"n_out": 60, "n_in": 60, "chunk_size": 7},
        "sweep": {"designs": [[0.5], [1.0]]},
        "validate": {"grid_n_out": 500},
        "seed": 13,
    },
    "pde-demo": {
        "problem": {
            "name": "sensors",
            "qoi": {"kind": "concentration+flux", "xi": [[0.1, 1.0]]},
            "surrogate": {"n_per_axis": 5},
        },
        "estimator": {"n_out": 20, "n_in": 20, "chunk_size": 7},
        "sweep": {"points": 2},
        "seed": 14,
    },
}


def snapshot(out):
    return {f.name: f.read_bytes() for f in sorted(out.iterdir()) if f.name != "timings.csv"}


@pytest.mark.criterion(11)
@pytest.mark.parametrize("command", sorted(COMMAND_CONFIGS))
def test_commands_reproducible(command, tmp_path, record_property):
    cfg = tmp_path / "study.json"
    cfg.write_text(json.dumps(COMMAND_CONFIGS[command]))
    outputs = []
    for k, threads in enumerate((1, 1, 3)):
        out = tmp_path / f"run{k}"
        code = main([command, "--config", str(cfg), "--out", str(out), "--threads", str(threads)])
        assert code in (EXIT_OK, 2)
        outputs.append(snapshot(out))
    record_property("detail", f"{command}: {len(outputs[0])} files compared")
    assert outputs[0] and outputs[0] == outputs[1] == outputs[2]
