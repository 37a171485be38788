import warnings

import numpy as np
import pytest

from gooed.bo import BoConfig, bo_optimize
from gooed.core import ConfigurationError, DomainError, seed_stream
from gooed.eig import STREAM_PRIOR, NmcConfig, expected_utility_nmc, prior_predictive_setup
from gooed.pde import (
    DESK_GRID,
    CflWarning,
    Field,
    Concentration,
    ConcentrationPlusFlux,
    Flux,
    Grid2D,
    Parameters,
    SolverConfig,
    SourceParams,
    build_sensor_problem,
    direct_concentration,
    export_field,
    read_field,
    right_boundary_flux,
    sample_concentration,
    solve,
    tabulate_surrogate,
)
from gooed.pde.solver import convection, source_field


def heat_kernel(x, t, x0=0.5):
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    return np.exp(-((X1 - x0) ** 2 + (X2 - x0) ** 2) / (4 * t)) / (4 * np.pi * t)


def diffusion_error(dx, t0=0.005, t1=0.02):
    g = Grid2D(dx)
    cfg = SolverConfig(dt=dx / 10, t_end=t1, snapshot_times=(t1,), velocity=(0.0, 0.0))
    f = solve(None, g, cfg, c0=heat_kernel(g.x, t0))[0]
    return float(np.sqrt(np.sum((f.c - heat_kernel(g.x, t0 + t1)) ** 2 * g.volumes())))


@pytest.fixture(scope="module")
def desk_fields():
    return solve(SourceParams((0.3, 0.4)))


class TestGrid:
    def test_nodes(self):
        g = Grid2D(0.05)
        assert g.n == 61
        assert g.x[0] == -1.0 and g.x[-1] == 2.0
        assert g.index_of(1.0) == 40

    def test_volumes_sum_to_area(self):
        assert Grid2D(0.1).volumes().sum() == pytest.approx(9.0)

    @pytest.mark.parametrize("dx", [0.0, 0.03, -0.1])
    def test_invalid(self, dx):
        with pytest.raises(ConfigurationError):
            Grid2D(dx)

    def test_solver_config_checks(self):
        with pytest.raises(ConfigurationError):
            SolverConfig(dt=0.003)
        with pytest.raises(ConfigurationError):
            SolverConfig(snapshot_times=(0.2, 0.05))
        with pytest.raises(ConfigurationError):
            SolverConfig(snapshot_times=(0.3,))


class TestSource:
    def test_source_mass(self):
        q = source_field(SourceParams((0.5, 0.5)), DESK_GRID)
        assert np.sum(q * DESK_GRID.volumes()) == pytest.approx(2.0, rel=1e-10)

    def test_source_centred(self):
        g = DESK_GRID
        q = source_field(SourceParams((0.25, 0.75)), g)
        w = q * g.volumes()
        X1, X2 = np.meshgrid(g.x, g.x, indexing="ij")
        assert np.sum(w * X1) / w.sum() == pytest.approx(0.25, abs=1e-6)
        assert np.sum(w * X2) / w.sum() == pytest.approx(0.75, abs=1e-6)


class TestOperators:
    def test_convection_conserves(self, rng):
        g = Grid2D(0.1)
        c = rng.uniform(size=(g.n, g.n))
        for u in (1.0, -1.0):
            for axis in (0, 1):
                assert abs(np.sum(convection(c, u, axis, g.dx) * g.volumes())) < 1e-10

    def test_constant_field_interior(self):
        # the closed walls block inflow, so only the boundary rows change
        tend = convection(np.ones((11, 11)), 1.0, 0, 0.3)
        assert np.allclose(tend[1:-1], 0.0)
        assert np.all(tend[0] < 0) and np.all(tend[-1] > 0)


class TestSolve:
    def test_zero_source_identically_zero(self):
        for f in solve(None):
            assert not np.any(f.c)
        assert not np.any(solve(SourceParams((0.5, 0.5), s=0.0))[-1].c)

    def test_mass_balance(self, desk_fields):
        for f in desk_fields:
            assert f.mass() == pytest.approx(2.0 * f.t, rel=5e-3)

    def test_plume_drifts_with_wind(self, desk_fields):
        early, late = desk_fields
        assert early.t == 0.05 and late.t == 0.2
        assert np.all(late.centroid() > early.centroid() + 0.3)

    def test_concentration_non_negative(self, desk_fields):
        assert desk_fields[-1].c.min() > -1e-3 * desk_fields[-1].c.max()

    def test_cfl_warning(self):
        cfg = SolverConfig(dt=0.02, t_end=0.2, snapshot_times=(0.2,))
        with pytest.warns(CflWarning):
            solve(None, Grid2D(0.1), cfg)

    def test_no_warning_at_defaults(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error", CflWarning)
            solve(None, Grid2D(0.1), SolverConfig(dt=0.005, snapshot_times=(0.2,)))

    def test_bad_initial_field(self):
        with pytest.raises(ConfigurationError):
            solve(None, c0=np.zeros((3, 3)))

    @pytest.mark.slow
    def test_diffusion_second_order(self):
        errs = [diffusion_error(dx) for dx in (0.1, 0.05, 0.025, 0.0125)]
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert np.all(orders > 1.7)
        slope = np.polyfit(np.log([0.1, 0.05, 0.025, 0.0125]), np.log(errs), 1)[0]
        assert 1.7 <= slope <= 2.3


class TestQueries:
    def test_sampling_at_node(self, desk_fields):
        f = desk_fields[0]
        g = f.grid
        assert sample_concentration(f, [g.x[30], g.x[25]]) == f.c[30, 25]

    def test_sampling_vectorised(self, desk_fields):
        v = sample_concentration(desk_fields[0], np.array([[0.1, 0.2], [0.5, 0.5]]))
        assert v.shape == (2,)

    def test_outside_domain(self, desk_fields):
        with pytest.raises(DomainError):
            sample_concentration(desk_fields[0], [2.5, 0.0])

    def test_flux_outward(self, desk_fields):
        assert right_boundary_flux(desk_fields[-1]) > 0
        assert right_boundary_flux(solve(None)[-1]) == 0.0

    @pytest.mark.parametrize("suffix", [".csv", ".bin"])
    def test_export_roundtrip(self, desk_fields, tmp_path, suffix):
        f = desk_fields[0]
        g = read_field(export_field(f, tmp_path / f"field{suffix}", {"seed": 1}))
        assert np.array_equal(g.c, f.c)
        assert g.t == f.t and g.theta == f.theta and g.grid.dx == f.grid.dx


class TestSensors:
    def test_surrogate_exact_at_nodes(self, small_surrogate):
        theta, x = (0.25, 0.75), (0.4, 0.6)
        direct = direct_concentration(theta, x, 0)
        assert small_surrogate.concentration(np.array(theta), x, 0) == pytest.approx(direct, rel=1e-12)

    def test_surrogate_between_nodes(self, desk_surrogate):
        theta, x = (0.33, 0.61), (0.4, 0.7)
        direct = direct_concentration(theta, x, 0)
        approx = desk_surrogate.concentration(np.array(theta), x, 0)
        assert approx == pytest.approx(direct, rel=0.1, abs=1e-3)

    def test_surrogate_domain(self, small_surrogate):
        with pytest.raises(DomainError):
            small_surrogate.concentration(np.array([1.2, 0.5]), (0.5, 0.5), 0)

    def test_too_few_nodes(self):
        with pytest.raises(ConfigurationError):
            tabulate_surrogate(3)

    @pytest.mark.parametrize(
        "qoi,n_z",
        [
            (Concentration([[0.1, 1.0]]), 1),
            (Concentration([[0.1, 1.0], [0.5, 0.5]]), 2),
            (Flux(), 1),
            (ConcentrationPlusFlux([[0.1, 1.0]]), 2),
            (Parameters(), 2),
        ],
    )
    @pytest.mark.parametrize("n_sensors", [1, 2, 3])
    def test_problem_shapes(self, small_surrogate, qoi, n_z, n_sensors, rng):
        p = build_sensor_problem(n_sensors, qoi, small_surrogate)
        assert (p.n_d, p.n_y, p.n_z) == (2 * n_sensors, n_sensors, n_z)
        th = rng.uniform(size=(4, 2))
        assert p.observe(th, np.full(2 * n_sensors, 0.5)).shape == (4, n_sensors)
        assert p.predict(th).shape == (4, n_z)

    def test_bad_sensor_count(self, small_surrogate):
        with pytest.raises(ConfigurationError):
            build_sensor_problem(4, Flux(), small_surrogate)

    def test_bad_qoi_location(self):
        with pytest.raises(ConfigurationError):
            Concentration([[1.5, 0.5]])


def linear_field(fn, grid=DESK_GRID):
    X1, X2 = np.meshgrid(grid.x, grid.x, indexing="ij")
    return Field(fn(X1, X2), 0.0, grid)


class TestSpecExamples:
    def test_plume_moves_top_right(self):
        early, late = solve(SourceParams((0.257, 0.528)))
        shift = late.centroid() - early.centroid()
        assert shift[0] > 0 and shift[1] > 0

    def test_constant_field_sampling(self, rng):
        f = linear_field(lambda a, b: np.full_like(a, 0.37))
        np.testing.assert_allclose(sample_concentration(f, rng.uniform(-1, 2, (10, 2))), 0.37, rtol=1e-14)

    def test_linear_field_sampling(self):
        g = DESK_GRID
        f = linear_field(lambda a, b: a)
        mid = (g.x[:-1] + g.x[1:]) / 2
        q = np.stack([mid, np.full_like(mid, 0.3)], axis=-1)
        np.testing.assert_allclose(sample_concentration(f, q), mid, atol=1e-13)

    @pytest.mark.parametrize(
        "fn, expect",
        [(lambda a, b: np.full_like(a, 3.0), 0.0), (lambda a, b: -a, 2.0), (lambda a, b: b, 0.0)],
    )
    def test_flux_of_simple_fields(self, fn, expect):
        assert right_boundary_flux(linear_field(fn)) == pytest.approx(expect, abs=1e-12)

    def test_flux_sign_for_rightward_diffusion(self):
        g = DESK_GRID
        X1, X2 = np.meshgrid(g.x, g.x, indexing="ij")
        c0 = np.exp(-((X1 - 0.3) ** 2 + X2**2) / 0.02)
        cfg = SolverConfig(t_end=0.05, snapshot_times=(0.05,), velocity=(0.0, 0.0))
        assert right_boundary_flux(solve(None, g, cfg, c0=c0)[0]) > 0

    @pytest.mark.slow
    def test_surrogate_refinement(self, small_surrogate):
        fine = tabulate_surrogate(9)
        rng = np.random.default_rng(6)
        theta = rng.uniform(size=(20, 2))
        x = rng.uniform(size=(20, 2))
        exact = np.array([direct_concentration(t, p, 0) for t, p in zip(theta, x)])

        def err(s):
            return max(abs(float(s.concentration(t, p, 0)) - e) for t, p, e in zip(theta, x, exact))

        assert err(fine) < err(small_surrogate)

    def test_interpolated_mass(self, small_surrogate, rng):
        s = small_surrogate
        masses = np.sum(s.fields[0] * s.grid.volumes(), axis=(-2, -1))
        vals = s.interpolate(masses, rng.uniform(size=(10, 2)))
        np.testing.assert_allclose(vals, 2.0 * s.times[0], atol=1e-3)

    def test_temporal_order(self):
        g = Grid2D(0.05)

        def run(dt):
            cfg = SolverConfig(dt=dt, t_end=0.04, snapshot_times=(0.04,), velocity=(0.0, 0.0))
            return solve(None, g, cfg, c0=heat_kernel(g.x, 0.01))[0].c

        ref = run(0.04 / 256)
        errs = [np.sqrt(np.sum((run(0.04 / k) - ref) ** 2 * g.volumes())) for k in (4, 8, 16)]
        orders = np.log2(np.array(errs[:-1]) / errs[1:])
        assert np.all(np.abs(orders - 2) < 0.3)

    def test_translation_consistency(self):
        cfg = SolverConfig(dt=6.25e-4, t_end=0.01, snapshot_times=(0.01,))
        a = solve(SourceParams((0.3, 0.5)), DESK_GRID, cfg)[0].centroid()
        b = solve(SourceParams((0.4, 0.5)), DESK_GRID, cfg)[0].centroid()
        np.testing.assert_allclose(b - a, [0.1, 0.0], atol=0.01)

    @pytest.mark.slow
    def test_two_sensor_flux_design_not_clustered_at_boundary(self, desk_surrogate):
        p = build_sensor_problem(2, Flux(), desk_surrogate)
        nmc = NmcConfig(n_out=100, n_in=100, seed=1)
        cache = prior_predictive_setup(p, nmc.n_out, nmc.bandwidth, seed_stream(nmc.seed, STREAM_PRIOR))
        cfg = BoConfig(p.design_bounds, max_iter=20, seed=1)
        r = bo_optimize(lambda d: expected_utility_nmc(p, d, nmc, cache).u, cfg)
        assert min(r.d_star[0], r.d_star[2]) < 0.7
