import numpy as np
import pytest

from entroflow.errors import DimensionError, DomainError, InputError, SingularDirectionError
from entroflow.grid import DensityField, Grid
from entroflow.potential import SampledPotential, cosine_potential
from entroflow.transport import (
    build_plan,
    cdf_function,
    curve_metric_slope,
    displacement_convexity,
    displacement_interpolation,
    displacement_rate_check,
    entropy_slope_comparison,
    geodesic_check,
    hwi_check,
    hwi_sweep,
    quantile_function,
    random_density,
    random_hwi_pairs,
    velocity_and_flow_check,
    w2_1d,
    w2_discrete,
    w2_grid,
)


def shifted_uniform(grid, lo, hi):
    return DensityField.from_function(grid, lambda x: np.where((x > lo) & (x < hi), 1.0 / (hi - lo), 0.0))


class TestDistances:
    def test_identical(self, p0):
        assert w2_1d(p0, p0) == 0.0

    def test_translated_blocks(self):
        """Two blocks of equal width are a translation apart."""
        grid = Grid.interval(0.0, 1.0, 100)
        mu = shifted_uniform(grid, 0.1, 0.3)
        nu = shifted_uniform(grid, 0.5, 0.7)
        assert w2_1d(mu, nu) == pytest.approx(0.4, abs=1e-12)

    def test_translated_uniform(self):
        """Uniform on [0, 1] against uniform on [0.2, 1.2] is a pure translation."""
        grid = Grid.interval(0.0, 1.2, 120)
        assert w2_1d(shifted_uniform(grid, 0.0, 1.0), shifted_uniform(grid, 0.2, 1.2)) == pytest.approx(0.2, abs=1e-12)

    def test_metric_on_random_triples(self, coarse_grid):
        rng = np.random.default_rng(3)
        for _ in range(50):
            a, b, c = (random_density(coarse_grid, rng) for _ in range(3))
            ab, bc, ac = w2_1d(a, b), w2_1d(b, c), w2_1d(a, c)
            assert abs(ab - w2_1d(b, a)) <= 1e-12
            assert ac <= ab + bc + 1e-6
            assert w2_1d(a, a) == 0.0

    def test_quantile_of_uniform(self, unit_grid):
        s = np.array([0.0, 0.25, 1.0])
        np.testing.assert_allclose(quantile_function(DensityField.uniform(unit_grid), s), s, atol=1e-12)

    def test_quantile_jumps_across_gap(self):
        grid = Grid.interval(0.0, 1.0, 100)
        blocks = DensityField.from_function(
            grid, lambda x: np.where(((x > 0.1) & (x < 0.2)) | ((x > 0.6) & (x < 0.7)), 5.0, 0.0)
        )
        s = np.array([0.0, cdf_function(blocks, 0.4), 1.0])
        assert s[1] == pytest.approx(0.5)
        np.testing.assert_allclose(quantile_function(blocks, s), [0.1, 0.2, 0.7], atol=1e-12)
        np.testing.assert_allclose(quantile_function(blocks, s, side="right"), [0.1, 0.6, 0.7], atol=1e-12)
        # the gap is transported rigidly onto the translated copy
        moved = DensityField.from_function(
            grid, lambda x: np.where(((x > 0.2) & (x < 0.3)) | ((x > 0.7) & (x < 0.8)), 5.0, 0.0)
        )
        assert w2_1d(blocks, moved) == pytest.approx(0.1, abs=1e-12)

    def test_discrete_two_points(self):
        cost = np.array([[0.0, 1.0], [1.0, 0.0]])
        assert w2_discrete([0.5, 0.5], [0.5, 0.5], cost) == pytest.approx(0.0)
        assert w2_discrete([1.0, 0.0], [0.0, 1.0], cost) == pytest.approx(1.0)

    @pytest.mark.parametrize(
        "mu, nu, cost",
        [
            ([0.5, 0.6], [0.5, 0.5], np.zeros((2, 2))),
            ([0.5, 0.5], [0.5, 0.5], np.zeros((3, 2))),
            ([0.5, 0.5], [0.5, 0.5], -np.ones((2, 2))),
        ],
    )
    def test_discrete_rejects(self, mu, nu, cost):
        with pytest.raises(InputError):
            w2_discrete(mu, nu, cost)

    def test_oracle_agrees(self, p0, unit_grid):
        """Exact 1-D quantile formula against the network simplex on cell atoms."""
        uniform = DensityField.uniform(unit_grid)
        assert abs(w2_1d(p0, uniform) - w2_grid(p0, uniform)) <= 1e-3

    def test_rectangle(self):
        grid = Grid.rectangle([(0.0, 1.0), (0.0, 1.0)], [10, 10])
        p = DensityField.from_function(grid, lambda x, y: 1.0 + 0.5 * np.cos(np.pi * x))
        assert w2_grid(p, p) == pytest.approx(0.0, abs=1e-12)
        with pytest.raises(DimensionError):
            w2_1d(p, p)

    def test_mass_checked(self, unit_grid):
        heavy = DensityField(grid=unit_grid, values=np.full(200, 2.0))
        with pytest.raises(InputError):
            w2_1d(heavy, DensityField.uniform(unit_grid))


class TestPlan:
    def test_monotone_and_pushes_forward(self, p0, unit_grid):
        plan = build_plan(p0, DensityField.uniform(unit_grid))
        assert np.all(np.diff(plan.map_values) >= 0)
        assert plan.w2 == pytest.approx(w2_1d(p0, DensityField.uniform(unit_grid)))

    def test_interpolation_endpoints(self, p0, unit_grid):
        uniform = DensityField.uniform(unit_grid)
        plan = build_plan(p0, uniform)
        np.testing.assert_allclose(displacement_interpolation(plan, 0.0).values, p0.values, atol=1e-8)
        np.testing.assert_allclose(displacement_interpolation(plan, 1.0).values, uniform.values, atol=1e-8)
        for t in (0.3, 0.7):
            assert displacement_interpolation(plan, t).mass == pytest.approx(1.0, abs=1e-8)
        with pytest.raises(DomainError):
            displacement_interpolation(plan, 1.5)

    def test_geodesic(self, p0, unit_grid):
        plan = build_plan(p0, DensityField.uniform(unit_grid))
        assert geodesic_check(plan)["max_abs_error"] <= 1e-3

    def test_displacement_rate(self, p0, unit_grid, pm2):
        rate = displacement_rate_check(build_plan(p0, DensityField.uniform(unit_grid)), pm2)
        assert rate["rel_error"] <= 0.02

    def test_convexity(self, p0, unit_grid, pm2):
        result = displacement_convexity(build_plan(p0, DensityField.uniform(unit_grid)), pm2)
        assert result["min_second_difference"] >= -1e-4


class TestSlopes:
    def test_metric_speed(self, short_run, pm2):
        report = curve_metric_slope(short_run, pm2, None, 0.0)
        assert report.spacings[-1] == pytest.approx(1e-4)
        assert report.finest_rel_error <= 0.02

    def test_perturbed_speed_from_uniform(self, coarse_grid, pm2, make_run):
        """grad h vanishes at p = 1, so the speed is ||grad beta||_L2 = 0.1 pi / sqrt(2)."""
        beta = cosine_potential(coarse_grid, 0.1, 1)
        run = make_run(DensityField.uniform(coarse_grid), pm2, beta, t_end=2e-3)
        report = curve_metric_slope(run, pm2, beta, 0.0)
        assert report.analytic_slope == pytest.approx(0.1 * np.pi / np.sqrt(2), rel=1e-9)
        assert report.finest_rel_error <= 0.02

    def test_entropy_slopes(self, short_run, pm2, make_run):
        p_t0 = short_run.snapshots[0]
        perturbed = []
        for beta in (
            cosine_potential(p_t0.grid, 0.1, 1),
            cosine_potential(p_t0.grid, 0.1, 2),
            SampledPotential.collinear(p_t0, pm2, 0.5),
        ):
            perturbed.append((beta, make_run(p_t0, pm2, beta, t_end=2e-3)))
        report = entropy_slope_comparison(short_run, perturbed, pm2, 0.0)
        fw = report.entropy_slope_unperturbed
        for label, slope in report.entropy_slope_perturbed.items():
            assert fw <= slope + 1e-8, label
        assert report.entropy_slope_perturbed["collinear(0.5)"] == pytest.approx(fw, abs=1e-6)
        assert report.entropy_slope_fd_unperturbed == pytest.approx(fw, rel=0.03)

    def test_singular_direction(self, unit_grid, pm2, make_run):
        """At the uniform density a collinear potential is flat."""
        uniform = DensityField.uniform(unit_grid)
        run = make_run(uniform, pm2, t_end=2e-3)
        beta = SampledPotential.collinear(uniform, pm2, 0.5)
        with pytest.raises(SingularDirectionError):
            entropy_slope_comparison(run, [(beta, make_run(uniform, pm2, beta, t_end=2e-3))], pm2, 0.0)


class TestHwi:
    def test_cosine_against_uniform(self, p0, unit_grid, pm2):
        result = hwi_check(p0, DensityField.uniform(unit_grid), pm2)
        assert result.holds
        assert result.lhs <= result.rhs + result.tol
        assert result.warnings

    def test_random_pairs_share_boundary_values(self, unit_grid):
        for rho0, rho1 in random_hwi_pairs(unit_grid, 5, 42):
            assert rho0.mass == pytest.approx(1.0, abs=1e-12)
            assert abs(rho0.values[0] - rho1.values[0]) <= 1e-6
            assert rho0.min > 0

    def test_sweep(self, unit_grid, pm2):
        results = hwi_sweep(unit_grid, pm2, 20, 42, n_workers=4)
        assert len(results) == 20
        assert all(r.holds and not r.warnings for r in results)

    def test_sweep_reproducible(self, unit_grid, pm2):
        first = [r.lhs for r in hwi_sweep(unit_grid, pm2, 3, 1)]
        second = [r.lhs for r in hwi_sweep(unit_grid, pm2, 3, 1, n_workers=3)]
        assert first == second


class TestFlow:
    def test_flow_map_pushes_forward(self, short_run, pm2):
        report = velocity_and_flow_check(short_run, pm2, None, 0.0, 1e-3)
        assert report.monotone
        assert report.l1_error <= 5e-3

    def test_halving_the_span_shrinks_the_error(self, p0, pm2, make_run):
        run = make_run(p0, pm2, t_end=1e-3)
        full = velocity_and_flow_check(run, pm2, None, 0.0, 1e-3)
        half = velocity_and_flow_check(run, pm2, None, 0.0, 5e-4)
        assert full.l1_error > 0.0
        assert full.l1_error / half.l1_error >= 1.5

    def test_interval_checked(self, short_run, pm2):
        with pytest.raises(InputError):
            velocity_and_flow_check(short_run, pm2, None, 0.0, 1.0)
