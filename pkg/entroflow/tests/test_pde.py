import numpy as np
import pytest
from scipy.interpolate import CubicSpline

from entroflow.errors import InputError, StepSizeError
from entroflow.grid import DensityField, Grid, gradient_neumann, integrate
from entroflow.pde import cfl_dt, perturbed_window, plan_steps, solve, step_diffusion, step_perturbed
from entroflow.potential import SampledPotential, cosine_potential


class TestUnperturbed:
    def test_mass_conserved(self, short_run):
        for snapshot in short_run.snapshots:
            assert abs(snapshot.mass - 1.0) <= 1e-8

    def test_comparison_principle(self, short_run):
        p0 = short_run.snapshots[0]
        lo, hi = short_run.kappa_report
        assert lo >= p0.min - 1e-10
        assert hi <= p0.max + 1e-10

    def test_flattens(self, short_run):
        first, last = short_run.snapshots[0], short_run.snapshots[-1]
        assert last.max - last.min < first.max - first.min

    def test_uniform_is_stationary(self, unit_grid, pm2, make_run):
        run = make_run(DensityField.uniform(unit_grid), pm2, t_end=1e-3)
        np.testing.assert_array_equal(run.snapshots[-1].values, run.snapshots[0].values)

    def test_snapshot_clock(self, short_run):
        assert len(short_run.snapshots) == 101
        assert short_run.snapshot_spacing == pytest.approx(1e-4)
        assert short_run.horizon == pytest.approx(0.01)

    def test_field_at_interpolates(self, short_run):
        mid = short_run.field_at(0.5e-4)
        expected = 0.5 * (short_run.snapshots[0].values + short_run.snapshots[1].values)
        np.testing.assert_allclose(mid.values, expected)
        with pytest.raises(InputError):
            short_run.field_at(0.02)

    def test_dt_above_cfl(self, p0, pm2):
        assert cfl_dt(p0, pm2) < 1e-5
        with pytest.raises(StepSizeError):
            solve(p0, pm2, None, 0.01, dt=1e-3)
        with pytest.raises(StepSizeError):
            step_diffusion(p0, pm2, 1e-3)

    def test_span_must_be_positive(self, p0, pm2):
        with pytest.raises(InputError):
            solve(p0, pm2, None, 0.0)

    def test_one_step_matches_analytic_laplacian(self, p0, pm2):
        """One step of dp = lap(p^2) from 1 + 0.5 cos(pi x)."""
        dt = 1e-6
        x = p0.grid.centers()
        dp = -0.5 * np.pi * np.sin(np.pi * x)
        d2p = -0.5 * np.pi**2 * np.cos(np.pi * x)
        expected = p0.values + dt * 2 * (dp**2 + p0.values * d2p)
        stepped = step_diffusion(p0, pm2, dt)
        np.testing.assert_allclose(stepped.values, expected, rtol=0, atol=1e-8)
        assert stepped.time_tag == pytest.approx(dt)

    def test_self_convergence(self, cosine, pm2):
        """Halving dx and quartering dt cuts the L1 error at least threefold."""
        t_end = 4e-3

        def final(n, dt):
            grid = Grid.interval(0.0, 1.0, n)
            run = solve(cosine(grid), pm2, None, t_end, dt=dt, snapshot_every=round(t_end / dt))
            return grid, run.snapshots[-1].values

        ref_grid, ref = final(400, 1e-5 / 64)
        reference = CubicSpline(ref_grid.centers(), ref)
        errors = []
        for n, dt in ((50, 1e-5), (100, 1e-5 / 4)):
            grid, values = final(n, dt)
            errors.append(np.mean(np.abs(values - reference(grid.centers()))))
        assert errors[0] / errors[1] >= 3.0

    def test_plan_steps(self):
        dt, every = plan_steps(0.1, 3e-6, 1e-4)
        assert every == 34
        assert dt * every == pytest.approx(1e-4)
        with pytest.raises(InputError):
            plan_steps(0.1, 1e-6, 3e-2)


class TestPerturbed:
    def test_mass_and_window(self, coarse_grid, pm2, make_run, cosine):
        p0 = cosine(coarse_grid)
        beta = cosine_potential(coarse_grid, 0.1, 1)
        run = make_run(p0, pm2, beta)
        assert run.halted is None
        assert run.perturbed
        lo, hi = perturbed_window(p0)
        for snapshot in run.snapshots:
            assert abs(snapshot.mass - 1.0) <= 1e-8
            assert lo <= snapshot.min and snapshot.max <= hi

    def test_zero_potential_matches_unperturbed(self, coarse_grid, pm2, cosine):
        """A flat potential adds no drift flux."""
        p0 = cosine(coarse_grid)
        flat = cosine_potential(coarse_grid, 0.0, 1)
        dt = 0.5 * cfl_dt(p0, pm2)
        plain = solve(p0, pm2, None, 20 * dt, dt=dt)
        drifted = solve(p0, pm2, flat, 20 * dt, dt=dt)
        np.testing.assert_array_equal(plain.snapshots[-1].values, drifted.snapshots[-1].values)

    def test_one_step_from_uniform(self, unit_grid, pm2):
        """From p = 1 only the drift moves mass: dp/dt = lap(beta)."""
        beta = cosine_potential(unit_grid, 1.0, 1)
        uniform = DensityField.uniform(unit_grid)
        dt = 1e-6
        stepped = step_perturbed(uniform, pm2, beta, dt)
        discrete = np.diff(beta.face_gradient(unit_grid, 0)) / unit_grid.dx[0]
        np.testing.assert_allclose(stepped.values, 1.0 + dt * discrete, rtol=0, atol=1e-12)
        analytic = -(np.pi**2) * np.cos(np.pi * unit_grid.centers())
        np.testing.assert_allclose((stepped.values - 1.0) / dt, analytic, rtol=0, atol=1e-3)
        assert stepped.mass == pytest.approx(1.0, abs=1e-13)

    def test_step_checks_the_potential(self, unit_grid, pm2):
        beta = cosine_potential(unit_grid, 0.1, 1.5)
        with pytest.raises(InputError):
            step_perturbed(DensityField.uniform(unit_grid), pm2, beta, 1e-6)

    def test_linear_exp_minus_beta_stationary(self, linear, make_run):
        """p ~ exp(-beta) is stationary for the linear kind, to second order in dx."""
        drift = []
        for n in (100, 200):
            grid = Grid.interval(0.0, 1.0, n)
            beta = cosine_potential(grid, 0.1, 1)
            weights = np.exp(-beta.cell_values(grid))
            p = DensityField(grid=grid, values=weights / integrate(weights, grid))
            run = make_run(p, linear, beta, t_end=0.01, interval=0.01)
            drift.append(float(np.max(np.abs(run.snapshots[-1].values - p.values))))
            assert drift[-1] <= grid.dx[0] ** 2
        assert drift[0] / drift[1] >= 3.0

    def test_window(self):
        grid = Grid.interval(0.0, 1.0, 10)
        p = DensityField(grid=grid, values=np.linspace(0.5, 1.5, 10) / np.mean(np.linspace(0.5, 1.5, 10)))
        lo, hi = perturbed_window(p)
        kappa = max(p.max, 1 / p.min)
        assert lo == pytest.approx(1 / (2 * kappa))
        assert hi == pytest.approx(kappa + 1 / (2 * kappa))


class TestPotential:
    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_integer_wavenumbers_valid(self, unit_grid, k):
        cosine_potential(unit_grid, 0.1, k).validate(unit_grid)

    def test_half_integer_wavenumber_rejected(self, unit_grid):
        with pytest.raises(InputError):
            cosine_potential(unit_grid, 0.1, 1.5).validate(unit_grid)

    def test_rectangle_potential_valid(self):
        grid = Grid.rectangle([(0.0, 1.0), (0.0, 2.0)], [20, 20])
        beta = cosine_potential(grid, 0.1, 1)
        beta.validate(grid)
        assert beta.cell_gradient(grid).shape == (2, 20, 20)

    def test_face_gradient_zero_on_walls(self, unit_grid):
        faces = cosine_potential(unit_grid, 0.1, 1).face_gradient(unit_grid, 0)
        assert faces[0] == 0.0 and faces[-1] == 0.0

    def test_collinear(self, p0, pm2):
        beta = SampledPotential.collinear(p0, pm2, 0.5)
        expected = 0.5 * gradient_neumann(pm2.h(p0.values), p0.grid)
        np.testing.assert_allclose(beta.cell_gradient(p0.grid), expected)
        assert beta.label == "collinear(0.5)"

    def test_sampled_on_foreign_grid(self, p0, pm2):
        beta = SampledPotential.collinear(p0, pm2, 0.5)
        with pytest.raises(InputError):
            beta.cell_gradient(Grid.interval(0.0, 1.0, 50))
