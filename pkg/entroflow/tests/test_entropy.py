import math

import numpy as np
import pytest

from entroflow.entropy import (
    cross_term,
    differential_entropy,
    dissipation_field,
    dissipation_functional,
    entropy_functional,
    entropy_rate_check,
    grad_h,
    mean_dissipation,
    mean_dissipation_check,
    perturbed_dissipation_field,
    verify_identity,
)
from entroflow.errors import DomainError, InputError
from entroflow.grid import DensityField, Grid
from entroflow.potential import cosine_potential


class TestAnchors:
    def test_benchmark_entropy(self, p0, pm2):
        """F(1 + a cos(pi x)) = a^2/2 - 1 for m = 2."""
        assert entropy_functional(p0, pm2) == pytest.approx(-0.875, abs=1e-3)

    def test_benchmark_dissipation(self, p0, pm2):
        """I(1 + a cos(pi x)) = 2 a^2 pi^2 for m = 2."""
        assert dissipation_functional(p0, pm2) == pytest.approx(math.pi**2 / 2, rel=0.01)

    def test_uniform(self, unit_grid, pm2):
        p = DensityField.uniform(unit_grid)
        assert entropy_functional(p, pm2) == pytest.approx(-1.0)
        assert dissipation_functional(p, pm2) == 0.0

    def test_linear_entropy_is_shifted_differential_entropy(self, p0, linear):
        assert entropy_functional(p0, linear) == pytest.approx(differential_entropy(p0) - 1.0, abs=1e-12)

    def test_zero_density_rejected(self, unit_grid, pm2):
        values = np.ones(200)
        values[10] = 0.0
        with pytest.raises(DomainError):
            grad_h(DensityField(grid=unit_grid, values=values), pm2)


class TestIdentity:
    def test_dissipation_identity(self, short_run, pm2):
        report = verify_identity(short_run, pm2)
        assert report.monotone
        assert report.rel_residual[-1] <= 0.01
        assert not report.perturbed

    def test_frame_columns(self, short_run, pm2):
        frame = verify_identity(short_run, pm2).to_frame()
        assert list(frame.columns) == ["t", "lhs", "rhs", "residual", "rel_residual", "entropy", "dissipation"]
        assert len(frame) == len(short_run.snapshots)

    def test_perturbed_identity(self, coarse_grid, pm2, make_run, cosine):
        beta = cosine_potential(coarse_grid, 0.1, 1)
        run = make_run(cosine(coarse_grid), pm2, beta)
        report = verify_identity(run, pm2)
        assert report.perturbed
        assert report.rel_residual[-1] <= 0.02
        assert "cross_term" in report.to_frame()

    def test_flat_potential_reduces_to_unperturbed(self, short_run, pm2, make_run, cosine):
        flat = cosine_potential(short_run.grid, 0.0, 1)
        run = make_run(cosine(short_run.grid), pm2, flat)
        plain = verify_identity(short_run, pm2)
        drifted = verify_identity(run, pm2)
        np.testing.assert_allclose(drifted.rhs, plain.rhs, atol=1e-14)
        np.testing.assert_allclose(drifted.lhs, plain.lhs, atol=1e-14)

    def test_needs_three_snapshots(self, p0, pm2, make_run):
        run = make_run(p0, pm2, t_end=1e-4, interval=1e-4)
        with pytest.raises(InputError):
            verify_identity(run, pm2)

    def test_rate(self, short_run, pm2):
        rate = entropy_rate_check(short_run, pm2)
        assert rate["rel_error"] <= 0.02
        assert rate["expected"] < 0


class TestDissipationField:
    def test_mean_is_minus_dissipation(self, short_run, pm2):
        frame = mean_dissipation_check(short_run, pm2)
        assert frame["rel_error"].max() <= 0.01

    def test_perturbed_mean(self, coarse_grid, pm2, cosine):
        p = cosine(coarse_grid)
        beta = cosine_potential(coarse_grid, 0.1, 1)
        expected = -dissipation_functional(p, pm2) - cross_term(p, pm2, beta)
        assert mean_dissipation(p, pm2, beta) == pytest.approx(expected, rel=0.01)

    def test_cross_term_sign(self, p0, pm2):
        """beta = 0.1 cos(pi x) pushes along grad h of the benchmark density."""
        beta = cosine_potential(p0.grid, 0.1, 1)
        assert cross_term(p0, pm2, beta) > 0

    def test_uniform_density_sees_only_the_potential(self, unit_grid, pm2):
        """At p = 1 the perturbed dissipation is phi'(1) lap(beta)."""
        beta = cosine_potential(unit_grid, 0.1, 1)
        field = perturbed_dissipation_field(DensityField.uniform(unit_grid), pm2, beta)
        expected = pm2.pressure_prime(1.0) * beta.laplacian(unit_grid)
        np.testing.assert_allclose(field, expected, rtol=0, atol=1e-4)

    def test_field_converges(self, cosine, pm2):
        """D(1 + 0.5 cos(pi x)) = lap(p^2) + p lap(p) for m = 2."""
        errors = []
        for n in (100, 200):
            p = cosine(Grid.interval(0.0, 1.0, n))
            x = p.grid.centers()
            dp = -0.5 * np.pi * np.sin(np.pi * x)
            d2p = -0.5 * np.pi**2 * np.cos(np.pi * x)
            exact = 2 * (dp**2 + p.values * d2p) + p.values * d2p
            errors.append(np.max(np.abs(dissipation_field(p, pm2) - exact)))
        assert errors[0] / errors[1] >= 2.0
