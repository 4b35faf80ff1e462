import math

import numpy as np
import pytest

from entroflow.errors import DomainError, InputError
from entroflow.nonlinearity import (
    Kind,
    Nonlinearity,
    diffusion_coeff,
    eval_f,
    eval_fprime,
    eval_h,
    eval_Phi,
    eval_Phi_second,
    eval_pressure,
    eval_pressure_prime,
    eval_pressure_second,
    from_spec,
)


class TestPorousMedium:
    @pytest.mark.parametrize(
        "func, u, expected",
        [
            (eval_f, 2.0, 4.0),
            (eval_fprime, 2.0, 4.0),
            (eval_h, 1.0, 0.0),
            (eval_h, 2.0, 2.0),
            (eval_Phi, 1.0, -1.0),
            (eval_Phi, 0.0, 0.0),
            (eval_pressure, 1.0, -1.0),
            (eval_pressure_prime, 3.0, 1.0),
            (eval_pressure_second, 3.0, 0.0),
            (eval_Phi_second, 0.5, 2.0),
        ],
    )
    def test_closed_forms_m2(self, pm2, func, u, expected):
        assert func(pm2, u) == pytest.approx(expected, abs=1e-14)

    def test_phi_derivative_is_h(self):
        """Phi' = h for a non-integer exponent."""
        nl = Nonlinearity.porous_medium(2.5)
        u = np.linspace(0.2, 3.0, 11)
        eps = 1e-6
        numeric = (nl.Phi(u + eps) - nl.Phi(u - eps)) / (2 * eps)
        np.testing.assert_allclose(numeric, nl.h(u), rtol=1e-7, atol=1e-8)

    def test_phi_m3(self):
        assert eval_Phi(Nonlinearity.porous_medium(3.0), 2.0) == pytest.approx(1.0, abs=1e-14)

    def test_diffusion_vanishes_at_zero(self, pm2):
        assert diffusion_coeff(pm2, 0.0) == 0.0
        assert diffusion_coeff(pm2, 2.0) == pytest.approx(2.0)

    @pytest.mark.parametrize("m", [1.0, 0.5, None])
    def test_exponent_must_exceed_one(self, m):
        with pytest.raises(InputError):
            Nonlinearity(kind=Kind.POROUS_MEDIUM, m=m)


class TestLinear:
    def test_h_is_log(self, linear):
        assert eval_h(linear, math.e) == pytest.approx(1.0)

    def test_phi(self, linear):
        assert eval_Phi(linear, 1.0) == pytest.approx(-1.0)
        assert eval_Phi(linear, 0.0) == 0.0

    def test_constant_diffusion(self, linear):
        np.testing.assert_allclose(diffusion_coeff(linear, np.array([0.1, 5.0])), math.sqrt(2.0))

    def test_pressure_derivatives(self, linear):
        assert eval_pressure_prime(linear, 2.0) == pytest.approx(0.5)
        assert eval_pressure_second(linear, 2.0) == pytest.approx(-0.25)


class TestCustom:
    def test_quadratic_matches_porous_medium(self, pm2):
        """f = u^2 given as callables reproduces the m = 2 closed forms."""
        nl = Nonlinearity.custom(lambda u: u * u, lambda u: 2 * u)
        u = np.array([0.3, 1.0, 1.7])
        np.testing.assert_allclose(nl.h(u), pm2.h(u), atol=1e-9)
        np.testing.assert_allclose(nl.Phi(u), pm2.Phi(u), atol=1e-9)
        np.testing.assert_allclose(nl.pressure_prime(u), pm2.pressure_prime(u), atol=1e-8)

    def test_cubic_h(self):
        """h(u) = 3(u^2 - 1)/2 for f = u^3."""
        nl = Nonlinearity.custom(lambda u: u**3, lambda u: 3 * u**2)
        assert eval_h(nl, 2.0) == pytest.approx(4.5, abs=1e-9)

    def test_f_must_vanish_at_zero(self):
        with pytest.raises(InputError):
            Nonlinearity.custom(lambda u: u + 1.0, lambda u: 1.0)

    def test_non_convex_rejected(self):
        with pytest.raises(InputError):
            Nonlinearity.custom(lambda u: math.sqrt(u), lambda u: 0.5 / math.sqrt(u))


class TestDomain:
    @pytest.mark.parametrize("func", [eval_h, eval_pressure, eval_Phi_second])
    def test_zero_density_rejected(self, pm2, func):
        with pytest.raises(DomainError):
            func(pm2, 0.0)

    def test_negative_density_rejected(self, pm2):
        with pytest.raises(DomainError):
            eval_f(pm2, -0.1)


def test_from_spec():
    assert from_spec({"kind": "porous_medium", "m": 3}).m == 3.0
    assert from_spec({"kind": "linear"}).kind is Kind.LINEAR
    with pytest.raises(InputError):
        from_spec({"kind": "custom"})


def random_states(n=1000, kappa=4.0, seed=0):
    return np.random.default_rng(seed).uniform(1.0 / kappa, kappa, n)


class TestIdentities:
    @pytest.mark.parametrize(
        "nl", [Nonlinearity.porous_medium(2.0), Nonlinearity.porous_medium(2.5), Nonlinearity.linear()]
    )
    def test_closed_forms(self, nl):
        u = random_states()
        np.testing.assert_allclose(nl.pressure(u), nl.h(u) - nl.f(u) / u, rtol=0, atol=1e-8)
        np.testing.assert_allclose(nl.h(u), nl.pressure_prime(u) * u + nl.pressure(u), rtol=0, atol=1e-8)
        np.testing.assert_allclose(
            nl.Phi_second(u), nl.pressure_second(u) * u + 2 * nl.pressure_prime(u), rtol=0, atol=1e-8
        )
        np.testing.assert_allclose(nl.diffusion_coeff(u) ** 2 * u / 2, nl.f(u), rtol=0, atol=1e-8)

    def test_custom_by_central_differences(self):
        nl = Nonlinearity.custom(lambda u: u**3, lambda u: 3 * u**2)
        u = random_states()
        step = 1e-5
        dphi = (nl.pressure(u + step) - nl.pressure(u - step)) / (2 * step)
        d2phi = (nl.pressure_prime(u + step) - nl.pressure_prime(u - step)) / (2 * step)
        np.testing.assert_allclose(nl.pressure(u), nl.h(u) - nl.f(u) / u, rtol=0, atol=1e-5)
        np.testing.assert_allclose(nl.h(u), dphi * u + nl.pressure(u), rtol=0, atol=1e-5)
        np.testing.assert_allclose(nl.Phi_second(u), d2phi * u + 2 * dphi, rtol=0, atol=1e-5)
        np.testing.assert_allclose(nl.diffusion_coeff(u) ** 2 * u / 2, nl.f(u), rtol=0, atol=1e-8)
