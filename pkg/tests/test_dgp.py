from __future__ import annotations

import numpy as np
import pytest
from scipy.signal import lfilter
from scipy.special import ndtr

from gvp.dgp import (
    DGP_KINDS,
    DgpSpec,
    DynRegression,
    GarchGaussian,
    LstarT,
    SvLeverage,
    SvSmoothTransition,
    ar4_stationary_variance,
    ar_is_stationary,
    simulate,
    standardised_t,
)
from gvp.models.garch import GarchParams, garch_filter


class TestYuleWalker:
    def test_white_noise(self):
        assert ar4_stationary_variance((0, 0, 0, 0), 0.2) == pytest.approx(0.2, abs=1e-14)

    def test_ar1_closed_form(self):
        assert ar4_stationary_variance((0.5, 0, 0, 0), 1.0) == pytest.approx(4 / 3, abs=1e-12)

    def test_matches_long_simulation(self):
        alpha, s2 = (0.5, 0.2, 0.15, 0.1), 0.2
        rng = np.random.default_rng(0)
        x = lfilter([1.0], np.r_[1.0, -np.asarray(alpha)], np.sqrt(s2) * rng.standard_normal(1_000_000))
        assert x[10_000:].var() == pytest.approx(ar4_stationary_variance(alpha, s2), rel=0.02)

    def test_non_stationary(self):
        assert not ar_is_stationary((0.6, 0.5, 0, 0))
        with pytest.raises(ValueError):
            ar4_stationary_variance((0.6, 0.5, 0, 0), 1.0)
        with pytest.raises(ValueError):
            DgpSpec(DynRegression(alpha=(0.6, 0.5, 0.0, 0.0)), T=10)


class TestSimulators:
    @pytest.mark.parametrize("kind", sorted(DGP_KINDS))
    def test_seed_determinism(self, kind):
        spec = DgpSpec(DGP_KINDS[kind](), T=300, seed=4)
        a, b = simulate(spec), simulate(spec)
        assert a.y.shape == (300,)
        np.testing.assert_array_equal(a.y, b.y)
        assert not np.array_equal(a.y, simulate(DgpSpec(DGP_KINDS[kind](), T=300, seed=5)).y)

    def test_lstar_noise_free_is_linear(self):
        spec = DgpSpec(LstarT(rho1=0.6, rho2=0.0, sigma_eps=0.0), T=50, burn_in=0)
        y = simulate(spec).y
        np.testing.assert_array_equal(y[1:], 0.6 * y[:-1])

    def test_lstar_linear_recursion(self):
        rng = np.random.default_rng(3)
        y = simulate(DgpSpec(LstarT(rho1=0.6, rho2=0.0), T=400, burn_in=0), rng=rng).y
        eps = np.sqrt(1 / 3) * np.random.default_rng(3).standard_t(3.0, 400)
        np.testing.assert_allclose(y[1:], 0.6 * y[:-1] + eps[1:], atol=1e-12)

    def test_sv_leverage_shock_correlation(self):
        sim = simulate(DgpSpec(SvLeverage(), T=100_000, seed=2))
        assert np.corrcoef(sim.shocks.T)[0, 1] == pytest.approx(-0.70, abs=0.03)

    def test_standardised_t_unit_variance(self):
        z = standardised_t(np.random.default_rng(6), 3.0, 100_000)
        assert z.var() == pytest.approx(1.0, rel=0.05)

    def test_garch_path_reproduced_by_filter(self):
        v = GarchGaussian()
        sim = simulate(DgpSpec(v, T=500, seed=8))
        f = garch_filter(GarchParams(v.mu, v.omega, v.a, v.b), sim.y, sim.sigma2[0], derivatives=False)
        np.testing.assert_allclose(f.sigma2[:-1], sim.sigma2[1:], rtol=1e-12)

    def test_sv_smooth_is_finite(self):
        y = simulate(DgpSpec(SvSmoothTransition(), T=2000, seed=1)).y
        assert np.all(np.isfinite(y)) and y.std() > 0

    def test_dynamic_regression_covariates(self):
        sim = simulate(DgpSpec(DynRegression(), T=20_000, seed=3))
        assert sim.x.shape == (20_000, 3)
        c = np.cov(sim.x[:, :2].T)
        np.testing.assert_allclose(c, [[1.0, 0.5], [0.5, 1.25]], atol=0.05)
        assert sim.x[:, 2].var() == pytest.approx(ar4_stationary_variance((0.5, 0.2, 0.15, 0.1), 0.2), rel=0.1)

    def test_dynamic_regression_coefficients(self):
        v = DynRegression()
        sim = simulate(DgpSpec(v, T=50, seed=3))
        F = ndtr(sim.x[:, 2] / np.sqrt(ar4_stationary_variance(v.alpha, v.sigma2)))
        beta = np.asarray(v.b) + np.outer(F, v.a)
        np.testing.assert_allclose(sim.y, np.sum(sim.x * beta, axis=1), rtol=1e-13)

    @pytest.mark.parametrize("variant", [
        GarchGaussian(a=0.5, b=0.6), SvLeverage(shock_cov=((1.0, 2.0), (2.0, 1.0))), LstarT(nu=2.0),
        SvSmoothTransition(eta_var=0.0), SvLeverage(persistence=1.0)])
    def test_invalid_specs(self, variant):
        with pytest.raises(ValueError):
            DgpSpec(variant, T=10)

    def test_kind_and_lengths(self):
        assert DgpSpec(LstarT(), T=5).kind == "lstar"
        with pytest.raises(ValueError):
            DgpSpec(LstarT(), T=0)
