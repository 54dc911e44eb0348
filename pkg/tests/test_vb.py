from __future__ import annotations

import numpy as np
import pytest

from gvp.models import GarchModel, GaussianMeanModel
from gvp.scoring import ScoringRule
from gvp.vb import (
    AdadeltaState,
    CalibrationError,
    VariationalParams,
    VbConfig,
    adadelta_update,
    calibrate,
    draw_theta,
    elbo_gradient_estimate,
    grad_log_q,
    sample_variational,
)


@pytest.fixture(scope="module")
def conjugate():
    y = np.random.default_rng(7).normal(0.8, 1.0, 200)
    return GaussianMeanModel(sigma=1.0, prior_mean=0.0, prior_sd=10.0), y


class TestVariationalFamily:
    def test_reparameterisation(self):
        lam = VariationalParams([1.0, -2.0], [0.5, 2.0])
        np.testing.assert_allclose(draw_theta(lam, [1.0, -1.0]), [1.5, -4.0])

    def test_grad_log_q_by_differences(self):
        lam = VariationalParams([0.3, -1.0, 2.0], [0.7, 1.2, 0.4])
        th = np.array([0.1, 0.0, 2.5])
        h = 1e-6
        num = [(lam.log_q(th + h * e) - lam.log_q(th - h * e)) / (2 * h) for e in np.eye(3)]
        np.testing.assert_allclose(grad_log_q(lam, th), num, rtol=1e-7)

    def test_grad_log_q_rejects_zero_scale(self):
        with pytest.raises(ValueError):
            grad_log_q(VariationalParams([0.0], [0.0]), [0.1])

    def test_flat_round_trip(self):
        lam = VariationalParams([1.0, 2.0], [0.1, 0.2])
        back = VariationalParams.from_flat(lam.flat())
        np.testing.assert_array_equal(back.mu, lam.mu)
        np.testing.assert_array_equal(back.d, lam.d)

    def test_sample_moments(self):
        lam = VariationalParams([1.0, -3.0], [0.5, 2.0])
        draws = sample_variational(lam, 100_000, seed=1)
        np.testing.assert_allclose(draws.mean(axis=0), lam.mu, atol=0.02)
        np.testing.assert_allclose(draws.std(axis=0), lam.sd, rtol=0.01)


class TestAdadelta:
    def test_first_step(self):
        g = np.array([2.0, -0.5])
        step, state = adadelta_update(AdadeltaState.zeros(2), g)
        rho, eps = 0.95, 1e-6
        expected = np.sqrt(eps / (g * g * (1 - rho) + eps)) * g
        np.testing.assert_allclose(step, expected, rtol=1e-14)
        np.testing.assert_allclose(state.accum_grad_sq, (1 - rho) * g * g)

    def test_non_finite_gradient_is_skipped(self):
        s0 = AdadeltaState.zeros(2)
        step, s1 = adadelta_update(s0, [np.nan, 1.0])
        assert np.all(step == 0) and s1 is s0

    def test_bad_hyperparameters(self):
        with pytest.raises(ValueError):
            AdadeltaState.zeros(2, rho=1.0)


class TestElboGradient:
    def test_matches_differences_of_fixed_draw(self, conjugate):
        model, y = conjugate
        rule = ScoringRule.parse("LS")
        lam = VariationalParams([0.5], [0.3])
        eps = np.array([0.7])
        g, _, _ = elbo_gradient_estimate(lam, model, rule, y, eps)

        def target(flat):
            th = draw_theta(VariationalParams.from_flat(flat), eps)
            return model.score_terms(rule, th, y).sum() + model.log_prior(th)

        h = 1e-6
        base = lam.flat()
        num = np.array([(target(base + h * e) - target(base - h * e)) / (2 * h) for e in np.eye(2)])
        # the -log q term contributes eps/d per unit of the reparameterised direction
        num += np.array([eps[0] / 0.3, eps[0] ** 2 / 0.3])
        np.testing.assert_allclose(g, num, rtol=1e-5)

    def test_entropy_term_averages_to_its_gradient(self):
        lam = VariationalParams([0.5], [0.3])
        eps = np.random.default_rng(0).standard_normal(200_000)
        extra = np.mean(np.c_[eps / 0.3, eps ** 2 / 0.3], axis=0)
        np.testing.assert_allclose(extra, [0.0, 1 / 0.3], atol=0.03)


class TestCalibrate:
    def test_conjugate_posterior(self, conjugate):
        model, y = conjugate
        res = calibrate(model, ScoringRule.parse("LS"), y, VbConfig(iterations=20000, seed=3))
        mean, var = model.exact_posterior(y)
        assert abs(res.lam.mu[0] - mean) <= 2 * np.sqrt(var)
        assert res.lam.sd[0] == pytest.approx(np.sqrt(var), rel=0.5)

    def test_trace_accounting_and_determinism(self, conjugate):
        model, y = conjugate
        cfg = VbConfig(iterations=300, seed=5)
        a = calibrate(model, ScoringRule.parse("CRPS"), y, cfg)
        b = calibrate(model, ScoringRule.parse("CRPS"), y, cfg)
        assert a.elbo_trace.size + a.n_skipped == cfg.iterations
        np.testing.assert_array_equal(a.lam.flat(), b.lam.flat())
        np.testing.assert_array_equal(a.elbo_trace, b.elbo_trace)

    def test_smoothed_trace(self, conjugate):
        model, y = conjugate
        res = calibrate(model, ScoringRule.parse("LS"), y, VbConfig(iterations=100, elbo_monitor_window=10))
        sm = res.smoothed_elbo()
        assert sm.size == 91
        assert sm[0] == pytest.approx(res.elbo_trace[:10].mean())

    def test_degenerate_fits_raise(self):
        y = np.r_[np.zeros(50), 1e200]
        model = GarchModel(sigma0_sq=1e-300)
        lam = VariationalParams([0.0, np.log(1e-300), -30.0, -30.0], [1e-3] * 4)
        with pytest.raises(CalibrationError) as info, np.errstate(all="ignore"):
            calibrate(model, ScoringRule.parse("LS"), y, VbConfig(iterations=50), lam_init=lam)
        assert info.value.n_skipped > 25

    def test_dimension_mismatch(self, conjugate):
        model, y = conjugate
        with pytest.raises(ValueError):
            calibrate(model, ScoringRule.parse("LS"), y, VbConfig(iterations=5),
                      lam_init=VariationalParams([0.0, 0.0], [0.1, 0.1]))

    @pytest.mark.parametrize("kw", [{"iterations": 0}, {"w": 0.0}, {"mc_draws_per_gradient": 0}])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            VbConfig(**kw)
