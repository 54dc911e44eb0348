from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from gvp.predictive import Ensemble, Gaussian, GaussianMixture, QuantileError, kde_predictive, mixture_quantiles


@pytest.fixture
def bimodal():
    return GaussianMixture([0.5, 0.5], [-1.0, 1.0], [1.0, 1.0])


def integrate_pdf(pred):
    lo, hi = pred.support_range(12.0)
    val, _ = integrate.quad(lambda x: float(pred.pdf(x)), lo, hi, points=list(pred.means), limit=500,
                            epsabs=1e-12, epsrel=1e-12)
    return val


class TestGaussianMixture:
    def test_validation(self):
        with pytest.raises(ValueError):
            GaussianMixture([0.5, 0.6], [0, 1], [1, 1])
        with pytest.raises(ValueError):
            GaussianMixture([0.5, 0.5], [0, 1], [1, 0])
        with pytest.raises(ValueError):
            GaussianMixture([1.0], [0.0, 1.0], [1.0])

    def test_single_component_quantile_is_gaussian(self):
        m = GaussianMixture([1.0], [0.3], [4.0])
        assert m.quantile(0.975) == pytest.approx(Gaussian(0.3, 4.0).quantile(0.975), abs=1e-10)

    def test_symmetric_median(self, bimodal):
        assert bimodal.quantile(0.5) == pytest.approx(0.0, abs=1e-10)
        assert bimodal.cdf(bimodal.quantile(0.5)) == pytest.approx(0.5, abs=1e-10)

    def test_integrates_to_one(self, bimodal):
        assert integrate_pdf(bimodal) == pytest.approx(1.0, abs=1e-6)

    def test_cdf_monotone(self):
        g = GaussianMixture([0.1, 0.6, 0.3], [-3.0, 0.0, 4.0], [0.2, 1.0, 0.05])
        grid = np.linspace(-10, 10, 1000)
        assert np.all(np.diff(g.cdf(grid)) >= 0)
        assert g.cdf(-50) == pytest.approx(0.0) and g.cdf(50) == pytest.approx(1.0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 10_000), st.sampled_from([0.025, 0.1, 0.5, 0.9, 0.975]))
    def test_quantile_round_trip(self, K, seed, level):
        rng = np.random.default_rng(seed)
        g = GaussianMixture(rng.dirichlet(np.ones(K)), rng.normal(0, 3, K), rng.uniform(0.01, 4, K))
        assert abs(g.cdf(g.quantile(level)) - level) <= 1e-10

    def test_log_forms_agree(self, bimodal):
        x = np.array([-3.0, 0.2, 2.5])
        np.testing.assert_allclose(bimodal.logcdf(x), np.log(bimodal.cdf(x)), rtol=1e-12)
        np.testing.assert_allclose(bimodal.logsf(x), np.log(bimodal.sf(x)), rtol=1e-12)

    def test_rejects_bad_level(self, bimodal):
        with pytest.raises(ValueError):
            bimodal.quantile(1.0)

    def test_malformed_input_cannot_be_bracketed(self):
        with pytest.raises(QuantileError):
            mixture_quantiles(np.array([[0.2, 0.2]]), np.array([[0.0, 1.0]]), np.array([[1.0, 1.0]]), 0.9)


class TestEnsemble:
    @pytest.fixture
    def members(self):
        return [Gaussian(0.0, 1.0), GaussianMixture([0.3, 0.7], [1.0, -2.0], [0.5, 2.0]), Gaussian(3.0, 0.2)]

    def test_cdf_is_member_average(self, members):
        ens = Ensemble.from_members(members)
        grid = np.linspace(-6, 6, 50)
        avg = np.mean([m.cdf(grid) for m in members], axis=0)
        np.testing.assert_allclose(ens.cdf(grid), avg, rtol=1e-13, atol=1e-15)
        assert np.all(np.diff(ens.cdf(grid)) >= 0)

    def test_single_member_and_identical_members(self):
        g = Gaussian(0.5, 2.0)
        grid = np.linspace(-4, 4, 9)
        np.testing.assert_allclose(Ensemble.from_members([g]).pdf(grid), g.pdf(grid), rtol=1e-14)
        np.testing.assert_allclose(Ensemble.from_members([g, g, g]).pdf(grid), g.pdf(grid), rtol=1e-14)

    def test_log_score_bounded_by_members(self, members):
        ens = Ensemble.from_members(members)
        for y in (-3.0, 0.0, 2.9):
            vals = [m.logpdf(y) for m in members]
            assert min(vals) <= ens.logpdf(y) <= max(vals)

    def test_members_round_trip(self, members):
        ens = Ensemble.from_arrays(np.array([[0.0, 1.0], [2.0, 3.0]]), np.ones((2, 2)),
                                   np.array([[0.4, 0.6], [0.5, 0.5]]))
        back = ens.members()
        assert len(back) == 2
        np.testing.assert_allclose(back[0].weights, [0.4, 0.6])

    def test_integrates_to_one(self, members):
        assert integrate_pdf(Ensemble.from_members(members)) == pytest.approx(1.0, abs=1e-6)

    def test_empty(self):
        with pytest.raises(ValueError):
            Ensemble.from_members([])


class TestKde:
    def test_normal_quantile(self):
        x = np.random.default_rng(0).standard_normal(5000)
        assert 1.85 <= kde_predictive(x).quantile(0.975) <= 2.10

    def test_degenerate(self):
        with pytest.raises(ValueError, match="zero variance"):
            kde_predictive(np.full(100, 2.0))

    def test_too_few(self):
        with pytest.raises(ValueError):
            kde_predictive(np.arange(10.0))

    def test_integrates_to_one(self):
        k = kde_predictive(np.random.default_rng(1).standard_normal(200))
        lo, hi = k.support_range(12)
        val, _ = integrate.quad(lambda t: float(k.pdf(t)), lo, hi, limit=1000, epsabs=1e-12)
        assert val == pytest.approx(1.0, abs=1e-6)


class TestQuantileJumps:
    def test_near_atomic_component_gives_generalised_inverse(self):
        w, m, sd = np.array([[0.97, 0.03]]), np.array([[0.0, 5.0]]), np.array([[1.0, 1e-300]])
        for level in (0.975, 0.99):
            assert mixture_quantiles(w, m, sd, level)[0] == pytest.approx(5.0, abs=1e-12)
        assert mixture_quantiles(w, m, sd, 0.5)[0] == pytest.approx(GaussianMixture([1.0], [0.0], [1.0]).quantile(0.5 / 0.97))

    def test_newton_two_cycle_falls_back_to_bisection(self):
        # Plain Newton alternates between about 2.099 and 3.083 on this mixture.
        w = np.array([[7.6790314535660154e-01, 5.3647673821075270e-02, 1.7842052834011146e-01,
                       5.5100086973008977e-06, 2.3142473514358636e-05]])
        m = np.array([[-0.11707950825086078, 2.6379405959608615, 1.0780993920642765,
                       5.950945121027211, 1.6841149423648631]])
        sd = np.array([[0.6294984212994555, 0.284176771606976, 0.5037861497210412,
                        0.30090891088345295, 0.7186345990123503]])
        q = mixture_quantiles(w, m, sd, 0.975)[0]
        assert GaussianMixture(w[0], m[0], sd[0] ** 2).cdf(q) == pytest.approx(0.975, abs=1e-10)
