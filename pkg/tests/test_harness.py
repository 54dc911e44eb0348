from __future__ import annotations

import numpy as np
import pytest

from gvp import harness
from gvp.dgp import DgpSpec, GarchGaussian, SvLeverage
from gvp.harness import (
    ExperimentConfig,
    ScoreMatrix,
    average_scores,
    cell_rng,
    coherence_report,
    difference,
    draw_valid,
    estimate_gvp_predictive,
    integrate,
    merging_report,
    rolling_evaluate,
    select_covariates,
    undifference,
)
from gvp.models import GarchModel, GaussianMeanModel
from gvp.predictive import Gaussian
from gvp.scoring import ScoringRule, log_score
from gvp.vb import CalibrationError, VariationalParams, VbConfig, calibrate

RULES7 = ["LS", "CLS10", "CLS20", "CLS80", "CLS90", "CRPS", "MSIS"]
RULES6 = ["LS", "CLS10", "CLS20", "CLS80", "CLS90", "MSIS"]

# SV-with-leverage panel, exact (MCMC) side
PANEL_EXACT = np.array([
    [-0.5633, -0.3752, -0.545, -0.3535, -0.2511, -0.2313, -2.3467],
    [-1.0156, -0.3336, -0.502, -0.834, -0.7302, -0.3659, -3.4207],
    [-0.8055, -0.3355, -0.4969, -0.6282, -0.5259, -0.2861, -2.9853],
    [-0.9357, -0.7514, -0.9463, -0.329, -0.2292, -0.2402, -3.3248],
    [-0.9959, -0.7969, -1.0033, -0.3293, -0.2291, -0.2426, -3.4476],
    [-0.5649, -0.3985, -0.5626, -0.3432, -0.2419, -0.2301, -2.4338],
    [-0.655, -0.3985, -0.6109, -0.3712, -0.2479, -0.2603, -2.2033],
])
# same panel, variational side
PANEL_VB = np.array([
    [-0.5636, -0.3753, -0.5452, -0.3536, -0.2512, -0.2313, -2.3468],
    [-1.0193, -0.3336, -0.5021, -0.8379, -0.7339, -0.3679, -3.447],
    [-0.806, -0.3354, -0.4968, -0.6291, -0.5267, -0.2863, -2.9923],
    [-0.9203, -0.7372, -0.9311, -0.329, -0.2292, -0.2402, -3.3135],
    [-0.9575, -0.7615, -0.9649, -0.3294, -0.2292, -0.2425, -3.4213],
    [-0.5692, -0.4029, -0.5671, -0.3431, -0.2419, -0.23, -2.4312],
    [-0.6552, -0.3986, -0.6111, -0.3713, -0.248, -0.2604, -2.203],
])
# LSTAR mixture table
LSTAR = np.array([
    [-1.253, -0.345, -0.497, -0.452, -0.263, -5.589],
    [-1.445, -0.346, -0.512, -0.555, -0.321, -7.279],
    [-1.445, -0.344, -0.496, -0.589, -0.349, -6.674],
    [-1.333, -0.414, -0.571, -0.450, -0.260, -5.831],
    [-1.330, -0.407, -0.564, -0.451, -0.259, -5.730],
    [-1.410, -0.401, -0.558, -0.474, -0.282, -5.550],
])


def matrix(values, rows, cols=None):
    values = np.asarray(values, dtype=float)
    return ScoreMatrix(list(rows), list(cols or rows), values, 1, np.zeros(values.shape, dtype=int))


class TestCoherence:
    def test_sv_panel_all_diagonal(self):
        rep = coherence_report(matrix(PANEL_EXACT, RULES7))
        assert all(c.diagonal_best for c in rep)
        assert {c.column: c.margin for c in rep}["CLS90"] == pytest.approx(0.0001, abs=1e-12)

    def test_lstar_table(self):
        rep = coherence_report(matrix(LSTAR, RULES6))
        assert sum(c.diagonal_best for c in rep) == 5
        cls10 = rep[1]
        assert not cls10.diagonal_best and cls10.best_row == "CLS20"
        assert cls10.margin == pytest.approx(-0.002, abs=1e-12)

    def test_ties_are_not_diagonal_best(self):
        rep = coherence_report(matrix(np.ones((3, 3)), ["LS", "CRPS", "MSIS"]))
        assert all(not c.diagonal_best and c.margin == 0.0 for c in rep)

    def test_failed_rows_are_ignored(self):
        vals = np.array([[-1.0, -2.0], [np.nan, np.nan]])
        rep = coherence_report(matrix(vals, ["LS", "CRPS"]))
        assert rep[0].diagonal_best and rep[0].margin == np.inf
        assert not rep[1].diagonal_best

    def test_extra_evaluation_columns_skipped(self):
        rep = coherence_report(matrix([[-1.0, -2.0]], ["LS"], ["LS", "CRPS"]))
        assert [c.column for c in rep] == ["LS"]


class TestMerging:
    def test_identical(self):
        m = matrix(PANEL_EXACT, RULES7)
        rep = merging_report(m, m)
        assert rep.max_discrepancy == 0.0 and np.all(rep.differences == 0)

    def test_panel_cells(self):
        rep = merging_report(matrix(PANEL_VB, RULES7), matrix(PANEL_EXACT, RULES7))
        assert rep.differences[0, 0] == pytest.approx(0.0003, abs=1e-12)
        assert rep.differences[4, 0] == pytest.approx(0.0384, abs=1e-12)
        assert rep.max_discrepancy == pytest.approx(0.0384, abs=1e-12)
        assert rep.worst_cell[0] == "CLS90"

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            merging_report(matrix(np.zeros((2, 2)), ["LS", "CRPS"]), matrix(np.zeros((1, 1)), ["LS"]))


class TestDifferencing:
    def test_hand_example(self):
        np.testing.assert_array_equal(difference([1.0, 3.0, 6.0], 1), [2.0, 3.0])
        assert undifference(np.array([4.0]), [1.0, 3.0, 6.0], 1)[0] == 10.0

    def test_identity_at_zero(self):
        s = np.array([1.0, 2.0, 4.0])
        np.testing.assert_array_equal(difference(s, 0), s)
        np.testing.assert_array_equal(undifference(s, [], 0), s)
        np.testing.assert_array_equal(integrate(s, [], 0), s)

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_round_trip(self, d):
        s = np.cumsum(np.random.default_rng(d).standard_normal(30)) ** 2
        np.testing.assert_allclose(integrate(difference(s, d), s[:d], d), s, rtol=1e-12, atol=1e-10)
        # the next level is recovered from its d-th difference
        z_next = difference(s, d)[-1]
        assert undifference(np.array([z_next]), s[:-1], d)[0] == pytest.approx(s[-1], rel=1e-12)

    def test_too_short(self):
        with pytest.raises(ValueError):
            difference([1.0, 2.0], 2)
        with pytest.raises(ValueError):
            undifference(np.zeros(3), [1.0], 2)


class TestDraws:
    def test_single_draw_predictive(self):
        model = GaussianMeanModel(sigma=1.0)
        lam = VariationalParams([0.4], [0.2])
        ens = estimate_gvp_predictive(lam, model, np.zeros(10), M=1, seed=3)
        theta = 0.4 + 0.2 * np.random.default_rng(3).standard_normal()
        assert ens.logpdf(1.0) == pytest.approx(Gaussian(theta, 1.0).logpdf(1.0), rel=1e-12)

    def test_point_mass_collapses_to_plug_in(self):
        y = np.random.default_rng(0).standard_normal(200)
        model = GarchModel.from_data(y)
        theta = model.init_theta(y)
        ens = estimate_gvp_predictive(VariationalParams(theta, np.zeros(4)), model, y, M=50, seed=1)
        plug = model.predictive(theta, y)
        for v in (-1.0, 0.3, 2.0):
            assert ens.logpdf(v) == pytest.approx(plug.logpdf(v), rel=1e-12)

    def test_invalid_draws_are_redrawn(self):
        class Picky(GaussianMeanModel):
            def valid(self, theta):
                return theta[0] > -3.0

        lam = VariationalParams([0.0], [1.0])
        draws, n = draw_valid(Picky(), lam, 100_000, np.random.default_rng(0))
        assert draws.min() > -3.0 and 0 < n < 1000


class TestConfig:
    def test_mixture_rejects_crps(self):
        with pytest.raises(ValueError, match="CRPS"):
            ExperimentConfig(DgpSpec(SvLeverage(), T=100), model="mixture", update_rules=("LS", "CRPS"), n0=50)

    @pytest.mark.parametrize("kw", [{"n0": 100}, {"refit_every": 0}, {"engine": "exact"}, {"model": "arma"},
                                    {"update_rules": ()}])
    def test_validation(self, kw):
        base = {"n0": 50}
        base.update(kw)
        with pytest.raises(ValueError):
            ExperimentConfig(DgpSpec(SvLeverage(), T=100), **base)

    def test_cell_streams(self):
        a = cell_rng(0, "vb/LS").standard_normal(3)
        np.testing.assert_array_equal(a, cell_rng(0, "vb/LS").standard_normal(3))
        assert not np.array_equal(a, cell_rng(0, "vb/CRPS").standard_normal(3))
        assert not np.array_equal(a, cell_rng(1, "vb/LS").standard_normal(3))

    def test_covariate_selection(self):
        x = np.arange(12.0).reshape(4, 3)
        np.testing.assert_array_equal(select_covariates(x, ["x2"]), x[:, [1]])
        np.testing.assert_array_equal(select_covariates(x, [0, 2]), x[:, [0, 2]])
        assert select_covariates(x, ()) is None
        with pytest.raises(ValueError):
            select_covariates(x, ["x4"])

    def test_average_excludes_non_finite(self):
        means, bad = average_scores(np.array([[1.0, -np.inf], [3.0, 2.0]]))
        np.testing.assert_array_equal(means, [2.0, 2.0])
        np.testing.assert_array_equal(bad, [0, 1])


@pytest.fixture(scope="module")
def small():
    cfg = ExperimentConfig(DgpSpec(GarchGaussian(), T=360, seed=2), model="garch",
                           update_rules=("LS", "CRPS"), eval_rules=("LS", "CRPS", "MSIS"), n0=300,
                           refit_every=30, M_predictive=50, engine="both", vb_iterations=300,
                           vb_refit_iterations=50, mcmc_burn_in=300, mcmc_retained=300)
    return cfg, rolling_evaluate(cfg)


class TestRollingEvaluate:
    def test_shapes_and_log(self, small):
        cfg, res = small
        assert set(res) == {"vb", "mcmc"}
        for m in res.values():
            assert m.values.shape == (2, 3) and m.score_log.shape == (2, cfg.H, 3)
            np.testing.assert_allclose(m.score_log.mean(axis=1), m.values, rtol=1e-12)
            assert m.metadata["cells"]["LS"]["n_refits"] == 2

    def test_deterministic(self, small):
        cfg, res = small
        again = rolling_evaluate(cfg)
        for k in res:
            np.testing.assert_array_equal(res[k].values, again[k].values)

    def test_csv_outputs(self, small, tmp_path):
        cfg, res = small
        m = res["vb"]
        m.log_to_csv(tmp_path / "log.csv", cfg.n0)
        m.to_csv(tmp_path / "matrix.csv")
        log = np.genfromtxt(tmp_path / "log.csv", delimiter=",", skip_header=1)[:, 2:]
        np.testing.assert_allclose(log[: cfg.H].mean(axis=0), m.values[0], rtol=1e-12)
        assert (tmp_path / "matrix.csv").read_text().startswith("update_rule,LS,CRPS,MSIS")

    def test_single_fit_is_fixed_predictive_backtest(self):
        rng = np.random.default_rng(4)
        y = 0.5 + rng.standard_normal(220)
        cfg = ExperimentConfig(DgpSpec(SvLeverage(), T=220), model="gaussian", update_rules=("LS",), n0=200,
                               refit_every=220, M_predictive=40, vb_iterations=400)
        m = rolling_evaluate(cfg, data=(y, None))["vb"]
        # replay the cell by hand with the same stream
        model = GaussianMeanModel(1.0)
        stream = cell_rng(0, "vb/LS")
        res = calibrate(model, ScoringRule.parse("LS"), y[:200], VbConfig(iterations=400),
                        VariationalParams.initial(model.init_theta(y[:200])), rng=stream)
        thetas, _ = draw_valid(model, res.lam, 40, stream)
        ens = model.ensemble(thetas, y[:200])
        expected = [log_score(ens, v) for v in y[200:]]
        np.testing.assert_allclose(m.score_log[0, :, 0], expected, rtol=1e-12)

    def test_failed_cell_is_reported(self, monkeypatch):
        def failing(model, rule, *args, **kwargs):
            raise CalibrationError("degenerate", np.zeros(0), 10)

        monkeypatch.setattr(harness, "calibrate", failing)
        cfg = ExperimentConfig(DgpSpec(SvLeverage(), T=70, seed=1), model="garch", update_rules=("LS",), n0=60,
                               refit_every=10, M_predictive=10, vb_iterations=20)
        m = rolling_evaluate(cfg)["vb"]
        assert "CalibrationError" in m.failed["LS"] and np.isnan(m.values).all()

    def test_short_series(self):
        cfg = ExperimentConfig(DgpSpec(SvLeverage(), T=70), n0=60)
        with pytest.raises(ValueError):
            rolling_evaluate(cfg, data=(np.zeros(50), None))
