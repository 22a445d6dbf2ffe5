"""
Tests del modelo de ranking bajo menor incertidumbre
"""

import math

import numpy as np
import pytest

from demlab.core.exceptions import InputValidationError
from demlab.schemas.common import build_model
from demlab.schemas.rulu import NoiseLevel, RuluParams, ValueFamily
from demlab.services.rulu_service import rulu_service


class TestExpectedValues:
    """
    Tests de E(W), E(D) y la ganancia relativa
    """

    @pytest.fixture(autouse=True)
    def setup(self, case_study_params):
        """Setup para cada test"""
        self.params = case_study_params

    def test_relative_gain_case_study(self):
        assert rulu_service.relative_gain(self.params) == pytest.approx(0.0381, abs=5e-4)
        assert rulu_service.relative_gain(self.params) == pytest.approx(math.sqrt(1.25 / 1.16) - 1, rel=1e-9)

    def test_gain_is_positive_and_consistent(self):
        gain = rulu_service.expected_gain(self.params)
        high = rulu_service.expected_selected_value(self.params, NoiseLevel.HIGH)
        low = rulu_service.expected_selected_value(self.params, NoiseLevel.LOW)
        assert gain > 0
        assert gain == pytest.approx(low - high)

    def test_order_stats_increase_with_rank(self):
        ranks = np.arange(1, 101)
        values = rulu_service.expected_order_stat(ranks, self.params)
        assert np.all(np.diff(values) > 0)
        assert values[49] + values[50] == pytest.approx(0.0, abs=1e-12)

    def test_full_capacity_has_no_gain(self):
        params = self.params.model_copy(update={"capacity": 100})
        moments = rulu_service.gain_variance(params)
        assert moments.expected_gain == pytest.approx(0.0, abs=1e-12)
        assert moments.var_gain == 0.0
        assert rulu_service.relative_gain(params) == 0.0

    def test_invalid_rank(self):
        with pytest.raises(InputValidationError):
            rulu_service.expected_order_stat(0, self.params)
        with pytest.raises(InputValidationError):
            rulu_service.expected_concomitant(101, self.params)

    def test_student_t_has_no_closed_form(self):
        params = self.params.model_copy(update={"value_family": ValueFamily.STUDENT_T, "dof": 5.0})
        with pytest.raises(InputValidationError):
            rulu_service.relative_gain(params)

    def test_params_validation(self):
        with pytest.raises(InputValidationError):
            build_model(RuluParams, n_items=5, capacity=6, var_value=1.0, var_noise_high=1.0, var_noise_low=0.5)
        with pytest.raises(InputValidationError):
            build_model(RuluParams, n_items=5, capacity=2, var_value=1.0, var_noise_high=0.5, var_noise_low=1.0)


class TestGainVariance:
    """
    Tests de Var(D), el ratio de Sharpe y el reporte de valor
    """

    @pytest.fixture(autouse=True)
    def setup(self, case_study_params):
        """Setup para cada test"""
        self.params = case_study_params

    def test_sharpe_ratio(self):
        assert rulu_service.sharpe_ratio(1.0, 0.25) == pytest.approx(2.0)
        assert rulu_service.sharpe_ratio(1.5, 0.25, risk_free=0.5) == pytest.approx(2.0)
        with pytest.raises(InputValidationError):
            rulu_service.sharpe_ratio(1.0, 0.0)

    def test_moments_are_coherent(self):
        moments = rulu_service.gain_variance(self.params)
        assert moments.var_w_high > 0
        assert moments.var_w_low > 0
        assert abs(moments.cov_w) <= math.sqrt(moments.var_w_high * moments.var_w_low) * 1.05
        assert moments.var_gain >= 0

    def test_value_report(self):
        report = rulu_service.value_report(self.params)
        assert report.relative_gain == pytest.approx(0.0381, abs=5e-4)
        if report.moments.var_gain > 0:
            assert report.sharpe_ratio == pytest.approx(
                report.moments.expected_gain / math.sqrt(report.moments.var_gain)
            )

    def test_expected_gain_matches_simulation(self):
        sample = rulu_service.simulate(self.params, 4000, seed=123, workers=1)
        se = sample["gain"].std(ddof=1) / math.sqrt(sample["gain"].size)
        theory = rulu_service.expected_gain(self.params)
        assert sample["gain"].mean() == pytest.approx(theory, abs=max(5 * se, 0.003))

    def test_simulation_is_deterministic(self):
        a = rulu_service.simulate(self.params, 300, seed=9, workers=1)
        b = rulu_service.simulate(self.params, 300, seed=9, workers=2)
        np.testing.assert_array_equal(a["gain"], b["gain"])

    def test_partial_noise_bounds(self):
        with pytest.raises(InputValidationError):
            rulu_service.simulate(self.params, 10, seed=1, partial_noise_fraction=1.5)


class TestRankCoincidence:
    """
    Tests de la matriz de coincidencia de rangos
    """

    @pytest.fixture(autouse=True)
    def setup(self):
        """Setup para cada test"""
        self.params = RuluParams(
            n_items=25, capacity=5, var_value=1.0, var_noise_high=0.5, var_noise_low=0.4
        )

    def test_rows_sum_to_one(self):
        matrix, degenerate = rulu_service.rank_coincidence_matrix(self.params)
        assert matrix.shape == (25, 25)
        fitted = matrix.sum(axis=1) > 0
        assert fitted.sum() == 25 - degenerate
        np.testing.assert_allclose(matrix.sum(axis=1)[fitted], 1.0, atol=1e-9)

    def test_balanced_matrix(self):
        matrix, _ = rulu_service.rank_coincidence_matrix(self.params, balanced=True)
        np.testing.assert_allclose(matrix.sum(axis=1), 1.0, atol=1e-9)
        np.testing.assert_allclose(matrix.sum(axis=0), 1.0, atol=1e-9)

    def test_mass_concentrates_near_diagonal(self):
        matrix, _ = rulu_service.rank_coincidence_matrix(self.params)
        top = matrix[24]
        assert np.argmax(top) >= 20

    def test_taylor_fit(self):
        prob = rulu_service.rank_coincidence_prob(25, 25, self.params, fit_method="taylor")
        assert 0.0 < prob < 1.0
        with pytest.raises(InputValidationError):
            rulu_service.rank_coincidence_prob(25, 25, self.params, fit_method="spline")

    def test_fit_quality_against_simulation(self):
        fitted, _ = rulu_service.rank_coincidence_matrix(self.params)
        empirical = rulu_service.empirical_rank_coincidence(self.params, 20000, seed=5, workers=1)
        np.testing.assert_allclose(empirical.sum(axis=1), 1.0)
        assert rulu_service.mean_kl_divergence(fitted, empirical) <= 0.02

    def test_kl_of_identical_matrices_is_zero(self):
        matrix, _ = rulu_service.rank_coincidence_matrix(self.params, balanced=True)
        assert rulu_service.mean_kl_divergence(matrix, matrix) == pytest.approx(0.0, abs=1e-12)


class TestSweepAndVerify:
    """
    Tests de barridos y de la verificación con parámetros aleatorios
    """

    @pytest.fixture(autouse=True)
    def setup(self, case_study_params):
        """Setup para cada test"""
        self.params = case_study_params

    def test_capacity_sweep_decreases(self):
        points = rulu_service.gain_sweep(self.params, "capacity", [5, 10, 20, 40])
        gains = [p.expected_gain for p in points]
        assert all(a > b for a, b in zip(gains, gains[1:]))
        assert all(p.mc_mean_gain is None for p in points)

    def test_partial_noise_needs_runs(self):
        with pytest.raises(InputValidationError):
            rulu_service.gain_sweep(self.params, "partial_noise", [0.5])
        points = rulu_service.gain_sweep(self.params, "partial_noise", [0.0, 1.0], runs=500, seed=2, workers=1)
        assert points[0].mc_mean_gain == pytest.approx(0.0, abs=0.02)
        assert points[0].expected_gain is None

    def test_unknown_axis(self):
        with pytest.raises(InputValidationError):
            rulu_service.gain_sweep(self.params, "n_items", [10])

    def test_random_params_are_valid(self, rng):
        for _ in range(20):
            params = rulu_service.random_params(rng)
            assert 10 <= params.n_items < 1000
            assert params.capacity <= params.n_items
            assert params.var_noise_low <= params.var_noise_high

    def test_small_verify(self):
        report = rulu_service.verify(
            trials=2, runs=400, resamples=200, seed=17, cov_batches=20, cov_batch_runs=50,
            max_log_n=1.5, workers=1
        )
        assert [q.quantity for q in report.quantities] == ["E(W)", "E(D)", "Var(W)", "Cov(V_I(r),V_J(s))"]
        for quantity in report.quantities:
            assert 0.0 <= quantity.fraction_contained <= 1.0
            assert quantity.rank_shape is None

    @pytest.mark.slow
    def test_calibration_at_scale(self):
        report = rulu_service.verify(trials=40, runs=2000, resamples=500, seed=2024, workers=2)
        fractions = {q.quantity: q.fraction_contained for q in report.quantities}
        assert fractions["E(D)"] >= 0.8
        assert fractions["E(W)"] >= 0.75
