"""
Tests de evaluación de setups de experimentos de personalización
"""

import math

import numpy as np
import pytest

from demlab.core.exceptions import InputValidationError, InsufficientGroupError, NoDilutionError
from demlab.schemas.pse import DilutionVerdict, DualControlVerdict, SetupEvaluation, Verdict
from demlab.services.pse_service import pse_service

RANDOM_SCENARIOS = 10_000


def _setup(setup_id, effect, mde):
    return SetupEvaluation(setup_id=setup_id, actual_effect=effect, mde=mde)


class TestSetupEvaluation:
    """
    Tests de efectos reales y MDE por setup
    """

    @pytest.fixture(autouse=True)
    def setup(self, equal_scenario):
        """Setup para cada test"""
        self.scenario = equal_scenario
        self.z = pse_service.z_multiplier(equal_scenario)

    def test_actual_effects(self):
        s1, s2, s3, s4 = pse_service.evaluate_all(self.scenario)
        assert s1.actual_effect == pytest.approx(0.2)
        assert s2.actual_effect == pytest.approx(0.1)
        assert s3.actual_effect == pytest.approx(0.4 / 3)
        assert s4.actual_effect == pytest.approx(0.2)

    def test_setup3_mde(self):
        s3 = pse_service.evaluate_setup(3, self.scenario)
        assert s3.mde == pytest.approx(self.z * math.sqrt(12000.0) / 3000.0)

    def test_dilution_scales_effect(self, rng):
        for _ in range(20):
            scenario = pse_service.random_scenario(rng)
            s2 = pse_service.evaluate_setup(2, scenario)
            s3 = pse_service.evaluate_setup(3, scenario)
            assert s2.actual_effect * scenario.n_total == pytest.approx(s3.actual_effect * scenario.n_qualified)

    def test_dual_control_mde_exceeds_setup3(self, rng):
        for _ in range(RANDOM_SCENARIOS):
            scenario = pse_service.random_scenario(rng)
            assert pse_service.evaluate_setup(4, scenario).mde > pse_service.evaluate_setup(3, scenario).mde

    def test_insufficient_groups(self):
        tiny = self.scenario.model_copy(update={"n3": 1.0})
        with pytest.raises(InsufficientGroupError):
            pse_service.evaluate_setup(1, tiny)
        with pytest.raises(InputValidationError):
            pse_service.evaluate_setup(5, self.scenario)


class TestComparison:
    """
    Tests de los criterios de superioridad
    """

    @pytest.fixture(autouse=True)
    def setup(self):
        """Setup para cada test"""
        self.a = _setup(1, 0.6, 0.5)
        self.b = _setup(2, 0.4, 0.35)

    def test_second_criterion(self):
        result = pse_service.compare(self.a, self.b)
        assert result.verdict == Verdict.A_SUPERIOR
        assert result.criterion == "criterion_2"
        assert not result.likely_error

    def test_first_criterion(self):
        result = pse_service.compare(_setup(1, 0.5, 0.2), _setup(2, 0.4, 0.3))
        assert result.verdict == Verdict.A_SUPERIOR
        assert result.criterion == "criterion_1"

    def test_negative_effects_are_swapped(self):
        result = pse_service.compare(_setup(1, -0.6, 0.5), _setup(2, -0.4, 0.35))
        assert result.verdict == Verdict.A_SUPERIOR

    def test_tie_gives_neither(self):
        result = pse_service.compare(_setup(1, 0.5, 0.4), _setup(2, 0.4, 0.3))
        assert result.verdict == Verdict.NEITHER
        assert result.criterion is None

    def test_opposite_signs_flagged(self):
        result = pse_service.compare(_setup(1, 0.3, 0.2), _setup(2, -0.1, 0.2))
        assert result.likely_error


class TestDilutionAndDualControl:
    """
    Tests de reglas de dilución y del umbral de control dual
    """

    @pytest.fixture(autouse=True)
    def setup(self, equal_scenario):
        """Setup para cada test"""
        self.scenario = equal_scenario

    def test_weak_rule_on_equal_scenario(self):
        advice = pse_service.dilution_advice(self.scenario)
        assert advice.threshold == pytest.approx(6000.0 * 7000.0 / (2.0 * 3000.0 ** 2))
        assert advice.checks["variance_threshold"] is False
        assert advice.checks["weak"] is True
        assert advice.verdict == DilutionVerdict.DILUTED_WORSE
        assert advice.rule == "weak"
        assert advice.agrees_with_direct

    def test_rules_agree_with_direct_comparison(self, rng):
        for _ in range(RANDOM_SCENARIOS):
            advice = pse_service.dilution_advice(pse_service.random_scenario(rng))
            assert advice.agrees_with_direct

    def test_no_dilution_without_group_zero(self):
        empty = self.scenario.model_copy(update={"n0": 0.0})
        with pytest.raises(NoDilutionError):
            pse_service.dilution_advice(empty)
        assert pse_service.advise(empty)["dilution"] is None

    def test_coefficient_and_min_n(self):
        assert pse_service.dual_control_coefficient() == pytest.approx(791.6, rel=0.01)
        assert pse_service.min_n_equalized(0.16, 0.005) == pytest.approx(5.07e6, rel=0.01)
        with pytest.raises(InputValidationError):
            pse_service.min_n_equalized(0.16, 0.0)

    def test_simplified_forms_match(self):
        result = pse_service.dual_control_threshold(self.scenario)
        assert result.rhs_sigma_simplified == pytest.approx(result.rhs)
        assert result.lhs_n_simplified == pytest.approx(result.lhs)
        assert result.min_n_equalized == pytest.approx(pse_service.dual_control_coefficient() / 0.16)
        assert result.mde_s4_exceeds_s3

    def test_dual_control_wins_past_min_n(self):
        small = pse_service.dual_control_threshold(self.scenario)
        sizes = {k: 10000.0 for k in ("n0", "n1", "n2", "n3")}
        large = pse_service.dual_control_threshold(self.scenario.model_copy(update=sizes))

        assert small.verdict == DualControlVerdict.S3_SUPERIOR
        assert large.verdict == DualControlVerdict.S4_SUPERIOR

    def test_no_gain_in_effect(self):
        flat = self.scenario.model_copy(update={"mu_I2": 0.1, "mu_Ipsi": 0.1})
        result = pse_service.dual_control_threshold(flat)
        assert result.verdict == DualControlVerdict.S3_SUPERIOR
        assert result.note is not None

    def test_threshold_matches_direct_comparison(self, rng):
        for _ in range(RANDOM_SCENARIOS):
            scenario = pse_service.random_scenario(rng)
            result = pse_service.dual_control_threshold(scenario)
            s3 = pse_service.evaluate_setup(3, scenario)
            s4 = pse_service.evaluate_setup(4, scenario)

            sign = -1.0 if s3.actual_effect < 0 else 1.0
            gain = sign * (s4.actual_effect - s3.actual_effect)
            assert result.effect_difference == pytest.approx(gain)
            assert (result.verdict == DualControlVerdict.S4_SUPERIOR) == (gain > s4.mde - s3.mde)

    def test_negative_effects_use_mirrored_sign(self):
        update = {"mu_I1": -0.1, "mu_I2": -0.3, "mu_Iphi": -0.1, "mu_Ipsi": -0.3}
        sizes = {k: 10000.0 for k in ("n0", "n1", "n2", "n3")}
        mirrored = pse_service.dual_control_threshold(self.scenario.model_copy(update={**update, **sizes}))
        original = pse_service.dual_control_threshold(self.scenario.model_copy(update=sizes))

        assert mirrored.verdict == original.verdict == DualControlVerdict.S4_SUPERIOR
        assert mirrored.lhs == pytest.approx(original.lhs)
        assert mirrored.effect_difference == pytest.approx(original.effect_difference)

    def test_dual_control_needs_every_group(self):
        with pytest.raises(InsufficientGroupError):
            pse_service.dual_control_threshold(self.scenario.model_copy(update={"n1": 0.0}))


class TestVerification:
    """
    Tests de la verificación por simulación
    """

    @pytest.fixture(autouse=True)
    def setup(self, equal_scenario):
        """Setup para cada test"""
        self.scenario = equal_scenario

    def test_verify_scenario(self):
        report = pse_service.verify_scenario(
            self.scenario, runs=2000, seed=17, resamples=200, mde_setups=(3,), budget=10
        )
        assert [s.setup_id for s in report.setups] == [1, 2, 3, 4]
        for setup in report.setups:
            assert abs(setup.empirical_effect - setup.theoretical_effect) <= 5 * setup.effect_se
        s3 = report.setups[2]
        assert s3.empirical_mde == pytest.approx(s3.theoretical_mde, rel=0.05)
        assert report.setups[0].empirical_mde is None

    def test_random_scenario_ranges(self, rng):
        scenario = pse_service.random_scenario(rng)
        assert 50 <= scenario.n0 <= 5 * 10 ** 3.5
        assert -10 <= scenario.mu_C0 <= 10
        assert 1 <= scenario.var_Ipsi <= 10
        assert np.isfinite(pse_service.evaluate_setup(2, scenario).mde)
