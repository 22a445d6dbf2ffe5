"""
Tests de monitores secuenciales, bayesianos y replay de checkpoints
"""

import math

import numpy as np
import pytest

from demlab.cli.io import pair_experiments, read_checkpoint_csv
from demlab.core.exceptions import InputValidationError
from demlab.schemas.sequential import ExperimentFinal, Monitor, SprtDecision
from demlab.schemas.testing import SampleSummary
from demlab.services.seqkit_service import seqkit_service

CHECKPOINTS = """experiment_id,variant_id,metric_id,time_index,count_c,mean_c,variance_c
e1,control,revenue,1,100,0.0,1.0
e1,control,revenue,2,200,0.0,1.0
e1,control,revenue,3,400,0.0,1.0
e1,treatment,revenue,1,100,0.6,1.0
e1,treatment,revenue,2,200,0.6,1.0
e1,treatment,revenue,3,400,0.6,1.0
e2,treatment,revenue,3,400,0.0,1.0
e2,control,revenue,1,100,0.0,1.0
e2,control,revenue,2,200,0.0,1.0
e2,control,revenue,3,400,0.0,1.0
e2,treatment,revenue,1,100,0.0,1.0
e2,treatment,revenue,2,200,0.0,1.0
"""


class TestSprt:
    """
    Tests del SPRT de Wald
    """

    @pytest.fixture(autouse=True)
    def setup(self):
        """Setup para cada test"""
        self.state = seqkit_service.sprt_init(0.05, 0.05)

    def test_boundaries(self):
        assert self.state.upper_boundary == pytest.approx(2.9444, abs=1e-4)
        assert self.state.lower_boundary == pytest.approx(-2.9444, abs=1e-4)

    def test_decision_is_absorbing(self):
        state = self.state
        for _ in range(3):
            state = seqkit_service.sprt_step(state, 1.0)
        assert state.decision == SprtDecision.ACCEPT_H1
        assert state.n == 3

        after = seqkit_service.sprt_step(state, -10.0)
        assert after.decision == SprtDecision.ACCEPT_H1
        assert after.log_lr == pytest.approx(3.0)

    def test_lower_boundary(self):
        state = seqkit_service.sprt_step(self.state, -3.0)
        assert state.decision == SprtDecision.ACCEPT_H0

    def test_non_finite_increment(self):
        with pytest.raises(InputValidationError):
            seqkit_service.sprt_step(self.state, float("nan"))

    def test_simulated_error_rates(self):
        under_h1 = seqkit_service.simulate_sprt(0.0, 0.5, 1.0, 0.5, streams=500, seed=3)
        under_h0 = seqkit_service.simulate_sprt(0.0, 0.5, 1.0, 0.0, streams=500, seed=4)
        assert under_h1["accept_h1"] > 0.9
        assert under_h0["accept_h0"] > 0.9


class TestMsprt:
    """
    Tests del mSPRT y sus p-valores siempre válidos
    """

    @pytest.fixture(autouse=True)
    def setup(self):
        """Setup para cada test"""
        self.state = seqkit_service.msprt_init(var_sum=2.0, tau2=1.0, alpha=0.05)

    def test_no_difference_keeps_p_at_one(self):
        state = seqkit_service.msprt_update(self.state, 0.0, 0.0, 50)
        assert state.log_lambda < 0
        assert state.p_running == 1.0

    def test_p_running_never_increases(self):
        state = seqkit_service.msprt_update(self.state, 0.0, 0.6, 100)
        assert state.reject
        later = seqkit_service.msprt_update(state, 0.0, 0.0, 200)
        assert seqkit_service.msprt_p_value(later) == state.p_running

    def test_observations_must_be_monotone(self):
        state = seqkit_service.msprt_update(self.state, 0.0, 0.1, 100)
        with pytest.raises(InputValidationError):
            seqkit_service.msprt_update(state, 0.0, 0.1, 99)

    def test_p_values_monotone(self, rng):
        ns = np.arange(1, 301, dtype=float)
        diffs = np.cumsum(rng.normal(0.1, np.sqrt(2.0), size=300)) / ns
        p = seqkit_service.msprt_p_values(diffs, ns, 2.0, 0.5)
        assert np.all(np.diff(p) <= 0)
        assert np.all((p >= 0) & (p <= 1))

    def test_aa_streams_control_type_one_error(self):
        out = seqkit_service.simulate_aa_streams(streams=400, horizon=500, seed=11, tau2=0.5)
        assert out["ever_reject"].mean() <= 0.08
        assert out["monotone"].all()

    @pytest.mark.slow
    def test_aa_streams_full_scale(self):
        out = seqkit_service.simulate_aa_streams(streams=2000, horizon=5000, seed=29, alpha=0.05)
        assert out["ever_reject"].size == 2000
        assert out["ever_reject"].mean() <= 0.05 + 0.01
        assert out["monotone"].all()


class TestBayes:
    """
    Tests del test bayesiano y la estimación de hiperparámetros
    """

    @pytest.fixture(autouse=True)
    def setup(self):
        """Setup para cada test"""
        self.a = SampleSummary(count=1000, mean=0.0, variance=1.0)
        self.null_b = SampleSummary(count=1000, mean=0.0, variance=1.0)
        self.shifted_b = SampleSummary(count=1000, mean=0.5, variance=1.0)

    def test_bf_below_one_at_null(self):
        state = seqkit_service.bayes_update(self.a, self.null_b, v2=1.0, prior_h0=0.5)
        assert state.delta == 0.0
        assert state.bf10 < 1.0
        assert state.posterior_h0 > 0.5

    def test_large_effect_rejects_null(self):
        state = seqkit_service.bayes_update(self.a, self.shifted_b, v2=1.0)
        assert state.bf10 > 1e6
        assert state.posterior_h0 < 1e-6

    def test_wald_root_identity(self):
        state = seqkit_service.bayes_update(self.a, self.shifted_b, v2=1.0)
        assert state.effective_n == pytest.approx(500.0)
        assert state.wald_root == pytest.approx(state.delta * math.sqrt(state.effective_n))

    def test_estimate_hyperparams(self):
        finals = [
            ExperimentFinal(experiment_id="a", delta=0.0, cohens_d=0.0),
            ExperimentFinal(experiment_id="b", delta=2e-3, cohens_d=0.01),
        ]
        hyper = seqkit_service.estimate_hyperparams(finals)
        assert hyper.v2_hat == pytest.approx(2e-6)
        assert hyper.tau2_scale_hat == pytest.approx(5e-5)
        assert not hyper.degenerate

    def test_estimate_hyperparams_needs_two(self):
        with pytest.raises(InputValidationError):
            seqkit_service.estimate_hyperparams([ExperimentFinal(delta=0.0, cohens_d=0.0)])


class TestReplay:
    """
    Tests del replay de checkpoints y la matriz de confusión
    """

    @pytest.fixture(autouse=True)
    def setup(self, write_csv):
        """Setup para cada test"""
        path = write_csv("checkpoints.csv", CHECKPOINTS)
        self.experiments = pair_experiments(read_checkpoint_csv(path))
        self.config = seqkit_service.default_config(tau2=1.0, v2=1.0)

    def test_pairing_uses_control_name(self):
        assert [e.experiment_id for e in self.experiments] == ["e1", "e2"]
        assert all(e.control.variant_id == "control" for e in self.experiments)
        assert [r.time_index for r in self.experiments[1].treatment.rows] == [1, 2, 3]

    def test_fixed_t_decides_at_last_checkpoint(self):
        result = seqkit_service.replay(self.experiments[0], Monitor.FIXED_T, self.config)
        assert [p.decision for p in result.trajectory] == ["continue", "continue", "reject"]
        assert result.stop_index == 3

    def test_msprt_stops_early(self):
        result = seqkit_service.replay(self.experiments[0], Monitor.MSPRT, self.config)
        assert result.reject
        assert result.stop_index == 1

    def test_bayes_stops_early(self):
        result = seqkit_service.replay(self.experiments[0], Monitor.BAYES, self.config)
        assert result.reject
        assert result.trajectory[0].p_or_posterior < 0.05

    def test_null_experiment_not_rejected(self):
        for monitor in Monitor:
            assert not seqkit_service.replay(self.experiments[1], monitor, self.config).reject

    def test_alpha_schedule_length(self):
        config = seqkit_service.default_config(alpha_schedule=[0.01, 0.05])
        with pytest.raises(InputValidationError):
            seqkit_service.replay(self.experiments[0], Monitor.MSPRT, config)

    def test_confusion_matrix(self):
        replays = seqkit_service.replay_all(self.experiments, Monitor.MSPRT, self.config, workers=2)
        references = seqkit_service.replay_all(self.experiments, Monitor.FIXED_T, self.config, workers=2)
        matrix = seqkit_service.confusion_matrix(replays, references)

        assert [r.experiment_id for r in replays] == ["e1", "e2"]
        assert matrix.both_reject == 1
        assert matrix.neither == 1
        assert matrix.monitor_only == 0
        assert matrix.reference_only == 0
        assert matrix.total == 2
        assert matrix.as_table()["monitor_reject"]["reference_reject"] == 1
        assert matrix.as_table()["monitor_not_reject"]["reference_not_reject"] == 1

    def test_final_summary(self):
        final = seqkit_service.final_summary(self.experiments[0])
        assert final.cohens_d == pytest.approx(0.6)
        assert final.delta == pytest.approx(0.6)
