"""
Tests de la maquinaria Monte Carlo compartida
"""

import numpy as np
import pytest

from demlab.core.exceptions import InputValidationError
from demlab.schemas.simulation import BootstrapStatistic, RankShape
from demlab.services.simlab_service import child_seeds, concat_blocks, simlab_service


class TestRunBlocks:
    """
    Tests del ejecutor por bloques con semillas derivadas
    """

    @pytest.fixture(autouse=True)
    def setup(self):
        """Setup para cada test"""
        self.fn = lambda rng, size: {"x": rng.standard_normal(size)}

    def test_block_sizes(self):
        assert simlab_service.block_sizes(1200, 500) == [500, 500, 200]
        assert simlab_service.block_sizes(500, 500) == [500]
        with pytest.raises(InputValidationError):
            simlab_service.block_sizes(0)

    def test_result_does_not_depend_on_workers(self):
        single = concat_blocks(simlab_service.run_blocks(self.fn, 2300, seed=7, workers=1, block_size=500))
        many = concat_blocks(simlab_service.run_blocks(self.fn, 2300, seed=7, workers=3, block_size=500))
        assert single["x"].size == 2300
        np.testing.assert_array_equal(single["x"], many["x"])

    def test_different_seeds_differ(self):
        a = concat_blocks(simlab_service.run_blocks(self.fn, 100, seed=1, workers=1))
        b = concat_blocks(simlab_service.run_blocks(self.fn, 100, seed=2, workers=1))
        assert not np.array_equal(a["x"], b["x"])

    def test_child_seeds_are_reproducible(self):
        assert child_seeds(11, 4) == child_seeds(11, 4)
        assert len(set(child_seeds(11, 4))) == 4


class TestBootstrap:
    """
    Tests del intervalo bootstrap percentil
    """

    @pytest.fixture(autouse=True)
    def setup(self, rng):
        """Setup para cada test"""
        self.samples = rng.normal(3.0, 1.0, size=2000)

    def test_mean_interval(self):
        interval = simlab_service.bootstrap_ci(self.samples, BootstrapStatistic.MEAN, 1000, seed=3)
        assert interval.low < interval.estimate < interval.high
        assert interval.contains(float(self.samples.mean()))
        # ancho cercano a 2·1.96·σ/√n
        assert interval.high - interval.low == pytest.approx(2 * 1.96 / np.sqrt(2000), rel=0.15)

    def test_covariance_interval(self, rng):
        x = rng.standard_normal(1000)
        pairs = np.column_stack([x, x + rng.standard_normal(1000)])
        interval = simlab_service.bootstrap_ci(pairs, BootstrapStatistic.COVARIANCE, 500, seed=5)
        assert interval.contains(1.0)

    def test_constant_samples_are_degenerate(self):
        interval = simlab_service.bootstrap_ci(np.full(50, 2.0), BootstrapStatistic.VARIANCE, 200, seed=1)
        assert interval.degenerate
        assert interval.low == interval.high == 0.0

    def test_too_few_resamples(self):
        with pytest.raises(InputValidationError):
            simlab_service.bootstrap_ci(self.samples, resamples=50)


class TestCalibration:
    """
    Tests de rangos percentiles y del histograma de calibración
    """

    @pytest.fixture(autouse=True)
    def setup(self):
        """Setup para cada test"""
        self.uniform_ranks = np.linspace(0.0005, 0.9995, 1000)

    def test_percentile_rank(self):
        samples = np.linspace(-1.0, 1.0, 201)
        assert simlab_service.percentile_rank(0.0, samples) == pytest.approx(100 / 201)
        with pytest.raises(InputValidationError):
            simlab_service.percentile_rank(0.0, samples[:50])

    def test_uniform_ranks(self):
        result = simlab_service.calibration_histogram(self.uniform_ranks)
        assert result.counts == [100] * 10
        assert result.shape == RankShape.UNIFORM

    def test_u_shape_is_under_dispersed(self):
        ranks = np.concatenate([np.full(400, 0.01), np.full(400, 0.99), np.linspace(0.1, 0.9, 200)])
        assert simlab_service.calibration_histogram(ranks).shape == RankShape.UNDER_DISPERSED

    def test_peaked_ranks_are_over_dispersed(self):
        ranks = np.linspace(0.3, 0.7, 1000)
        assert simlab_service.calibration_histogram(ranks).shape == RankShape.OVER_DISPERSED


class TestNoisyBisection:
    """
    Tests de la bisección ruidosa sobre curvas de potencia
    """

    @pytest.fixture(autouse=True)
    def setup(self):
        """Setup para cada test"""
        self.power_fn = simlab_service.z_test_power_curve(se=1.0)
        self.theory = 1.959964 + 0.841621

    def test_finds_mde(self):
        result = simlab_service.noisy_bisection(
            self.power_fn, 0.8, (0.5 * self.theory, 2.0 * self.theory), budget=10, seed=42
        )
        assert result.estimate == pytest.approx(self.theory, rel=0.02)
        assert result.low <= result.estimate <= result.high
        assert len(result.evaluations) >= 12

    def test_bracket_must_straddle_target(self):
        with pytest.raises(InputValidationError):
            simlab_service.noisy_bisection(self.power_fn, 0.8, (4.0, 6.0), budget=3, seed=1)
        with pytest.raises(InputValidationError):
            simlab_service.noisy_bisection(self.power_fn, 0.8, (3.0, 1.0), budget=3, seed=1)

    def test_power_curve_rejects_non_positive_se(self):
        with pytest.raises(InputValidationError):
            simlab_service.z_test_power_curve(se=0.0)
