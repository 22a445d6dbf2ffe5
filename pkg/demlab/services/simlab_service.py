"""
Servicio de maquinaria Monte Carlo
Generación con semillas por bloque, intervalos bootstrap, calibración por
rango percentil y bisección ruidosa para el MDE empírico
"""

import time
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from demlab.core.config import settings
from demlab.core.exceptions import InputValidationError
from demlab.core.logging import ComputationLogger, SimulationLogger, get_logger
from demlab.schemas.common import Alternative, build_model
from demlab.schemas.simulation import (
    BisectionResult, BootstrapInterval, BootstrapStatistic,
    CalibrationResult, McConfig, RankShape
)
from demlab.services import distkit

logger = get_logger(__name__)

# power_fn(theta, samples, rng) -> resultados por muestra (0/1 o reales)
PowerFn = Callable[[float, int, np.random.Generator], np.ndarray]
BlockFn = Callable[[np.random.Generator, int], Any]


def resolve_seed(seed: Optional[int]) -> Optional[int]:
    """La semilla explícita gana sobre DEMLAB_SEED"""
    return seed if seed is not None else settings.DEMLAB_SEED


def child_seeds(seed: Optional[int], count: int) -> List[int]:
    """Semillas enteras independientes derivadas de una semilla raíz"""
    children = np.random.SeedSequence(resolve_seed(seed)).spawn(count)
    return [int(child.generate_state(1, dtype=np.uint64)[0]) for child in children]


def concat_blocks(blocks: Sequence[Dict[str, np.ndarray]]) -> Dict[str, np.ndarray]:
    """Unir resultados por bloque en el orden de los bloques"""
    if not blocks:
        return {}
    return {key: np.concatenate([b[key] for b in blocks]) for key in blocks[0]}


class SimlabService:
    """Servicio compartido de simulación Monte Carlo"""

    def __init__(self):
        self.block_size = settings.MC_BLOCK_SIZE
        self.workers = settings.MC_WORKERS

    def mc_config(
        self,
        seed: Optional[int] = None,
        runs: Optional[int] = None,
        workers: Optional[int] = None,
        resamples: Optional[int] = None
    ) -> McConfig:
        """Configuración de corrida: lo explícito gana sobre las variables de entorno"""
        return build_model(
            McConfig,
            seed=resolve_seed(seed),
            runs=runs or settings.MC_RUNS,
            workers=workers or self.workers,
            bootstrap_resamples=resamples or settings.MC_BOOTSTRAP_RESAMPLES,
            block_size=self.block_size,
        )

    # =========================================================================
    # EJECUCIÓN POR BLOQUES
    # =========================================================================

    def block_sizes(self, runs: int, block_size: Optional[int] = None) -> List[int]:
        if runs < 1:
            raise InputValidationError("runs must be at least 1", details={"runs": runs})
        size = block_size or self.block_size
        full, rest = divmod(runs, size)
        return [size] * full + ([rest] if rest else [])

    def run_blocks(
        self,
        fn: BlockFn,
        runs: int,
        seed: Optional[int] = None,
        workers: Optional[int] = None,
        block_size: Optional[int] = None,
        name: str = "simulation"
    ) -> List[Any]:
        """
        Ejecutar fn(rng, size) sobre bloques de tamaño fijo

        Cada bloque recibe su propio flujo derivado de (seed, índice de bloque),
        así el resultado no depende del número de workers
        """
        sizes = self.block_sizes(runs, block_size)
        seed = resolve_seed(seed)
        children = np.random.SeedSequence(seed).spawn(len(sizes))
        n_jobs = workers or self.workers

        SimulationLogger.log_batch_start(name, runs, seed, n_jobs)
        started = time.perf_counter()

        results = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(fn)(np.random.default_rng(child), size)
            for child, size in zip(children, sizes)
        )

        SimulationLogger.log_batch_finish(name, runs, time.perf_counter() - started, blocks=len(sizes))
        return list(results)

    # =========================================================================
    # BOOTSTRAP
    # =========================================================================

    @staticmethod
    def _statistic(data: np.ndarray, statistic: BootstrapStatistic, axis: int = -1) -> np.ndarray:
        if statistic == BootstrapStatistic.MEAN:
            return data.mean(axis=axis)
        if statistic == BootstrapStatistic.VARIANCE:
            return data.var(axis=axis, ddof=1)
        # covarianza entre las dos columnas: data[..., 0, :] y data[..., 1, :]
        x, y = data[..., 0, :], data[..., 1, :]
        xc = x - x.mean(axis=-1, keepdims=True)
        yc = y - y.mean(axis=-1, keepdims=True)
        return (xc * yc).sum(axis=-1) / (x.shape[-1] - 1)

    def bootstrap_distribution(
        self,
        samples,
        statistic: BootstrapStatistic = BootstrapStatistic.MEAN,
        resamples: Optional[int] = None,
        seed: Optional[int] = None,
        chunk: int = 200
    ) -> Tuple[float, np.ndarray, bool]:
        """
        Estadístico muestral, sus valores remuestreados y si la muestra es constante

        Para la covarianza samples debe tener forma (n, 2)
        """
        statistic = BootstrapStatistic(statistic)
        resamples = resamples or settings.MC_BOOTSTRAP_RESAMPLES
        if resamples < 100:
            raise InputValidationError("bootstrap needs at least 100 resamples", details={"resamples": resamples})

        data = np.asarray(samples, dtype=float)
        if statistic == BootstrapStatistic.COVARIANCE:
            if data.ndim != 2 or data.shape[1] != 2:
                raise InputValidationError("covariance bootstrap needs paired samples of shape (n, 2)")
            data = data.T
        elif data.ndim != 1:
            raise InputValidationError("bootstrap samples must be one-dimensional")

        n = data.shape[-1]
        if n < 2:
            raise InputValidationError("bootstrap needs at least 2 samples", details={"samples": int(n)})

        estimate = float(self._statistic(data, statistic))
        if np.all(np.ptp(data, axis=-1) == 0):
            return estimate, np.full(resamples, estimate), True

        rng = np.random.default_rng(resolve_seed(seed))
        values = np.empty(resamples)
        for start in range(0, resamples, chunk):
            stop = min(start + chunk, resamples)
            idx = rng.integers(0, n, size=(stop - start, n))
            # (remuestreos, 2, n) para la covarianza; (remuestreos, n) en otro caso
            resampled = data[:, idx].swapaxes(0, 1) if data.ndim == 2 else data[idx]
            values[start:stop] = self._statistic(resampled, statistic)
        return estimate, values, False

    def bootstrap_ci(
        self,
        samples,
        statistic: BootstrapStatistic = BootstrapStatistic.MEAN,
        resamples: Optional[int] = None,
        alpha: float = 0.05,
        seed: Optional[int] = None
    ) -> BootstrapInterval:
        """Intervalo percentil centrado del estadístico sobre remuestreos"""
        statistic = BootstrapStatistic(statistic)
        estimate, values, degenerate = self.bootstrap_distribution(samples, statistic, resamples, seed)
        if degenerate:
            return BootstrapInterval(
                statistic=statistic, estimate=estimate, low=estimate, high=estimate,
                resamples=values.size, degenerate=True
            )
        low, high = np.quantile(values, [alpha / 2.0, 1.0 - alpha / 2.0])
        return BootstrapInterval(
            statistic=statistic, estimate=estimate, low=float(low), high=float(high), resamples=values.size
        )

    # =========================================================================
    # CALIBRACIÓN POR RANGO PERCENTIL
    # =========================================================================

    @staticmethod
    def percentile_rank(theoretical: float, empirical_samples, min_samples: int = 100) -> float:
        """Fracción de muestras empíricas por debajo del valor teórico"""
        samples = np.asarray(empirical_samples, dtype=float)
        if samples.size < min_samples:
            raise InputValidationError(
                f"percentile rank needs at least {min_samples} samples",
                details={"samples": int(samples.size)}
            )
        return float(np.mean(samples < theoretical))

    def calibration_histogram(self, ranks, bins: int = 10, alpha: float = 0.01) -> CalibrationResult:
        """
        Prueba de uniformidad del histograma de rangos

        Una forma de U (exceso en los extremos) indica intervalos empíricos
        demasiado estrechos y se reporta como under_dispersed
        """
        from demlab.services.testkit_service import testkit_service

        values = np.asarray(ranks, dtype=float)
        if values.size == 0:
            raise InputValidationError("no ranks to calibrate")
        counts, _ = np.histogram(np.clip(values, 0.0, 1.0), bins=bins, range=(0.0, 1.0))
        outcome = testkit_service.chi2_gof(counts.tolist(), [1.0] * bins, alpha=alpha)

        shape = RankShape.UNIFORM
        if outcome.p_value is not None and outcome.p_value < alpha:
            expected = values.size / bins
            edge_excess = (counts[0] + counts[-1]) / 2.0 - expected
            centre = counts[bins // 4: bins - bins // 4]
            centre_excess = centre.mean() - expected
            if edge_excess > 0 and edge_excess > centre_excess:
                shape = RankShape.UNDER_DISPERSED
            elif centre_excess > 0:
                shape = RankShape.OVER_DISPERSED
            else:
                shape = RankShape.NON_UNIFORM

        return CalibrationResult(
            counts=counts.tolist(), statistic=outcome.statistic,
            p_value=float(outcome.p_value), shape=shape
        )

    # =========================================================================
    # BISECCIÓN RUIDOSA
    # =========================================================================

    def noisy_bisection(
        self,
        power_fn: PowerFn,
        target: float,
        bracket: Tuple[float, float],
        budget: Optional[int] = None,
        seed: Optional[int] = None,
        alpha: Optional[float] = None,
        initial_samples: Optional[int] = None,
        max_samples: Optional[int] = None
    ) -> BisectionResult:
        """
        Bisección sobre el signo de (potencia estimada - objetivo)

        En cada punto se duplica el número de muestras hasta que la diferencia
        es significativa al nivel por comparación o se alcanza max_samples;
        sin significancia el punto se trata como por encima del objetivo
        """
        budget = budget or settings.BISECTION_MAX_STEPS
        alpha = alpha or settings.BISECTION_ALPHA
        initial_samples = initial_samples or settings.BISECTION_INITIAL_SAMPLES
        max_samples = max_samples or settings.BISECTION_MAX_SAMPLES
        distkit._check_probability(target, "target")

        lo, hi = float(bracket[0]), float(bracket[1])
        if not lo < hi:
            raise InputValidationError("bracket must satisfy low < high", details={"bracket": [lo, hi]})

        rng = np.random.default_rng(resolve_seed(seed))
        z_equal = float(distkit.normal_quantile(1.0 - alpha / 2.0))
        z_smaller = float(distkit.normal_quantile(alpha))
        evaluations: List[int] = []

        def is_below(theta: float) -> bool:
            outcomes = np.asarray(power_fn(theta, initial_samples, rng), dtype=float)
            while True:
                mean = outcomes.mean()
                se = outcomes.std(ddof=1) / np.sqrt(outcomes.size) if outcomes.size > 1 else 0.0
                if se == 0.0:
                    evaluations.append(int(outcomes.size))
                    return bool(mean < target)
                z = (mean - target) / se
                if abs(z) >= z_equal or outcomes.size >= max_samples:
                    evaluations.append(int(outcomes.size))
                    return bool(z < z_smaller)
                extra = min(outcomes.size, max_samples - outcomes.size)
                outcomes = np.concatenate([outcomes, np.asarray(power_fn(theta, extra, rng), dtype=float)])

        if not is_below(lo) or is_below(hi):
            raise InputValidationError(
                "bracket does not straddle the target power",
                details={"bracket": [lo, hi], "target": target}
            )

        for step in range(budget):
            mid = (lo + hi) / 2.0
            if is_below(mid):
                lo = mid
            else:
                hi = mid
            logger.debug("bisection_step", step=step, low=lo, high=hi, samples=sum(evaluations))

        ComputationLogger.log_operation("noisy_bisection", steps=budget, low=lo, high=hi)
        return BisectionResult(estimate=(lo + hi) / 2.0, low=lo, high=hi, steps=budget, evaluations=evaluations)

    @staticmethod
    def z_test_power_curve(
        se: float,
        alpha: float = 0.05,
        alternative: Alternative = Alternative.TWO_SIDED
    ) -> PowerFn:
        """
        Potencia simulada de un test z con error estándar conocido

        Cada muestra es el indicador de rechazo de un estadístico N(θ/se, 1)
        """
        if se <= 0:
            raise InputValidationError("se must be positive", details={"se": se})
        alternative = Alternative(alternative)
        crit = distkit.z_critical(alpha, alternative)

        def power_fn(theta: float, samples: int, rng: np.random.Generator) -> np.ndarray:
            z = rng.standard_normal(samples) + theta / se
            if alternative == Alternative.TWO_SIDED:
                return (np.abs(z) > crit).astype(float)
            if alternative == Alternative.GREATER:
                return (z > crit).astype(float)
            return (z < -crit).astype(float)

        return power_fn


# Instancia global del servicio
simlab_service = SimlabService()
