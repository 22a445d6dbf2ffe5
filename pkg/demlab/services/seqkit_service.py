"""
Servicio de monitores secuenciales y bayesianos
SPRT de Wald, mSPRT de dos muestras con p-valores siempre válidos, test
bayesiano con tamaño de muestra efectivo y replay de checkpoints
"""

import math
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import special, stats

from demlab.core.config import settings
from demlab.core.exceptions import DataIntegrityError, DegenerateSampleError, InputValidationError
from demlab.core.logging import ComputationLogger, get_logger
from demlab.schemas.sequential import (
    BayesState, ConfusionMatrix, ExperimentFinal, ExperimentSeries, Hyperparams,
    Monitor, MsprtState, ReplayConfig, ReplayResult, SprtDecision, SprtState,
    TrajectoryPoint
)
from demlab.schemas.testing import SampleSummary
from demlab.services.simlab_service import concat_blocks, simlab_service
from demlab.services.testkit_service import testkit_service

logger = get_logger(__name__)


class SeqkitService:
    """Servicio de monitoreo secuencial de experimentos"""

    # =========================================================================
    # SPRT DE WALD
    # =========================================================================

    @staticmethod
    def sprt_init(alpha: float, beta: float) -> SprtState:
        return SprtState(alpha=alpha, beta=beta)

    @staticmethod
    def sprt_step(state: SprtState, log_likelihood_ratio_increment: float) -> SprtState:
        """Acumular S_n y decidir con las fronteras log((1-β)/α) y log(β/(1-α))"""
        if not math.isfinite(log_likelihood_ratio_increment):
            raise InputValidationError(
                "log-likelihood ratio increment must be finite",
                details={"increment": log_likelihood_ratio_increment}
            )
        if state.decision != SprtDecision.CONTINUE:
            return state

        log_lr = state.log_lr + log_likelihood_ratio_increment
        decision = SprtDecision.CONTINUE
        if log_lr >= state.upper_boundary:
            decision = SprtDecision.ACCEPT_H1
        elif log_lr <= state.lower_boundary:
            decision = SprtDecision.ACCEPT_H0
        return state.model_copy(update={"log_lr": log_lr, "n": state.n + 1, "decision": decision})

    @staticmethod
    def normal_llr_increment(x, theta0: float, theta1: float, sigma: float):
        """log f₁(x)/f₀(x) para observaciones normales de varianza conocida"""
        if sigma <= 0:
            raise InputValidationError("sigma must be positive", details={"sigma": sigma})
        value = (theta1 - theta0) * (np.asarray(x, dtype=float) - (theta0 + theta1) / 2.0) / sigma ** 2
        return float(value) if np.ndim(value) == 0 else value

    def simulate_sprt(
        self,
        theta0: float,
        theta1: float,
        sigma: float,
        true_theta: float,
        streams: int,
        max_steps: int = 1000,
        alpha: float = 0.05,
        beta: float = 0.05,
        seed: Optional[int] = None,
        workers: Optional[int] = None
    ) -> Dict[str, float]:
        """Frecuencia de cada decisión del SPRT sobre flujos normales simulados"""
        state = SprtState(alpha=alpha, beta=beta)
        upper, lower = state.upper_boundary, state.lower_boundary

        def block(rng: np.random.Generator, size: int) -> Dict[str, np.ndarray]:
            x = true_theta + sigma * rng.standard_normal((size, max_steps))
            path = np.cumsum(self.normal_llr_increment(x, theta0, theta1, sigma), axis=1)
            hit_up = np.where((path >= upper).any(axis=1), (path >= upper).argmax(axis=1), max_steps)
            hit_low = np.where((path <= lower).any(axis=1), (path <= lower).argmax(axis=1), max_steps)
            return {"h1": hit_up < hit_low, "h0": hit_low < hit_up}

        out = concat_blocks(simlab_service.run_blocks(block, streams, seed, workers, name="sprt_streams"))
        accept_h1, accept_h0 = float(out["h1"].mean()), float(out["h0"].mean())
        return {"accept_h1": accept_h1, "accept_h0": accept_h0, "continue": 1.0 - accept_h1 - accept_h0}

    # =========================================================================
    # mSPRT
    # =========================================================================

    @staticmethod
    def msprt_init(
        var_sum: float,
        tau2: Optional[float] = None,
        alpha: Optional[float] = None,
        theta0: float = 0.0
    ) -> MsprtState:
        return MsprtState(
            tau2=tau2 if tau2 is not None else settings.MSPRT_TAU2_SCALE,
            var_sum=var_sum,
            alpha=alpha if alpha is not None else settings.DEFAULT_ALPHA,
            theta0=theta0
        )

    @staticmethod
    def msprt_log_lambda(diff, n, var_sum: float, tau2: float, theta0: float = 0.0):
        """log Λ̃ en forma cerrada para la mezcla normal N(θ0, τ²)"""
        diff = np.asarray(diff, dtype=float)
        n = np.asarray(n, dtype=float)
        grown = var_sum + n * tau2
        return 0.5 * np.log(var_sum / grown) + n ** 2 * tau2 * (diff - theta0) ** 2 / (2.0 * var_sum * grown)

    def msprt_update(
        self,
        state: MsprtState,
        mean_a_n: float,
        mean_b_n: float,
        n: int,
        var_sum: Optional[float] = None,
        tau2: Optional[float] = None
    ) -> MsprtState:
        """
        Nuevo Λ̃ con n pares observados

        var_sum y tau2 admiten estimaciones plug-in que cambian por checkpoint;
        p_running es el mínimo acumulado de 1/Λ̃ y nunca sube
        """
        if n < state.n:
            raise InputValidationError(
                "msprt observations must be monotone in n", details={"previous": state.n, "n": n}
            )
        if n < 1:
            raise InputValidationError("msprt needs at least one paired observation")
        var_sum = state.var_sum if var_sum is None else var_sum
        tau2 = state.tau2 if tau2 is None else tau2
        if var_sum <= 0 or tau2 <= 0:
            raise DegenerateSampleError(
                "degenerate samples: var_sum and tau2 must be positive",
                details={"var_sum": var_sum, "tau2": tau2}
            )

        log_lambda = float(self.msprt_log_lambda(mean_b_n - mean_a_n, n, var_sum, tau2, state.theta0))
        p_running = min(state.p_running, math.exp(min(0.0, -log_lambda)))
        return state.model_copy(update={
            "n": n, "log_lambda": log_lambda, "lambda_": math.exp(min(log_lambda, 700.0)),
            "p_running": p_running, "var_sum": var_sum, "tau2": tau2
        })

    @staticmethod
    def msprt_p_value(state: MsprtState) -> float:
        """p-valor siempre válido vigente: mín(1, 1/Λ̃) acumulado"""
        return state.p_running

    def msprt_p_values(self, diffs, ns, var_sum: float, tau2: float, theta0: float = 0.0) -> np.ndarray:
        """p-valores siempre válidos a lo largo de la última dimensión"""
        log_lambda = self.msprt_log_lambda(diffs, ns, var_sum, tau2, theta0)
        return np.minimum.accumulate(np.exp(np.minimum(0.0, -log_lambda)), axis=-1)

    def simulate_aa_streams(
        self,
        streams: int,
        horizon: int,
        seed: Optional[int] = None,
        alpha: Optional[float] = None,
        tau2: Optional[float] = None,
        variance: float = 1.0,
        workers: Optional[int] = None
    ) -> Dict[str, np.ndarray]:
        """
        Flujos A/A de pares normales: tasa de rechazo alguna vez y p final

        τ² por defecto es MSPRT_TAU2_SCALE por la varianza de cada brazo
        """
        alpha = alpha if alpha is not None else settings.DEFAULT_ALPHA
        tau2 = tau2 if tau2 is not None else settings.MSPRT_TAU2_SCALE * variance
        var_sum = 2.0 * variance
        ns = np.arange(1, horizon + 1, dtype=float)

        def block(rng: np.random.Generator, size: int) -> Dict[str, np.ndarray]:
            pairs = np.sqrt(var_sum) * rng.standard_normal((size, horizon))
            diffs = np.cumsum(pairs, axis=1) / ns
            p = self.msprt_p_values(diffs, ns, var_sum, tau2)
            return {
                "ever_reject": (p < alpha).any(axis=1),
                "final_p": p[:, -1],
                "monotone": (np.diff(p, axis=1) <= 0).all(axis=1),
            }

        out = concat_blocks(simlab_service.run_blocks(block, streams, seed, workers, name="msprt_aa_streams"))
        ComputationLogger.log_operation(
            "simulate_aa_streams", streams=streams, horizon=horizon,
            rejection_rate=float(out["ever_reject"].mean())
        )
        return out

    # =========================================================================
    # TEST BAYESIANO
    # =========================================================================

    @staticmethod
    def bayes_update(
        a: SampleSummary,
        b: SampleSummary,
        theta0: float = 0.0,
        v2: Optional[float] = None,
        prior_h0: Optional[float] = None
    ) -> BayesState:
        """
        Factor de Bayes para el efecto estandarizado δ

        δ ~ N(θ0, 1/E) bajo H0 y N(θ0, V² + 1/E) bajo H1, con E el tamaño
        de muestra efectivo 1/(1/n + 1/m)
        """
        v2 = v2 if v2 is not None else settings.BAYES_V2
        prior_h0 = prior_h0 if prior_h0 is not None else settings.BAYES_PRIOR_H0
        if a.count < 2 or b.count < 2:
            raise InputValidationError("bayes test needs at least 2 observations per group")
        se2 = a.variance / a.count + b.variance / b.count
        if se2 <= 0:
            raise DegenerateSampleError("degenerate samples: zero plug-in variances")

        effective_n = 1.0 / (1.0 / a.count + 1.0 / b.count)
        pooled_sd = math.sqrt(se2 * effective_n)
        diff = b.mean - a.mean
        delta = diff / pooled_sd

        log_bf10 = float(
            stats.norm.logpdf(delta, theta0, math.sqrt(v2 + 1.0 / effective_n))
            - stats.norm.logpdf(delta, theta0, math.sqrt(1.0 / effective_n))
        )
        log_prior_odds = math.log((1.0 - prior_h0) / prior_h0)
        posterior_h0 = float(special.expit(-(log_bf10 + log_prior_odds)))

        return BayesState(
            n=a.count, m=b.count, delta=delta, effective_n=effective_n, v2=v2, prior_h0=prior_h0,
            log_bf10=log_bf10, bf10=math.exp(min(log_bf10, 700.0)), posterior_h0=posterior_h0,
            wald_root=(diff - theta0 * pooled_sd) / math.sqrt(se2)
        )

    @staticmethod
    def estimate_hyperparams(final_states: Sequence[ExperimentFinal]) -> Hyperparams:
        """V² y la escala de τ² como varianzas muestrales de δ y d entre experimentos"""
        if len(final_states) < 2:
            raise InputValidationError(
                "hyperparameter estimation needs at least 2 experiments",
                details={"experiments": len(final_states)}
            )
        deltas = np.array([s.delta for s in final_states])
        ds = np.array([s.cohens_d for s in final_states])
        v2_hat = float(np.var(deltas, ddof=1))
        tau2_hat = float(np.var(ds, ddof=1))
        degenerate = v2_hat == 0.0 or tau2_hat == 0.0
        if degenerate:
            ComputationLogger.log_numerical_warning(
                "estimate_hyperparams", "zero spread across experiments", v2_hat=v2_hat, tau2_scale_hat=tau2_hat
            )
        return Hyperparams(
            experiments=len(final_states), v2_hat=v2_hat, tau2_scale_hat=tau2_hat, degenerate=degenerate
        )

    # =========================================================================
    # REPLAY DE CHECKPOINTS
    # =========================================================================

    @staticmethod
    def default_config(**overrides) -> ReplayConfig:
        values = {
            "alpha": settings.DEFAULT_ALPHA,
            "tau2_scale": settings.MSPRT_TAU2_SCALE,
            "v2": settings.BAYES_V2,
            "prior_h0": settings.BAYES_PRIOR_H0,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return ReplayConfig(**values)

    @staticmethod
    def _joined(series: ExperimentSeries) -> pd.DataFrame:
        """Checkpoints comunes a ambas variantes, ordenados por tiempo"""
        frames = []
        for side, s in (("a", series.control), ("b", series.treatment)):
            frame = pd.DataFrame([row.model_dump() for row in s.rows])
            counts = frame["count_c"].to_numpy()
            bad = np.flatnonzero(np.diff(counts) < 0)
            if bad.size:
                row = frame["source_row"].iloc[bad[0] + 1]
                raise DataIntegrityError(
                    f"cumulative count decreases for variant {s.variant_id}",
                    row=int(row) if pd.notna(row) else None
                )
            frames.append(frame.add_suffix(f"_{side}").rename(columns={f"time_index_{side}": "time_index"}))
        joined = frames[0].merge(frames[1], on="time_index", how="inner").sort_values("time_index")
        if joined.empty:
            raise InputValidationError(
                "control and treatment share no checkpoints",
                details={"experiment_id": series.experiment_id}
            )
        return joined.reset_index(drop=True)

    def replay(
        self,
        series: ExperimentSeries,
        monitor: Monitor,
        config: Optional[ReplayConfig] = None
    ) -> ReplayResult:
        """
        Reproducir un experimento checkpoint a checkpoint

        mSPRT usa n = min(n_a, n_b) pares y varianzas plug-in; el test
        bayesiano compara P(H0|datos) con el umbral; fixed_t solo decide en
        el último checkpoint
        """
        monitor = Monitor(monitor)
        config = config or self.default_config()
        joined = self._joined(series)
        if config.alpha_schedule is not None and len(config.alpha_schedule) != len(joined):
            raise InputValidationError(
                "alpha_schedule needs one alpha per checkpoint",
                details={"checkpoints": len(joined), "schedule": len(config.alpha_schedule)}
            )

        trajectory: List[TrajectoryPoint] = []
        state: Optional[MsprtState] = None
        rejected, stop_index = False, None
        last = len(joined) - 1

        for i, row in joined.iterrows():
            alpha_t = config.alpha_schedule[i] if config.alpha_schedule else config.alpha
            a = self._summary(row, "a")
            b = self._summary(row, "b")
            n, m = int(row["count_c_a"]), int(row["count_c_b"])
            statistic = p_value = None
            decision = "continue"

            if monitor == Monitor.MSPRT:
                pairs = min(n, m)
                var_sum = float(row["variance_c_a"] + row["variance_c_b"])
                if pairs >= 1 and var_sum > 0:
                    tau2 = config.tau2 or config.tau2_scale * float(row["variance_c_a"] or row["variance_c_b"])
                    if state is None:
                        state = MsprtState(tau2=tau2, var_sum=var_sum, alpha=alpha_t, theta0=config.theta0)
                    state = self.msprt_update(state, a.mean, b.mean, pairs, var_sum=var_sum, tau2=tau2)
                    statistic, p_value = state.lambda_, self.msprt_p_value(state)
                    if p_value < alpha_t:
                        decision = "reject"
                else:
                    decision = "insufficient"
            elif monitor == Monitor.BAYES:
                if n >= 2 and m >= 2 and a.variance + b.variance > 0:
                    bayes = self.bayes_update(a, b, config.theta0, config.v2, config.prior_h0)
                    threshold = config.bayes_threshold or alpha_t
                    statistic, p_value = bayes.bf10, bayes.posterior_h0
                    if p_value < threshold:
                        decision = "reject"
                else:
                    decision = "insufficient"
            elif i == last:
                outcome = testkit_service.welch_t_test(
                    a, b, config.theta0, alpha=alpha_t, practical=config.practical
                )
                statistic, p_value = outcome.statistic, outcome.p_value
                decision = "reject" if outcome.reject else "not_reject"

            if decision == "reject" and not rejected:
                rejected, stop_index = True, int(row["time_index"])
            trajectory.append(TrajectoryPoint(
                t=int(row["time_index"]), n=n, m=m, statistic=statistic,
                p_or_posterior=p_value, decision=decision
            ))

        logger.debug(
            "replay_finished", experiment_id=series.experiment_id, monitor=monitor.value,
            reject=rejected, stop_index=stop_index, checkpoints=len(trajectory)
        )
        return ReplayResult(
            experiment_id=series.experiment_id, metric_id=series.metric_id, monitor=monitor,
            trajectory=trajectory, reject=rejected, stop_index=stop_index
        )

    @staticmethod
    def _summary(row: pd.Series, side: str) -> SampleSummary:
        return SampleSummary(
            count=max(1, int(row[f"count_c_{side}"])),
            mean=float(row[f"mean_c_{side}"]),
            variance=float(row[f"variance_c_{side}"])
        )

    def replay_all(
        self,
        experiments: Iterable[ExperimentSeries],
        monitor: Monitor,
        config: Optional[ReplayConfig] = None,
        workers: Optional[int] = None
    ) -> List[ReplayResult]:
        """Replays independientes en paralelo, en el orden de entrada"""
        config = config or self.default_config()
        return list(Parallel(n_jobs=workers or settings.MC_WORKERS, prefer="threads")(
            delayed(self.replay)(series, monitor, config) for series in experiments
        ))

    @staticmethod
    def final_summary(series: ExperimentSeries) -> ExperimentFinal:
        """δ y d de Cohen al último checkpoint común"""
        joined = SeqkitService._joined(series)
        row = joined.iloc[-1]
        a, b = SeqkitService._summary(row, "a"), SeqkitService._summary(row, "b")
        bayes = SeqkitService.bayes_update(a, b)
        return ExperimentFinal(
            experiment_id=series.experiment_id, delta=bayes.delta, cohens_d=testkit_service.cohens_d(a, b)
        )

    @staticmethod
    def confusion_matrix(
        replays: Sequence[ReplayResult],
        references: Sequence[ReplayResult]
    ) -> ConfusionMatrix:
        """Cruce de veredictos por (experimento, métrica) contra la referencia"""
        if not replays:
            raise InputValidationError("no replays to tabulate")
        ref_index = {(r.experiment_id, r.metric_id): r.reject for r in references}
        counts = {"both_reject": 0, "monitor_only": 0, "reference_only": 0, "neither": 0}
        for result in replays:
            key = (result.experiment_id, result.metric_id)
            if key not in ref_index:
                raise InputValidationError(
                    "reference replay missing for experiment",
                    details={"experiment_id": key[0], "metric_id": key[1]}
                )
            ref = ref_index[key]
            if result.reject and ref:
                counts["both_reject"] += 1
            elif result.reject:
                counts["monitor_only"] += 1
            elif ref:
                counts["reference_only"] += 1
            else:
                counts["neither"] += 1
        return ConfusionMatrix(monitor=replays[0].monitor, reference=references[0].monitor, **counts)


# Instancia global del servicio
seqkit_service = SeqkitService()
