"""
Servicio del modelo de ranking bajo menor incertidumbre
Momentos teóricos del valor seleccionado con dos niveles de ruido,
probabilidades de coincidencia de rangos, ratio de Sharpe y el simulador
Monte Carlo que los verifica
"""

from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from demlab.core.config import settings
from demlab.core.exceptions import DegenerateFitError, InputValidationError
from demlab.core.logging import ComputationLogger, get_logger
from demlab.schemas.common import build_model
from demlab.schemas.distributions import BetaParams
from demlab.schemas.rulu import (
    NoiseLevel, QuantityCalibration, RankCoincidenceFit, RuluMoments,
    RuluParams, RuluValueReport, RuluVerifyReport, SweepPoint, ValueFamily
)
from demlab.schemas.simulation import BootstrapStatistic
from demlab.services import distkit
from demlab.services.simlab_service import child_seeds, concat_blocks, simlab_service

logger = get_logger(__name__)

FIT_METHODS = ("owen", "taylor")
SWEEP_AXES = ("capacity", "partial_noise", "var_noise_low")


class RuluService:
    """Servicio de valoración de capacidades de medición"""

    # =========================================================================
    # VALIDACIONES
    # =========================================================================

    @staticmethod
    def _require_closed_form(params: RuluParams) -> None:
        """Solo la familia normal tiene momentos en forma cerrada"""
        if params.value_family != ValueFamily.NORMAL:
            raise InputValidationError(
                "closed-form moments need the normal family; use simulate() for student_t",
                details={"value_family": params.value_family.value}
            )

    @staticmethod
    def _require_value_variance(params: RuluParams, operation: str) -> None:
        if params.var_value <= 0:
            raise InputValidationError(
                f"{operation} needs var_value > 0",
                details={"var_value": params.var_value}
            )

    @staticmethod
    def _ranks(r, params: RuluParams) -> np.ndarray:
        arr = np.asarray(r)
        if np.any(arr < 1) or np.any(arr > params.n_items) or np.any(arr != np.floor(arr)):
            raise InputValidationError(
                f"rank must be an integer in [1, {params.n_items}]",
                details={"rank": arr.tolist()}
            )
        return arr.astype(float)

    # =========================================================================
    # CUANTILES AUXILIARES
    # =========================================================================

    @staticmethod
    def _mean_quantile(r: np.ndarray, params: RuluParams) -> np.ndarray:
        """Φ⁻¹((r - c)/(N - 2c + 1)) para el valor esperado de los estadísticos de orden"""
        c = params.quantile_correction
        return np.asarray(distkit.normal_quantile((r - c) / (params.n_items - 2 * c + 1)))

    @staticmethod
    def _order_density(r: np.ndarray, params: RuluParams) -> np.ndarray:
        """φ(Φ⁻¹(r/(N+1))) de la aproximación de David"""
        z = np.asarray(distkit.normal_quantile(r / (params.n_items + 1.0)))
        return np.asarray(distkit.normal_pdf(z))

    @staticmethod
    def _order_coefficient(r: np.ndarray, s: np.ndarray, n: int) -> np.ndarray:
        lo, hi = np.minimum(r, s), np.maximum(r, s)
        return lo * (n - hi + 1) / ((n + 1.0) ** 2 * (n + 2.0))

    @staticmethod
    def _total_variance(params: RuluParams, level: NoiseLevel) -> float:
        return params.var_value + params.noise_variance(level)

    # =========================================================================
    # VALORES ESPERADOS
    # =========================================================================

    def expected_order_stat(self, r, params: RuluParams, noise_level: NoiseLevel = NoiseLevel.HIGH):
        """E(E_(r)) = μ_V + μ_ε + √(σ²_V + σ²_ε)·Φ⁻¹((r-c)/(N-2c+1))"""
        self._require_closed_form(params)
        ranks = self._ranks(r, params)
        total = self._total_variance(params, NoiseLevel(noise_level))
        value = params.mean_value + params.mean_noise + np.sqrt(total) * self._mean_quantile(ranks, params)
        return distkit._as_result(value)

    def expected_concomitant(self, r, params: RuluParams, noise_level: NoiseLevel = NoiseLevel.HIGH):
        """Valor real esperado del elemento en el rango r"""
        self._require_closed_form(params)
        ranks = self._ranks(r, params)
        total = self._total_variance(params, NoiseLevel(noise_level))
        value = params.mean_value + params.var_value / np.sqrt(total) * self._mean_quantile(ranks, params)
        return distkit._as_result(value)

    def expected_selected_value(self, params: RuluParams, noise_level: NoiseLevel = NoiseLevel.HIGH) -> float:
        """E(W): media de los concomitantes esperados de los M mejores rangos"""
        ranks = np.asarray(params.top_ranks())
        return float(np.mean(self.expected_concomitant(ranks, params, noise_level)))

    def expected_gain(self, params: RuluParams) -> float:
        """E(D) = E(W₂) - E(W₁)"""
        return (
            self.expected_selected_value(params, NoiseLevel.LOW)
            - self.expected_selected_value(params, NoiseLevel.HIGH)
        )

    def relative_gain(self, params: RuluParams) -> float:
        """
        Ganancia relativa E(D) / (E(W₁) - μ_V)

        Se reduce a √((σ²_V+σ²_1)/(σ²_V+σ²_2)) - 1 siempre que M < N;
        con M = N todo se selecciona y la ganancia es 0
        """
        self._require_closed_form(params)
        self._require_value_variance(params, "relative_gain")
        baseline = self.expected_selected_value(params, NoiseLevel.HIGH) - params.mean_value
        if params.capacity == params.n_items or baseline == 0.0:
            return 0.0
        return self.expected_gain(params) / baseline

    def expected_leader_value(self, r, params: RuluParams):
        """E(L_I(r)): estimación de bajo ruido del elemento en el rango r con ruido alto"""
        self._require_closed_form(params)
        ranks = self._ranks(r, params)
        total_high = self._total_variance(params, NoiseLevel.HIGH)
        value = (
            params.mean_value + params.mean_noise
            + params.var_value / np.sqrt(total_high) * self._mean_quantile(ranks, params)
        )
        return distkit._as_result(value)

    def leader_value_var(self, r, params: RuluParams):
        """Var(L_I(r)) = Var(V_I(r)) + σ²_2"""
        return distkit._as_result(
            np.asarray(self.concomitant_var(r, params, NoiseLevel.HIGH)) + params.var_noise_low
        )

    # =========================================================================
    # VARIANZAS Y COVARIANZAS
    # =========================================================================

    def order_stat_cov(self, r, s, params: RuluParams, noise_level: NoiseLevel = NoiseLevel.HIGH):
        """Aproximación de primer orden de David para Cov(E_(r), E_(s))"""
        self._require_closed_form(params)
        rr, ss = self._ranks(r, params), self._ranks(s, params)
        total = self._total_variance(params, NoiseLevel(noise_level))
        coef = self._order_coefficient(rr, ss, params.n_items)
        value = coef * total / (self._order_density(rr, params) * self._order_density(ss, params))
        return distkit._as_result(value)

    def order_stat_var(self, r, params: RuluParams, noise_level: NoiseLevel = NoiseLevel.HIGH):
        return self.order_stat_cov(r, r, params, noise_level)

    def concomitant_var(self, r, params: RuluParams, noise_level: NoiseLevel = NoiseLevel.HIGH):
        """Ley de varianza total: σ²_εσ²_V/S + (σ²_V/S)²·Var(E_(r))"""
        level = NoiseLevel(noise_level)
        total = self._total_variance(params, level)
        noise = params.noise_variance(level)
        order_var = np.asarray(self.order_stat_var(r, params, level))
        return distkit._as_result(noise * params.var_value / total + (params.var_value / total) ** 2 * order_var)

    def concomitant_cov(self, r, s, params: RuluParams, noise_level: NoiseLevel = NoiseLevel.HIGH):
        """Cov(V_I(r), V_I(s)); coincide con concomitant_var cuando r = s"""
        level = NoiseLevel(noise_level)
        rr, ss = self._ranks(r, params), self._ranks(s, params)
        total = self._total_variance(params, level)
        value = (params.var_value / total) ** 2 * np.asarray(self.order_stat_cov(rr, ss, params, level))
        value = np.where(rr == ss, np.asarray(self.concomitant_var(rr, params, level)), value)
        return distkit._as_result(value)

    def cross_order_stat_cov(self, r, s, params: RuluParams):
        """Cov(H_(r), L_(s)) a partir de la covarianza de los estadísticos de orden del valor real"""
        self._require_closed_form(params)
        rr, ss = self._ranks(r, params), self._ranks(s, params)
        s1 = self._total_variance(params, NoiseLevel.HIGH)
        s2 = self._total_variance(params, NoiseLevel.LOW)
        coef = self._order_coefficient(rr, ss, params.n_items)
        value_cov = coef * params.var_value / (self._order_density(rr, params) * self._order_density(ss, params))
        return distkit._as_result(params.var_value / np.sqrt(s1 * s2) * value_cov)

    def _same_item_var(self, r, s, params: RuluParams):
        """Var(V) cuando I(r) = J(s), condicionando en H_(r) y L_(s)"""
        v, s1_noise, s2_noise = params.var_value, params.var_noise_high, params.var_noise_low
        denom = v * s1_noise + v * s2_noise + s1_noise * s2_noise
        s1 = self._total_variance(params, NoiseLevel.HIGH)
        var_l = np.asarray(self.order_stat_var(s, params, NoiseLevel.LOW))
        var_h = np.asarray(self.order_stat_var(r, params, NoiseLevel.HIGH))
        return (
            v * s1_noise * s2_noise / denom
            + (v * s1_noise / denom) ** 2 * var_l
            + (v / s1) ** 2 * var_h
        )

    def _different_item_cov(self, r, s, params: RuluParams):
        s1 = self._total_variance(params, NoiseLevel.HIGH)
        s2 = self._total_variance(params, NoiseLevel.LOW)
        return (params.var_value / s1) * (params.var_value / s2) * np.asarray(self.cross_order_stat_cov(r, s, params))

    def concomitant_cross_cov(self, r: int, s: int, params: RuluParams, fit_method: str = "owen") -> float:
        """Cov(V_I(r), V_J(s)) como mezcla ponderada por P(I(r) = J(s))"""
        self._require_value_variance(params, "concomitant_cross_cov")
        prob = self.rank_coincidence_prob(r, s, params, fit_method)
        same = float(self._same_item_var(r, s, params))
        diff = float(self._different_item_cov(r, s, params))
        return prob * same + (1.0 - prob) * diff

    # =========================================================================
    # COINCIDENCIA DE RANGOS
    # =========================================================================

    def fit_rank_coincidence(self, r: int, params: RuluParams, fit_method: str = "owen") -> RankCoincidenceFit:
        """
        Ajuste beta por momentos de la probabilidad de que L_I(r) supere a
        otra estimación de bajo ruido
        """
        self._require_closed_form(params)
        self._require_value_variance(params, "rank_coincidence_prob")
        if fit_method not in FIT_METHODS:
            raise InputValidationError(f"fit_method must be one of {FIT_METHODS}", details={"fit_method": fit_method})
        self._ranks(r, params)

        s2 = self._total_variance(params, NoiseLevel.LOW)
        centre = params.mean_value + params.mean_noise
        mean_leader = float(self.expected_leader_value(r, params))
        var_leader = float(self.leader_value_var(r, params))

        if fit_method == "owen":
            mu_star = (mean_leader - centre) / np.sqrt(s2)
            var_star = var_leader / s2
            h = mu_star / np.sqrt(1.0 + var_star)
            mu_p = float(distkit.normal_cdf(h))
            var_p = mu_p * (1.0 - mu_p) - 2.0 * float(distkit.owens_t(h, 1.0 / np.sqrt(1.0 + 2.0 * var_star)))
        else:
            # Taylor de segundo orden de F_L alrededor de E(L_I(r))
            z = (mean_leader - centre) / np.sqrt(s2)
            density = float(distkit.normal_pdf(z)) / np.sqrt(s2)
            slope = -(mean_leader - centre) / s2 ** 1.5 * float(distkit.normal_pdf(z))
            mu_p = float(distkit.normal_cdf(z)) + 0.5 * slope * var_leader
            var_p = density ** 2 * var_leader + 0.5 * slope ** 2 * var_leader ** 2

        try:
            beta = distkit.fit_beta_moments(mu_p, var_p)
        except DegenerateFitError:
            return RankCoincidenceFit(
                rank=int(r), mean_leader=mean_leader, var_leader=var_leader,
                mu_p=mu_p, var_p=var_p, degenerate=True
            )
        return RankCoincidenceFit(
            rank=int(r), mean_leader=mean_leader, var_leader=var_leader,
            mu_p=mu_p, var_p=var_p, alpha=beta.alpha, beta=beta.beta
        )

    def _coincidence_row(self, fit: RankCoincidenceFit, n_items: int) -> np.ndarray:
        support = np.arange(n_items)
        params = BetaParams(alpha=fit.alpha, beta=fit.beta)
        return np.asarray(distkit.beta_binomial_pmf(support, n_items - 1, params))

    def rank_coincidence_prob(self, r: int, s: int, params: RuluParams, fit_method: str = "owen") -> float:
        """P(I(r) = J(s)) vía la marginal beta-binomial"""
        self._ranks(r, params)
        self._ranks(s, params)
        if params.n_items == 1:
            return 1.0
        fit = self.fit_rank_coincidence(r, params, fit_method)
        if fit.degenerate:
            raise DegenerateFitError(
                "degenerate beta-binomial fit",
                details={"rank": int(r), "mu_p": fit.mu_p, "var_p": fit.var_p}
            )
        return float(distkit.beta_binomial_pmf(int(s) - 1, params.n_items - 1, BetaParams(alpha=fit.alpha, beta=fit.beta)))

    def rank_coincidence_matrix(
        self,
        params: RuluParams,
        balanced: bool = False,
        fit_method: str = "owen",
        ranks: Optional[Sequence[int]] = None
    ) -> Tuple[np.ndarray, int]:
        """
        Matriz de P(I(r) = J(s)) con filas r (ranks o todos) y columnas s = 1..N

        Devuelve también el número de filas con ajuste degenerado; esas filas
        quedan en cero, o uniformes cuando balanced=True. Con balanced=True
        se escala por Sinkhorn para que filas y columnas sumen 1
        """
        n = params.n_items
        rows = list(ranks) if ranks is not None else list(range(1, n + 1))
        if n == 1:
            return np.ones((len(rows), 1)), 0
        if balanced and ranks is not None:
            raise InputValidationError("balanced matrices need every rank")

        matrix = np.zeros((len(rows), n))
        degenerate = 0
        for i, r in enumerate(rows):
            fit = self.fit_rank_coincidence(r, params, fit_method)
            if fit.degenerate:
                degenerate += 1
                ComputationLogger.log_numerical_warning(
                    "rank_coincidence", "degenerate beta-binomial fit", rank=int(r),
                    mu_p=fit.mu_p, var_p=fit.var_p
                )
                if balanced:
                    matrix[i] = 1.0 / n
                continue
            matrix[i] = self._coincidence_row(fit, n)

        if balanced:
            matrix = self._sinkhorn(matrix)
        return matrix, degenerate

    @staticmethod
    def _sinkhorn(matrix: np.ndarray, tol: float = 1e-12, max_iter: int = 10000) -> np.ndarray:
        balanced = matrix.copy()
        for _ in range(max_iter):
            balanced /= balanced.sum(axis=1, keepdims=True)
            balanced /= balanced.sum(axis=0, keepdims=True)
            if np.max(np.abs(balanced.sum(axis=1) - 1.0)) < tol:
                break
        return balanced

    def empirical_rank_coincidence(
        self,
        params: RuluParams,
        runs: int,
        seed: Optional[int] = None,
        workers: Optional[int] = None
    ) -> np.ndarray:
        """Mapa de calor empírico de (rango bajo ruido alto, rango bajo ruido bajo)"""
        n = params.n_items

        def block(rng: np.random.Generator, size: int) -> np.ndarray:
            values, high, low = self._draw_estimates(rng, size, params, params.value_family, params.dof, 1.0)
            rank_h = np.argsort(np.argsort(high, axis=1), axis=1)
            rank_l = np.argsort(np.argsort(low, axis=1), axis=1)
            return np.bincount((rank_h * n + rank_l).ravel(), minlength=n * n)

        counts = simlab_service.run_blocks(block, runs, seed, workers, name="rank_coincidence")
        return np.sum(counts, axis=0).reshape(n, n) / runs

    @staticmethod
    def mean_kl_divergence(fitted: np.ndarray, empirical: np.ndarray) -> float:
        """(1/N) Σ_r KL(empírica_r || ajustada_r); las celdas empíricas vacías no aportan"""
        fitted = np.asarray(fitted, dtype=float)
        empirical = np.asarray(empirical, dtype=float)
        if fitted.shape != empirical.shape:
            raise InputValidationError("fitted and empirical matrices must share a shape")
        mask = empirical > 0
        ratio = np.where(mask, empirical / np.maximum(fitted, 1e-300), 1.0)
        return float(np.sum(np.where(mask, empirical * np.log(ratio), 0.0)) / fitted.shape[0])

    # =========================================================================
    # VARIANZA DE LA GANANCIA
    # =========================================================================

    def _selected_var(self, ranks: np.ndarray, params: RuluParams, level: NoiseLevel) -> float:
        rr, ss = np.meshgrid(ranks, ranks, indexing="ij")
        cov = np.asarray(self.concomitant_cov(rr, ss, params, level))
        return float(cov.sum() / len(ranks) ** 2)

    def gain_variance(self, params: RuluParams, fit_method: str = "owen") -> RuluMoments:
        """Var(W₁), Var(W₂), Cov(W₁, W₂) y Var(D)"""
        self._require_closed_form(params)
        self._require_value_variance(params, "gain_variance")
        n, m = params.n_items, params.capacity
        expected_high = self.expected_selected_value(params, NoiseLevel.HIGH)
        expected_low = self.expected_selected_value(params, NoiseLevel.LOW)

        if m == n:
            # se selecciona todo: W₁ = W₂ = media de los N valores
            var_w = params.var_value / n
            return RuluMoments(
                expected_w_high=expected_high, expected_w_low=expected_low,
                expected_gain=expected_low - expected_high,
                var_w_high=var_w, var_w_low=var_w, cov_w=var_w, var_gain=0.0
            )

        ranks = np.asarray(params.top_ranks(), dtype=float)
        var_high = self._selected_var(ranks, params, NoiseLevel.HIGH)
        var_low = self._selected_var(ranks, params, NoiseLevel.LOW)

        matrix, degenerate = self.rank_coincidence_matrix(params, fit_method=fit_method, ranks=ranks.astype(int))
        prob = matrix[:, ranks.astype(int) - 1]
        rr, ss = np.meshgrid(ranks, ranks, indexing="ij")
        same = self._same_item_var(rr, ss, params)
        diff = self._different_item_cov(rr, ss, params)
        cov_w = float(np.sum(prob * same + (1.0 - prob) * diff) / m ** 2)

        var_gain = var_high + var_low - 2.0 * cov_w
        if var_gain < 0:
            ComputationLogger.log_numerical_warning(
                "gain_variance", "negative Var(D) clamped to zero", var_gain=var_gain,
                n_items=n, capacity=m
            )
            var_gain = 0.0

        ComputationLogger.log_operation("gain_variance", n_items=n, capacity=m, degenerate_fits=degenerate)
        return RuluMoments(
            expected_w_high=expected_high, expected_w_low=expected_low,
            expected_gain=expected_low - expected_high,
            var_w_high=var_high, var_w_low=var_low, cov_w=cov_w,
            var_gain=var_gain, degenerate_fits=degenerate
        )

    @staticmethod
    def sharpe_ratio(expected_gain: float, var_gain: float, risk_free: float = 0.0) -> float:
        """(E(D) - c) / √Var(D)"""
        if not var_gain > 0:
            raise InputValidationError("sharpe ratio needs var_gain > 0", details={"var_gain": var_gain})
        return (expected_gain - risk_free) / float(np.sqrt(var_gain))

    def value_report(self, params: RuluParams, risk_free: float = 0.0, fit_method: str = "owen") -> RuluValueReport:
        moments = self.gain_variance(params, fit_method)
        sharpe = (
            self.sharpe_ratio(moments.expected_gain, moments.var_gain, risk_free)
            if moments.var_gain > 0 else None
        )
        return RuluValueReport(
            params=params, moments=moments, relative_gain=self.relative_gain(params),
            sharpe_ratio=sharpe, risk_free=risk_free
        )

    # =========================================================================
    # SIMULACIÓN
    # =========================================================================

    @staticmethod
    def _draw(
        rng: np.random.Generator,
        shape: Tuple[int, ...],
        mean: float,
        variance,
        family: ValueFamily,
        dof: Optional[float]
    ) -> np.ndarray:
        scale = np.sqrt(variance)
        if family == ValueFamily.STUDENT_T:
            # escala √((ν-2)/ν) para igualar la varianza a σ²
            return mean + scale * np.sqrt((dof - 2.0) / dof) * rng.standard_t(dof, size=shape)
        return mean + scale * rng.standard_normal(shape)

    def _draw_estimates(
        self,
        rng: np.random.Generator,
        size: int,
        params: RuluParams,
        family: ValueFamily,
        dof: Optional[float],
        partial_noise_fraction: float
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = params.n_items
        shape = (size, n)
        values = self._draw(rng, shape, params.mean_value, params.var_value, family, dof)
        high = values + self._draw(rng, shape, params.mean_noise, params.var_noise_high, family, dof)
        # los elementos son intercambiables: los primeros round(p·N) reciben σ²_2
        improved = int(round(partial_noise_fraction * n))
        low_var = np.where(np.arange(n) < improved, params.var_noise_low, params.var_noise_high)
        low = values + self._draw(rng, shape, params.mean_noise, low_var, family, dof)
        return values, high, low

    def simulate(
        self,
        params: RuluParams,
        runs: int,
        seed: Optional[int] = None,
        family: Optional[ValueFamily] = None,
        dof: Optional[float] = None,
        partial_noise_fraction: float = 1.0,
        track: Optional[Tuple[int, int]] = None,
        workers: Optional[int] = None
    ) -> Dict[str, np.ndarray]:
        """
        Proceso generativo: V, H = V + ε₁ y L = V + ε₂; W₁ y W₂ son la media
        del valor real de los M mejores según H y L; D = W₂ - W₁

        Con track = (r, s) registra además H_(r), L_(s), V_I(r) y V_J(s)
        """
        family = ValueFamily(family or params.value_family)
        dof = dof if dof is not None else params.dof
        if family == ValueFamily.STUDENT_T and (dof is None or dof <= 2):
            raise InputValidationError("student_t needs dof > 2", details={"dof": dof})
        if not 0.0 <= partial_noise_fraction <= 1.0:
            raise InputValidationError(
                "partial_noise_fraction must lie in [0, 1]",
                details={"partial_noise_fraction": partial_noise_fraction}
            )
        if track is not None:
            self._ranks(list(track), params)

        n, m = params.n_items, params.capacity

        def block(rng: np.random.Generator, size: int) -> Dict[str, np.ndarray]:
            values, high, low = self._draw_estimates(rng, size, params, family, dof, partial_noise_fraction)
            top_h = np.argpartition(high, n - m, axis=1)[:, n - m:]
            top_l = np.argpartition(low, n - m, axis=1)[:, n - m:]
            w_high = np.take_along_axis(values, top_h, axis=1).mean(axis=1)
            w_low = np.take_along_axis(values, top_l, axis=1).mean(axis=1)
            out = {"w_high": w_high, "w_low": w_low, "gain": w_low - w_high}
            if track is not None:
                r, s = track
                item_r = np.argsort(high, axis=1)[:, r - 1:r]
                item_s = np.argsort(low, axis=1)[:, s - 1:s]
                out["h_r"] = np.take_along_axis(high, item_r, axis=1)[:, 0]
                out["l_s"] = np.take_along_axis(low, item_s, axis=1)[:, 0]
                out["v_ir"] = np.take_along_axis(values, item_r, axis=1)[:, 0]
                out["v_js"] = np.take_along_axis(values, item_s, axis=1)[:, 0]
            return out

        logger.debug(
            "rulu_simulate", n_items=params.n_items, capacity=params.capacity, runs=runs,
            tracked=track is not None
        )
        return concat_blocks(simlab_service.run_blocks(block, runs, seed, workers, name="rulu_simulate"))

    # =========================================================================
    # BARRIDOS Y VERIFICACIÓN
    # =========================================================================

    def gain_sweep(
        self,
        params: RuluParams,
        over: str,
        values: Sequence[float],
        runs: Optional[int] = None,
        seed: Optional[int] = None,
        workers: Optional[int] = None
    ) -> List[SweepPoint]:
        """
        Barrido de E(D) y Var(D) sobre capacity, var_noise_low o partial_noise

        partial_noise no tiene forma cerrada y se estima solo por simulación
        """
        if over not in SWEEP_AXES:
            raise InputValidationError(f"over must be one of {SWEEP_AXES}", details={"over": over})
        if over == "partial_noise" and not runs:
            raise InputValidationError("partial_noise sweeps need runs > 0")

        points: List[SweepPoint] = []
        seeds = child_seeds(seed, len(values))
        for x, point_seed in zip(values, seeds):
            fraction = 1.0
            if over == "partial_noise":
                point_params = params
                fraction = float(x)
            else:
                update = {over: int(x) if over == "capacity" else float(x)}
                point_params = build_model(RuluParams, **{**params.model_dump(), **update})

            expected = var_gain = None
            if over != "partial_noise":
                moments = self.gain_variance(point_params)
                expected, var_gain = moments.expected_gain, moments.var_gain

            mc_mean = mc_se = None
            if runs:
                sample = self.simulate(
                    point_params, runs, point_seed, partial_noise_fraction=fraction, workers=workers
                )["gain"]
                mc_mean = float(sample.mean())
                mc_se = float(sample.std(ddof=1) / np.sqrt(sample.size)) if sample.size > 1 else None

            points.append(SweepPoint(
                over=over, x=float(x), expected_gain=expected, var_gain=var_gain,
                mc_mean_gain=mc_mean, mc_se_gain=mc_se
            ))
        return points

    @staticmethod
    def random_params(rng: np.random.Generator, min_log_n: float = 1.0, max_log_n: float = 3.0) -> RuluParams:
        """Parámetros aleatorios con los rangos de la verificación"""
        n = int(np.floor(10 ** rng.uniform(min_log_n, max_log_n)))
        m = max(1, int(np.floor(n * rng.uniform(0.01, 0.8))))
        sigma_v = rng.uniform(0.3, 10.0)
        sigma_1 = rng.uniform(0.3, 10.0)
        sigma_2 = max(sigma_1 * rng.uniform(0.1, 0.99), 0.2)
        return RuluParams(
            n_items=n, capacity=min(m, n),
            mean_value=rng.uniform(-10.0, 10.0), mean_noise=rng.uniform(-10.0, 10.0),
            var_value=sigma_v ** 2, var_noise_high=sigma_1 ** 2,
            var_noise_low=min(sigma_2, sigma_1) ** 2,
            quantile_correction=settings.QUANTILE_CORRECTION
        )

    def verify(
        self,
        trials: int,
        runs: Optional[int] = None,
        resamples: Optional[int] = None,
        seed: Optional[int] = None,
        cov_batches: int = 100,
        cov_batch_runs: int = 200,
        max_log_n: float = 3.0,
        workers: Optional[int] = None
    ) -> RuluVerifyReport:
        """
        Calibración con parámetros aleatorios: fracción de ensayos cuyo IC
        del 95% contiene el valor teórico y uniformidad de los rangos percentiles

        E(W), E(D) y Var(W) usan bootstrap sobre las corridas; la covarianza
        de los concomitantes usa lotes independientes de corridas
        """
        if trials < 1:
            raise InputValidationError("trials must be at least 1", details={"trials": trials})
        config = simlab_service.mc_config(seed, runs, workers, resamples)
        runs, resamples, workers = config.runs, config.bootstrap_resamples, config.workers
        trial_seeds = child_seeds(config.seed, trials)

        contained: Dict[str, int] = {"E(W)": 0, "E(D)": 0, "Var(W)": 0, "Cov(V_I(r),V_J(s))": 0}
        ranks: Dict[str, List[float]] = {key: [] for key in contained}

        for trial_seed in trial_seeds:
            rng = np.random.default_rng(trial_seed)
            params = self.random_params(rng, max_log_n=max_log_n)
            top = params.top_ranks()
            r, s = int(rng.choice(top)), int(rng.choice(top))
            sim_seed, boot_seed, cov_seed = child_seeds(trial_seed, 3)

            sample = self.simulate(params, runs, sim_seed, workers=workers)
            checks = [
                ("E(W)", sample["w_high"], BootstrapStatistic.MEAN,
                 self.expected_selected_value(params, NoiseLevel.HIGH)),
                ("E(D)", sample["gain"], BootstrapStatistic.MEAN, self.expected_gain(params)),
                ("Var(W)", sample["w_high"], BootstrapStatistic.VARIANCE,
                 self._selected_var(np.asarray(top, dtype=float), params, NoiseLevel.HIGH)
                 if params.capacity < params.n_items else params.var_value / params.n_items),
            ]
            for key, data, statistic, theory in checks:
                estimate, values, degenerate = simlab_service.bootstrap_distribution(
                    data, statistic, resamples, boot_seed
                )
                low, high = np.quantile(values, [0.025, 0.975])
                contained[key] += int(low <= theory <= high)
                ranks[key].append(simlab_service.percentile_rank(theory, values))

            tracked = self.simulate(
                params, cov_batches * cov_batch_runs, cov_seed, track=(r, s), workers=workers
            )
            v_ir = tracked["v_ir"].reshape(cov_batches, cov_batch_runs)
            v_js = tracked["v_js"].reshape(cov_batches, cov_batch_runs)
            batch_cov = (
                ((v_ir - v_ir.mean(axis=1, keepdims=True)) * (v_js - v_js.mean(axis=1, keepdims=True))).sum(axis=1)
                / (cov_batch_runs - 1)
            )
            theory = self._cross_cov_or_fallback(r, s, params)
            low, high = np.quantile(batch_cov, [0.025, 0.975])
            contained["Cov(V_I(r),V_J(s))"] += int(low <= theory <= high)
            ranks["Cov(V_I(r),V_J(s))"].append(simlab_service.percentile_rank(theory, batch_cov, min_samples=1))

        quantities = []
        for key, count in contained.items():
            uniformity_p = shape = None
            if trials >= 10:
                calibration = simlab_service.calibration_histogram(ranks[key], bins=min(10, trials))
                uniformity_p, shape = calibration.p_value, calibration.shape.value
            quantities.append(QuantityCalibration(
                quantity=key, trials=trials, contained=count, fraction_contained=count / trials,
                rank_uniformity_p=uniformity_p, rank_shape=shape
            ))

        ComputationLogger.log_operation("rulu_verify", trials=trials, runs=runs)
        return RuluVerifyReport(
            trials=trials, runs=runs, resamples=resamples,
            seed=config.seed, quantities=quantities
        )

    def _cross_cov_or_fallback(self, r: int, s: int, params: RuluParams) -> float:
        """Covarianza mezclada; con ajuste degenerado se usa solo la rama de elementos distintos"""
        try:
            return self.concomitant_cross_cov(r, s, params)
        except DegenerateFitError as e:
            ComputationLogger.log_numerical_warning("concomitant_cross_cov", str(e), rank=r)
            return float(self._different_item_cov(r, s, params))


# Instancia global del servicio
rulu_service = RuluService()
