"""
Servicio de tests de horizonte fijo
Tests de hipótesis, tamaños de efecto, intervalos de confianza y las
calculadoras de potencia, tamaño de muestra y MDE
"""

import math
from itertools import combinations
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from demlab.core.config import settings
from demlab.core.exceptions import DegenerateSampleError, InputValidationError
from demlab.core.logging import ComputationLogger, get_logger
from demlab.schemas.common import Alternative
from demlab.schemas.testing import SampleSizeResult, SampleSummary, SkewnessRule, TestOutcome
from demlab.services import distkit

logger = get_logger(__name__)

# Tolerancia relativa para "igual o menos probable" en el test binomial bilateral
BINOMIAL_PMF_RTOL = 1e-7
EXACT_MANN_WHITNEY_MAX = 20
MIN_EXPECTED_COUNT = 5.0


class TestkitService:
    """Servicio de tests estadísticos y diseño de experimentos"""

    __test__ = False

    # =========================================================================
    # AUXILIARES
    # =========================================================================

    @staticmethod
    def _alpha(alpha: Optional[float]) -> float:
        alpha = settings.DEFAULT_ALPHA if alpha is None else alpha
        distkit._check_probability(alpha, "alpha")
        return alpha

    @staticmethod
    def _p_value(statistic: float, alternative: Alternative, dof: Optional[float] = None) -> float:
        """p-valor según la dirección de la alternativa; dof=None usa la normal"""
        if dof is None:
            upper, lower = distkit.normal_sf(statistic), distkit.normal_cdf(statistic)
        else:
            upper, lower = distkit.student_t_sf(statistic, dof), distkit.student_t_cdf(statistic, dof)
        if alternative == Alternative.GREATER:
            return float(upper)
        if alternative == Alternative.LESS:
            return float(lower)
        return float(min(1.0, 2.0 * min(upper, lower)))

    @staticmethod
    def _critical(alpha: float, alternative: Alternative, dof: Optional[float] = None) -> float:
        if dof is None:
            return distkit.z_critical(alpha, alternative)
        return distkit.t_critical(alpha, dof, alternative)

    def _interval(
        self,
        estimate: float,
        se: float,
        alpha: float,
        alternative: Alternative,
        dof: Optional[float] = None
    ) -> Tuple[Optional[float], Optional[float]]:
        """Intervalo dual del test; los unilaterales quedan abiertos por un lado"""
        half = self._critical(alpha, alternative, dof) * se
        if alternative == Alternative.GREATER:
            return estimate - half, None
        if alternative == Alternative.LESS:
            return None, estimate + half
        return estimate - half, estimate + half

    @staticmethod
    def _check_two_samples(a: SampleSummary, b: SampleSummary, minimum: int = 2) -> None:
        if a.count < minimum or b.count < minimum:
            raise InputValidationError(
                f"each group needs at least {minimum} observations",
                details={"count_a": a.count, "count_b": b.count}
            )

    @staticmethod
    def welch_dof(a: SampleSummary, b: SampleSummary) -> float:
        """Ecuación de Welch-Satterthwaite"""
        va, vb = a.variance / a.count, b.variance / b.count
        return (va + vb) ** 2 / (va ** 2 / (a.count - 1) + vb ** 2 / (b.count - 1))

    # =========================================================================
    # TESTS DE DOS MUESTRAS
    # =========================================================================

    def welch_t_test(
        self,
        a: SampleSummary,
        b: SampleSummary,
        delta0: float = 0.0,
        alternative: Alternative = Alternative.TWO_SIDED,
        alpha: Optional[float] = None,
        practical: bool = True
    ) -> TestOutcome:
        """
        Test t de Welch para Δ = μ_B - μ_A

        Por defecto es el t práctico: varianzas muestrales con referencia normal
        (forma plug-in, la habitual con muestras grandes). practical=False usa
        la t de Student con grados de libertad de Welch-Satterthwaite
        """
        alpha = self._alpha(alpha)
        alternative = Alternative(alternative)
        self._check_two_samples(a, b)
        if a.variance == 0 and b.variance == 0:
            raise DegenerateSampleError(
                "degenerate samples: both variances are zero",
                details={"mean_a": a.mean, "mean_b": b.mean}
            )

        se = math.sqrt(a.variance / a.count + b.variance / b.count)
        diff = b.mean - a.mean
        statistic = (diff - delta0) / se
        dof = None if practical else self.welch_dof(a, b)
        p_value = self._p_value(statistic, alternative, dof)
        ci_low, ci_high = self._interval(diff, se, alpha, alternative, dof)

        ComputationLogger.log_operation("welch_t_test", practical=practical, statistic=statistic)
        return TestOutcome(
            test="practical_t" if practical else "welch_t",
            statistic=statistic, p_value=p_value, dof=dof, reject=p_value < alpha,
            ci_low=ci_low, ci_high=ci_high, alternative=alternative, alpha=alpha,
            details={"difference": diff, "se": se, "delta0": delta0}
        )

    def z_test(
        self,
        a: SampleSummary,
        b: SampleSummary,
        delta0: float = 0.0,
        known_var_a: Optional[float] = None,
        known_var_b: Optional[float] = None,
        alternative: Alternative = Alternative.TWO_SIDED,
        alpha: Optional[float] = None
    ) -> TestOutcome:
        """Test z con varianzas poblacionales conocidas"""
        alpha = self._alpha(alpha)
        alternative = Alternative(alternative)
        self._check_two_samples(a, b, minimum=1)
        if known_var_a is None or known_var_b is None:
            raise InputValidationError("z_test needs both population variances")
        if known_var_a < 0 or known_var_b < 0 or known_var_a + known_var_b == 0:
            raise DegenerateSampleError(
                "degenerate samples: population variances must be non-negative and not both zero",
                details={"var_a": known_var_a, "var_b": known_var_b}
            )

        se = math.sqrt(known_var_a / a.count + known_var_b / b.count)
        diff = b.mean - a.mean
        statistic = (diff - delta0) / se
        p_value = self._p_value(statistic, alternative)
        ci_low, ci_high = self._interval(diff, se, alpha, alternative)
        return TestOutcome(
            test="z", statistic=statistic, p_value=p_value, reject=p_value < alpha,
            ci_low=ci_low, ci_high=ci_high, alternative=alternative, alpha=alpha,
            details={"difference": diff, "se": se, "delta0": delta0}
        )

    @staticmethod
    def cohens_d(a: SampleSummary, b: SampleSummary) -> float:
        """Diferencia de medias dividida por la desviación estándar combinada"""
        if a.count + b.count <= 2:
            raise InputValidationError("cohens_d needs n + m > 2")
        pooled = ((a.count - 1) * a.variance + (b.count - 1) * b.variance) / (a.count + b.count - 2)
        if pooled <= 0:
            raise DegenerateSampleError("degenerate samples: pooled variance is zero")
        return (b.mean - a.mean) / math.sqrt(pooled)

    def mean_difference_ci(
        self,
        a: SampleSummary,
        b: SampleSummary,
        alpha: Optional[float] = None,
        practical: bool = True
    ) -> Tuple[float, float]:
        """Intervalo bilateral para μ_B - μ_A"""
        alpha = self._alpha(alpha)
        self._check_two_samples(a, b)
        se = math.sqrt(a.variance / a.count + b.variance / b.count)
        dof = None
        if not practical and se > 0:
            dof = self.welch_dof(a, b)
        low, high = self._interval(b.mean - a.mean, se, alpha, Alternative.TWO_SIDED, dof)
        return low, high

    # =========================================================================
    # TESTS DE UNA MUESTRA Y PROPORCIONES
    # =========================================================================

    def one_sample_test(
        self,
        s: SampleSummary,
        mu0: float = 0.0,
        alternative: Alternative = Alternative.TWO_SIDED,
        alpha: Optional[float] = None,
        known_var: Optional[float] = None
    ) -> TestOutcome:
        """Test z (varianza conocida) o t de una muestra para H0: μ = μ0"""
        alpha = self._alpha(alpha)
        alternative = Alternative(alternative)
        if known_var is None:
            if s.count < 2:
                raise InputValidationError("one-sample t test needs at least 2 observations")
            variance, dof = s.variance, float(s.count - 1)
        else:
            variance, dof = known_var, None
        if variance <= 0:
            raise DegenerateSampleError("degenerate samples: zero variance")

        se = math.sqrt(variance / s.count)
        statistic = (s.mean - mu0) / se
        p_value = self._p_value(statistic, alternative, dof)
        ci_low, ci_high = self._interval(s.mean, se, alpha, alternative, dof)
        return TestOutcome(
            test="one_sample_z" if dof is None else "one_sample_t",
            statistic=statistic, p_value=p_value, dof=dof, reject=p_value < alpha,
            ci_low=ci_low, ci_high=ci_high, alternative=alternative, alpha=alpha,
            details={"mu0": mu0, "se": se}
        )

    def proportion_test(
        self,
        successes_a: int,
        n_a: int,
        successes_b: int,
        n_b: int,
        alternative: Alternative = Alternative.TWO_SIDED,
        alpha: Optional[float] = None
    ) -> TestOutcome:
        """Aproximación normal para p_B - p_A con proporción combinada bajo H0, sin corrección de continuidad"""
        alpha = self._alpha(alpha)
        alternative = Alternative(alternative)
        for k, n in ((successes_a, n_a), (successes_b, n_b)):
            if n < 1 or not 0 <= k <= n:
                raise InputValidationError("successes must satisfy 0 <= k <= n", details={"k": k, "n": n})

        p_a, p_b = successes_a / n_a, successes_b / n_b
        pooled = (successes_a + successes_b) / (n_a + n_b)
        se0 = math.sqrt(pooled * (1.0 - pooled) * (1.0 / n_a + 1.0 / n_b))
        if se0 == 0:
            raise DegenerateSampleError("degenerate samples: pooled proportion is 0 or 1")

        statistic = (p_b - p_a) / se0
        p_value = self._p_value(statistic, alternative)
        se = math.sqrt(p_a * (1 - p_a) / n_a + p_b * (1 - p_b) / n_b)
        ci_low, ci_high = self._interval(p_b - p_a, se, alpha, alternative)
        return TestOutcome(
            test="proportion_z", statistic=statistic, p_value=p_value, reject=p_value < alpha,
            ci_low=ci_low, ci_high=ci_high, alternative=alternative, alpha=alpha,
            details={"p_a": p_a, "p_b": p_b, "pooled": pooled}
        )

    @staticmethod
    def response_noise(p: float, n: int) -> float:
        """Varianza de la diferencia de proporciones con n usuarios repartidos 50/50: 4p(1-p)/n"""
        distkit._check_probability(p, "p", open_interval=False)
        if n < 1:
            raise InputValidationError("n must be at least 1", details={"n": n})
        return 4.0 * p * (1.0 - p) / n

    # =========================================================================
    # TESTS NO PARAMÉTRICOS Y EXACTOS
    # =========================================================================

    def binomial_exact_test(
        self,
        k: int,
        n: int,
        theta0: float,
        alternative: Alternative = Alternative.TWO_SIDED,
        alpha: Optional[float] = None
    ) -> TestOutcome:
        """
        Test binomial exacto para H0: θ = θ0

        El bilateral suma la masa de todos los resultados igual o menos
        probables que k. El conjunto crítico excluye los cuantiles binomiales
        y puede quedar vacío cuando n es pequeño
        """
        alpha = self._alpha(alpha)
        alternative = Alternative(alternative)
        if n < 1 or not 0 <= k <= n:
            raise InputValidationError("binomial test needs 0 <= k <= n and n >= 1", details={"k": k, "n": n})
        distkit._check_probability(theta0, "theta0")

        if alternative == Alternative.GREATER:
            p_value = float(distkit.binomial_sf(k - 1, n, theta0))
        elif alternative == Alternative.LESS:
            p_value = float(distkit.binomial_cdf(k, n, theta0))
        else:
            pmf = np.asarray(distkit.binomial_pmf(np.arange(n + 1), n, theta0))
            p_value = float(min(1.0, pmf[pmf <= pmf[k] * (1.0 + BINOMIAL_PMF_RTOL)].sum()))

        lower_edge, upper_edge = self._binomial_critical_edges(n, theta0, alpha, alternative)
        empty = lower_edge is None and upper_edge is None
        if empty:
            ComputationLogger.log_numerical_warning(
                "binomial_exact_test", "empty critical set", n=n, theta0=theta0, alpha=alpha
            )

        return TestOutcome(
            test="binomial_exact", statistic=float(k), p_value=p_value, reject=p_value < alpha,
            alternative=alternative, alpha=alpha,
            details={
                "n": n, "theta0": theta0,
                "critical_low_max": lower_edge, "critical_high_min": upper_edge,
                "empty_critical_set": empty
            }
        )

    @staticmethod
    def _binomial_critical_edges(
        n: int,
        theta0: float,
        alpha: float,
        alternative: Alternative
    ) -> Tuple[Optional[int], Optional[int]]:
        """Bordes del conjunto crítico {0..lo} ∪ {hi..n}; None si ese lado es vacío"""
        tail = alpha / 2.0 if alternative == Alternative.TWO_SIDED else alpha
        lo = hi = None
        if alternative in (Alternative.LESS, Alternative.TWO_SIDED):
            q = distkit.binomial_quantile(tail, n, theta0)
            lo = q - 1 if q >= 1 else None
        if alternative in (Alternative.GREATER, Alternative.TWO_SIDED):
            q = distkit.binomial_quantile(1.0 - tail, n, theta0)
            hi = q + 1 if q + 1 <= n else None
        return lo, hi

    @staticmethod
    def mann_whitney_statistic(x: Sequence[float], y: Sequence[float]) -> float:
        """U = Σ_i Σ_j S(x_i, y_j) con S = 1 si x > y, ½ si empatan; vía rangos medios"""
        x_arr, y_arr = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        ranks = stats.rankdata(np.concatenate([x_arr, y_arr]))
        n = x_arr.size
        return float(ranks[:n].sum() - n * (n + 1) / 2.0)

    def mann_whitney_u(
        self,
        x: Sequence[float],
        y: Sequence[float],
        alternative: Alternative = Alternative.TWO_SIDED,
        alpha: Optional[float] = None,
        exact: bool = False
    ) -> TestOutcome:
        """
        Test de Mann-Whitney; greater significa x estocásticamente mayor

        La aproximación normal corrige σ_U por empates. exact=True enumera
        todas las asignaciones de rangos (solo con n + m <= 20)
        """
        alpha = self._alpha(alpha)
        alternative = Alternative(alternative)
        x_arr, y_arr = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        if x_arr.size == 0 or y_arr.size == 0:
            raise InputValidationError("mann_whitney_u needs non-empty samples")
        n, m = x_arr.size, y_arr.size
        total = n + m

        ranks = stats.rankdata(np.concatenate([x_arr, y_arr]))
        u = float(ranks[:n].sum() - n * (n + 1) / 2.0)
        mean_u = n * m / 2.0

        if exact:
            if total > EXACT_MANN_WHITNEY_MAX:
                raise InputValidationError(
                    f"exact mode needs n + m <= {EXACT_MANN_WHITNEY_MAX}", details={"n": n, "m": m}
                )
            p_value = self._mann_whitney_exact_p(ranks, n, u, alternative)
            statistic, method = u, "exact"
        else:
            _, tie_counts = np.unique(ranks, return_counts=True)
            tie_term = float(np.sum(tie_counts ** 3 - tie_counts))
            var_u = n * m / 12.0 * ((total + 1) - tie_term / (total * (total - 1))) if total > 1 else 0.0
            if var_u <= 0:
                statistic, p_value = 0.0, 1.0
            else:
                statistic = (u - mean_u) / math.sqrt(var_u)
                p_value = self._p_value(statistic, alternative)
            method = "normal"

        return TestOutcome(
            test="mann_whitney", statistic=statistic, p_value=p_value, reject=p_value < alpha,
            alternative=alternative, alpha=alpha,
            details={"u": u, "u_complement": n * m - u, "method": method}
        )

    @staticmethod
    def _mann_whitney_exact_p(ranks: np.ndarray, n: int, u_obs: float, alternative: Alternative) -> float:
        """Distribución de permutación de U condicionada a los rangos medios observados"""
        total = ranks.size
        combos = np.array(list(combinations(range(total), n)), dtype=int)
        u_all = ranks[combos].sum(axis=1) - n * (n + 1) / 2.0
        tol = 1e-9
        if alternative == Alternative.GREATER:
            return float(np.mean(u_all >= u_obs - tol))
        if alternative == Alternative.LESS:
            return float(np.mean(u_all <= u_obs + tol))
        centre = n * (total - n) / 2.0
        return float(np.mean(np.abs(u_all - centre) >= abs(u_obs - centre) - tol))

    def chi2_gof(
        self,
        observed: Sequence[float],
        expected_ratios: Sequence[float],
        alpha: Optional[float] = None
    ) -> TestOutcome:
        """
        Bondad de ajuste chi²; con ratios de asignación es el chequeo de SRM

        El rechazo se reporta además como details["srm"]
        """
        alpha = self._alpha(alpha)
        obs = np.asarray(observed, dtype=float)
        ratios = np.asarray(expected_ratios, dtype=float)
        if obs.size < 2 or obs.size != ratios.size:
            raise InputValidationError(
                "chi2_gof needs at least 2 categories and one ratio per category",
                details={"observed": obs.size, "ratios": ratios.size}
            )
        if np.any(obs < 0) or np.any(ratios < 0) or ratios.sum() <= 0:
            raise InputValidationError("counts and ratios must be non-negative")

        expected = ratios / ratios.sum() * obs.sum()
        if np.any(expected <= 0):
            raise InputValidationError(
                "expected count is zero for some category",
                details={"expected": expected.tolist()}
            )
        if np.any(expected < MIN_EXPECTED_COUNT):
            ComputationLogger.log_numerical_warning(
                "chi2_gof", "expected count below 5; chi-squared approximation is unreliable",
                min_expected=float(expected.min())
            )

        statistic = float(np.sum((obs - expected) ** 2 / expected))
        dof = obs.size - 1
        p_value = float(distkit.chi2_sf(statistic, dof))
        reject = p_value < alpha
        return TestOutcome(
            test="chi2_gof", statistic=statistic, p_value=p_value, dof=float(dof), reject=reject,
            alpha=alpha, details={"expected": expected.tolist(), "srm": reject}
        )

    # =========================================================================
    # DISEÑO: POTENCIA, TAMAÑO DE MUESTRA Y MDE
    # =========================================================================

    @staticmethod
    def _check_design(var_a: float, var_b: float, n: float, m: float) -> float:
        if var_a <= 0 or var_b <= 0:
            raise InputValidationError("variances must be positive", details={"var_a": var_a, "var_b": var_b})
        if n < 1 or m < 1:
            raise InputValidationError("group sizes must be at least 1", details={"n": n, "m": m})
        return math.sqrt(var_a / n + var_b / m)

    def _power_target(self, power_target: Optional[float], alpha: float) -> float:
        power_target = settings.DEFAULT_POWER if power_target is None else power_target
        if not alpha < power_target < 1.0:
            raise InputValidationError(
                "power target must lie in (alpha, 1)", details={"power": power_target, "alpha": alpha}
            )
        return power_target

    def power(
        self,
        theta: float,
        theta0: float,
        var_a: float,
        var_b: float,
        n: float,
        m: float,
        alpha: Optional[float] = None,
        alternative: Alternative = Alternative.TWO_SIDED,
        approx: bool = False
    ) -> float:
        """
        Potencia del test z para el efecto θ

        El bilateral suma ambas colas; approx=True usa solo la cola de |θ - θ0|,
        válida cuando |θ - θ0|/SE supera holgadamente z_{1-α/2}
        """
        alpha = self._alpha(alpha)
        alternative = Alternative(alternative)
        se = self._check_design(var_a, var_b, n, m)
        ratio = (theta - theta0) / se
        crit = distkit.z_critical(alpha, alternative)

        if alternative == Alternative.GREATER:
            return float(distkit.normal_cdf(ratio - crit))
        if alternative == Alternative.LESS:
            return float(distkit.normal_cdf(-ratio - crit))
        if approx:
            if abs(ratio) <= crit + 1.0:
                ComputationLogger.log_numerical_warning(
                    "power", "single-tail approximation used with |theta - theta0|/SE <= z + 1",
                    ratio=ratio, critical=crit
                )
            return float(distkit.normal_cdf(abs(ratio) - crit))
        return float(distkit.normal_cdf(ratio - crit) + distkit.normal_cdf(-ratio - crit))

    def mde(
        self,
        var_a: float,
        var_b: float,
        n: float,
        m: float,
        alpha: Optional[float] = None,
        power_target: Optional[float] = None,
        alternative: Alternative = Alternative.TWO_SIDED
    ) -> float:
        """(z_{1-α o 1-α/2} - z_{1-π})·SE"""
        alpha = self._alpha(alpha)
        power_target = self._power_target(power_target, alpha)
        se = self._check_design(var_a, var_b, n, m)
        return self._design_multiplier(alpha, power_target, alternative) * se

    @staticmethod
    def _design_multiplier(alpha: float, power_target: float, alternative: Alternative) -> float:
        return distkit.z_critical(alpha, Alternative(alternative)) - float(distkit.normal_quantile(1.0 - power_target))

    def required_sample_size(
        self,
        theta: float,
        theta0: float,
        var_a: float,
        var_b: float,
        alpha: Optional[float] = None,
        power_target: Optional[float] = None,
        alternative: Alternative = Alternative.TWO_SIDED,
        allocation_ratio: float = 1.0
    ) -> SampleSizeResult:
        """
        Menor n (con m = ⌈k·n⌉) cuya potencia exacta alcanza el objetivo

        Parte de la fórmula cerrada y ajusta n con la potencia de ambas colas
        """
        alpha = self._alpha(alpha)
        power_target = self._power_target(power_target, alpha)
        alternative = Alternative(alternative)
        if theta == theta0:
            raise InputValidationError("theta must differ from theta0", details={"theta": theta})
        if allocation_ratio <= 0:
            raise InputValidationError("allocation_ratio must be positive")
        self._check_design(var_a, var_b, 1, 1)

        effect2 = (theta - theta0) ** 2
        z_total = self._design_multiplier(alpha, power_target, alternative)
        weighted = var_a + var_b / allocation_ratio
        n = max(1, math.ceil(z_total ** 2 * weighted / effect2))

        def achieved(size: int) -> float:
            return self.power(
                theta, theta0, var_a, var_b, size, max(1, math.ceil(allocation_ratio * size)),
                alpha, alternative
            )

        while achieved(n) < power_target:
            n += 1
        while n > 1 and achieved(n - 1) >= power_target:
            n -= 1

        mean_var = (var_a + var_b) / 2.0
        logger.debug("required_sample_size", n=n, allocation_ratio=allocation_ratio, power_target=power_target)
        return SampleSizeResult(
            n=n, m=max(1, math.ceil(allocation_ratio * n)), allocation_ratio=allocation_ratio,
            multiplier=z_total ** 2 * weighted / mean_var,
            rule_of_thumb=math.ceil(16.0 * mean_var / effect2),
            achieved_power=achieved(n)
        )

    # =========================================================================
    # INTERVALOS Y HEURÍSTICAS
    # =========================================================================

    def ci_mean(self, s: SampleSummary, alpha: Optional[float] = None) -> Tuple[float, float]:
        """mean ± t_{n-1, 1-α/2}·√(s²/n)"""
        alpha = self._alpha(alpha)
        if s.count < 2:
            raise InputValidationError("ci_mean needs at least 2 observations", details={"count": s.count})
        half = distkit.t_critical(alpha, s.count - 1) * math.sqrt(s.variance / s.count)
        return s.mean - half, s.mean + half

    @staticmethod
    def skewness_min_sample(sample_skewness: float) -> SkewnessRule:
        """Regla 355·s²; solo es informativa cuando |s| > 1"""
        if not math.isfinite(sample_skewness):
            raise InputValidationError("skewness must be finite")
        # redondeo previo para que 355·4 no quede en 1420.0000000001
        min_sample = math.ceil(round(355.0 * sample_skewness ** 2, 9))
        return SkewnessRule(
            skewness=sample_skewness, min_sample=min_sample,
            rule_applicable=abs(sample_skewness) > 1.0
        )

    @staticmethod
    def sample_skewness(values: Sequence[float]) -> float:
        """Coeficiente de asimetría por momentos"""
        arr = np.asarray(values, dtype=float)
        if arr.size < 3:
            raise InputValidationError("skewness needs at least 3 observations")
        return float(stats.skew(arr, bias=True))


# Instancia global del servicio
testkit_service = TestkitService()
