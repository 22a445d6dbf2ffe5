"""
Servicio de evaluación de diseños para experimentos de estrategias de personalización
Efecto real y MDE de los setups 1 a 4, comparación de superioridad y las
reglas de dilución y control dual
"""

import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from demlab.core.exceptions import InputValidationError, InsufficientGroupError, NoDilutionError
from demlab.core.logging import ComputationLogger, get_logger
from demlab.schemas.pse import (
    SCENARIO_GROUPS, ComparisonResult, DilutionAdvice, DilutionVerdict,
    DualControlResult, DualControlVerdict, PseScenario, PseVerifyReport,
    SetupEvaluation, SetupVerification, Verdict
)
from demlab.schemas.simulation import BootstrapStatistic
from demlab.services import distkit
from demlab.services.simlab_service import child_seeds, concat_blocks, simlab_service

logger = get_logger(__name__)

SETUP_IDS = (1, 2, 3, 4)
TIE_TOLERANCE = 1e-12
EQUALITY_RTOL = 1e-9
QUALIFIED_GROUPS = ("C1", "C2", "C3", "I1", "I2", "Iphi", "Ipsi")

# Grupos de análisis por setup: lista de (signo, [(grupo, fracción de n_k, k)])
# El efecto es Σ signo·media del grupo de análisis
ANALYSIS_GROUPS: Dict[int, List[Tuple[int, List[Tuple[str, float, int]]]]] = {
    1: [(-1, [("Iphi", 0.5, 3)]), (1, [("Ipsi", 0.5, 3)])],
    2: [
        (-1, [("C0", 0.5, 0), ("I1", 0.5, 1), ("C2", 0.5, 2), ("Iphi", 0.5, 3)]),
        (1, [("C0", 0.5, 0), ("C1", 0.5, 1), ("I2", 0.5, 2), ("Ipsi", 0.5, 3)]),
    ],
    3: [
        (-1, [("I1", 0.5, 1), ("C2", 0.5, 2), ("Iphi", 0.5, 3)]),
        (1, [("C1", 0.5, 1), ("I2", 0.5, 2), ("Ipsi", 0.5, 3)]),
    ],
    4: [
        (1, [("C1", 0.25, 1), ("C3", 0.25, 3)]),
        (-1, [("I1", 0.25, 1), ("Iphi", 0.25, 3)]),
        (-1, [("C2", 0.25, 2), ("C3", 0.25, 3)]),
        (1, [("I2", 0.25, 2), ("Ipsi", 0.25, 3)]),
    ],
}


def _nearly_equal(values: Sequence[float]) -> bool:
    arr = np.asarray(values, dtype=float)
    return bool(np.all(np.abs(arr - arr[0]) <= EQUALITY_RTOL * max(1.0, float(np.max(np.abs(arr))))))


class PseService:
    """Servicio de evaluación de setups de experimentos de personalización"""

    # =========================================================================
    # CANTIDADES AUXILIARES
    # =========================================================================

    @staticmethod
    def z_multiplier(scenario: PseScenario) -> float:
        """z = z_{1-α/2} - z_{1-π_min}"""
        return distkit.z_critical(scenario.alpha) - float(distkit.normal_quantile(1.0 - scenario.power))

    @staticmethod
    def eta(s: PseScenario) -> float:
        return (
            s.n1 * (s.mu_C1 - s.mu_I1) + s.n2 * (s.mu_I2 - s.mu_C2) + s.n3 * (s.mu_Ipsi - s.mu_Iphi)
        )

    @staticmethod
    def xi(s: PseScenario) -> float:
        return (
            s.n1 * (s.var_C1 + s.var_I1) + s.n2 * (s.var_C2 + s.var_I2) + s.n3 * (s.var_Iphi + s.var_Ipsi)
        )

    @staticmethod
    def incrementality(s: PseScenario) -> Tuple[float, float]:
        """Incrementalidad de cada estrategia en el control dual (A y B)"""
        a_incr = (s.n1 * (s.mu_I1 - s.mu_C1) + s.n3 * (s.mu_Iphi - s.mu_C3)) / (s.n1 + s.n3)
        b_incr = (s.n2 * (s.mu_I2 - s.mu_C2) + s.n3 * (s.mu_Ipsi - s.mu_C3)) / (s.n2 + s.n3)
        return a_incr, b_incr

    @staticmethod
    def dual_variance_terms(s: PseScenario) -> Tuple[float, float]:
        x = s.n1 * (s.var_C1 + s.var_I1) + s.n3 * (s.var_C3 + s.var_Iphi)
        y = s.n2 * (s.var_C2 + s.var_I2) + s.n3 * (s.var_C3 + s.var_Ipsi)
        return x, y

    # =========================================================================
    # EVALUACIÓN DE SETUPS
    # =========================================================================

    @staticmethod
    def _require(group: str, required: int, actual: float) -> None:
        if actual < required:
            raise InsufficientGroupError(group, required, actual)

    def evaluate_setup(self, setup_id: int, scenario: PseScenario) -> SetupEvaluation:
        """Δ_S y θ*_S con divisiones 50/50; los tamaños se tratan como reales"""
        s = scenario
        z = self.z_multiplier(s)

        if setup_id == 1:
            self._require("3", 2, s.n3)
            effect = s.mu_Ipsi - s.mu_Iphi
            mde = z * math.sqrt(2.0 * s.var_Iphi / s.n3 + 2.0 * s.var_Ipsi / s.n3)
        elif setup_id == 2:
            self._require("0+1+2+3", 2, s.n_total)
            self._require("1+2+3", 1, s.n_qualified)
            effect = self.eta(s) / s.n_total
            spread = 2.0 * s.n0 * s.var_C0 + self.xi(s)
            mde = z * math.sqrt(2.0 * spread / s.n_total ** 2)
        elif setup_id == 3:
            self._require("1+2+3", 2, s.n_qualified)
            effect = self.eta(s) / s.n_qualified
            mde = z * math.sqrt(2.0 * self.xi(s)) / s.n_qualified
        elif setup_id == 4:
            self._require("1+3", 1, s.n1 + s.n3)
            self._require("2+3", 1, s.n2 + s.n3)
            a_incr, b_incr = self.incrementality(s)
            effect = b_incr - a_incr
            x, y = self.dual_variance_terms(s)
            mde = 2.0 * z * math.sqrt(x / (s.n1 + s.n3) ** 2 + y / (s.n2 + s.n3) ** 2)
        else:
            raise InputValidationError("setup_id must be 1, 2, 3 or 4", details={"setup_id": setup_id})

        return SetupEvaluation(setup_id=setup_id, actual_effect=effect, mde=mde)

    def evaluate_all(self, scenario: PseScenario) -> List[SetupEvaluation]:
        return [self.evaluate_setup(setup_id, scenario) for setup_id in SETUP_IDS]

    # =========================================================================
    # COMPARACIÓN
    # =========================================================================

    @staticmethod
    def compare(a: SetupEvaluation, b: SetupEvaluation) -> ComparisonResult:
        """
        Criterio 1: mayor efecto real y menor MDE. Criterio 2: la ganancia en
        efecto real supera la pérdida en sensibilidad

        Dos efectos negativos se normalizan intercambiando los grupos; signos
        opuestos se marcan como probable error
        """
        delta_a, delta_b = a.actual_effect, b.actual_effect
        likely_error = (delta_a > 0 > delta_b) or (delta_b > 0 > delta_a)
        if likely_error:
            ComputationLogger.log_numerical_warning(
                "pse_compare", "actual effects have opposite signs",
                setup_a=a.setup_id, setup_b=b.setup_id
            )
        if delta_a <= 0 and delta_b <= 0:
            delta_a, delta_b = -delta_a, -delta_b

        theta_a, theta_b = a.mde, b.mde
        verdict, criterion = Verdict.NEITHER, None

        if delta_a >= delta_b and theta_a <= theta_b and (delta_a > delta_b or theta_a < theta_b):
            verdict, criterion = Verdict.A_SUPERIOR, "criterion_1"
        elif delta_b >= delta_a and theta_b <= theta_a and (delta_b > delta_a or theta_b < theta_a):
            verdict, criterion = Verdict.B_SUPERIOR, "criterion_1"
        elif (delta_a - delta_b) - (theta_a - theta_b) > TIE_TOLERANCE:
            verdict, criterion = Verdict.A_SUPERIOR, "criterion_2"
        elif (delta_b - delta_a) - (theta_b - theta_a) > TIE_TOLERANCE:
            verdict, criterion = Verdict.B_SUPERIOR, "criterion_2"

        return ComparisonResult(verdict=verdict, criterion=criterion, likely_error=likely_error, a=a, b=b)

    # =========================================================================
    # REGLAS DE DILUCIÓN
    # =========================================================================

    def dilution_threshold(self, scenario: PseScenario) -> float:
        """σ²_C0 por encima de este umbral hace que el setup 3 domine al 2 en MDE"""
        s = scenario
        return self.xi(s) * (s.n0 + 2.0 * s.n_qualified) / (2.0 * s.n_qualified ** 2)

    def dilution_advice(self, scenario: PseScenario) -> DilutionAdvice:
        """
        ¿Conviene diluir incluyendo al grupo 0? Setup 3 (sin diluir) contra Setup 2

        Reglas en orden: umbral de varianza, condición fuerte, condición débil
        (experimento ya con potencia suficiente) y la desigualdad al cuadrado
        """
        s = scenario
        if s.n0 < 1:
            raise NoDilutionError()

        s3 = self.evaluate_setup(3, s)
        s2 = self.evaluate_setup(2, s)
        z = self.z_multiplier(s)
        # convención de intercambio: efecto del setup 3 no negativo
        delta3, theta3 = abs(s3.actual_effect), s3.mde
        ratio = s.n_qualified / s.n0

        threshold = self.dilution_threshold(s)
        checks: Dict[str, Optional[bool]] = {
            "variance_threshold": threshold < s.var_C0,
            "strong": (s.n_total / s.n0) * theta3 <= delta3,
            "weak": theta3 <= delta3,
            "fallback": None,
        }
        fallback_lhs = 2.0 * s.var_C0 / s.n0
        fallback_rhs = ((theta3 - delta3 + ratio * theta3) ** 2 - (ratio * theta3) ** 2) / (2.0 * z ** 2)
        if not checks["strong"]:
            checks["fallback"] = fallback_lhs > fallback_rhs

        if checks["variance_threshold"]:
            verdict, rule = DilutionVerdict.DILUTED_WORSE, "variance_threshold"
        elif checks["strong"]:
            verdict, rule = DilutionVerdict.DILUTED_WORSE, "strong"
        elif checks["weak"]:
            verdict, rule = DilutionVerdict.DILUTED_WORSE, "weak"
        elif abs(fallback_lhs - fallback_rhs) <= TIE_TOLERANCE * max(1.0, abs(fallback_lhs)):
            verdict, rule = DilutionVerdict.INCONCLUSIVE, "fallback"
        elif checks["fallback"]:
            verdict, rule = DilutionVerdict.DILUTED_WORSE, "fallback"
        else:
            verdict, rule = DilutionVerdict.DILUTED_BETTER, "fallback"

        direct = self.compare(s3, s2).verdict
        direct_verdict = {
            Verdict.A_SUPERIOR: DilutionVerdict.DILUTED_WORSE,
            Verdict.B_SUPERIOR: DilutionVerdict.DILUTED_BETTER,
            Verdict.NEITHER: DilutionVerdict.INCONCLUSIVE,
        }[direct]
        agrees = direct_verdict == verdict
        if not agrees:
            ComputationLogger.log_numerical_warning(
                "dilution_advice", "rule verdict differs from direct comparison",
                rule=rule, verdict=verdict.value, direct=direct_verdict.value
            )

        return DilutionAdvice(
            verdict=verdict, rule=rule, threshold=threshold, checks=checks,
            direct_verdict=direct_verdict, agrees_with_direct=agrees
        )

    # =========================================================================
    # CONTROL DUAL
    # =========================================================================

    @staticmethod
    def dual_control_coefficient(alpha: float = 0.05, power: float = 0.8) -> float:
        """(2√12(√6 - 1)z)², unos 791.6 con α = 5% y π = 80%"""
        z = distkit.z_critical(alpha) - float(distkit.normal_quantile(1.0 - power))
        return (2.0 * math.sqrt(12.0) * (math.sqrt(6.0) - 1.0) * z) ** 2

    def min_n_equalized(self, var_g: float, delta: float, alpha: float = 0.05, power: float = 0.8) -> float:
        """Usuarios por grupo a partir de los cuales el control dual gana con n y σ² iguales"""
        if delta == 0:
            raise InputValidationError("delta must be non-zero")
        return self.dual_control_coefficient(alpha, power) * var_g / delta ** 2

    def dual_control_threshold(self, scenario: PseScenario) -> DualControlResult:
        """
        Setup 4 (control dual) contra Setup 3 bajo el segundo criterio

        El lado izquierdo crece como O(√n) y el derecho depende solo de las
        proporciones n1:n2:n3
        """
        s = scenario
        for group, size in (("1", s.n1), ("2", s.n2), ("3", s.n3)):
            self._require(group, 1, size)

        s3 = self.evaluate_setup(3, s)
        s4 = self.evaluate_setup(4, s)
        z = self.z_multiplier(s)
        xi = self.xi(s)
        nq = s.n_qualified
        a_incr, b_incr = self.incrementality(s)
        x, y = self.dual_variance_terms(s)

        # convención de intercambio guiada por el signo del efecto del setup 3
        sign = -1.0 if s3.actual_effect < 0 or (s3.actual_effect == 0 and s4.actual_effect < 0) else 1.0
        effect_difference = sign * (s4.actual_effect - s3.actual_effect)
        lhs = sign * (s.n1 * b_incr - s.n2 * a_incr) / math.sqrt(xi)
        scaled = (1.0 + s.n2 / (s.n1 + s.n3)) ** 2 * x + (1.0 + s.n1 / (s.n2 + s.n3)) ** 2 * y
        rhs = math.sqrt(2.0) * z * (math.sqrt(2.0 * scaled / xi) - 1.0)

        rhs_sigma = lhs_n = min_n = None
        sigma_equal = _nearly_equal([s.var(g) for g in QUALIFIED_GROUPS])
        n_equal = _nearly_equal([s.n1, s.n2, s.n3])
        equalized_delta = (s.mu_I2 - s.mu_C2) - (s.mu_I1 - s.mu_C1) + s.mu_Ipsi - s.mu_Iphi
        if sigma_equal:
            rhs_sigma = math.sqrt(2.0) * z * (
                math.sqrt(2.0 * nq / (s.n1 + s.n3) + 2.0 * nq / (s.n2 + s.n3)) - 1.0
            )
        if n_equal:
            spread = sum(s.var(g) for g in ("C1", "I1", "C2", "I2", "Iphi", "Ipsi"))
            lhs_n = sign * math.sqrt(s.n1) * equalized_delta / (2.0 * math.sqrt(spread))
        if sigma_equal and n_equal and equalized_delta != 0:
            min_n = self.min_n_equalized(s.var_C1, equalized_delta, s.alpha, s.power)

        note = None
        if effect_difference <= 0:
            verdict = DualControlVerdict.S3_SUPERIOR
            note = "criterion 2 needs a positive gain in actual effect for setup 4"
        elif lhs - rhs > TIE_TOLERANCE:
            verdict = DualControlVerdict.S4_SUPERIOR
        else:
            verdict = DualControlVerdict.S3_SUPERIOR

        logger.debug("dual_control_threshold", verdict=verdict.value, lhs=lhs, rhs=rhs)
        return DualControlResult(
            verdict=verdict, lhs=lhs, rhs=rhs, effect_difference=effect_difference,
            mde_s4_exceeds_s3=s4.mde > s3.mde, rhs_sigma_simplified=rhs_sigma,
            lhs_n_simplified=lhs_n, min_n_equalized=min_n, note=note
        )

    def advise(self, scenario: PseScenario) -> Dict[str, object]:
        """Consejo de dilución y de control dual; cada parte se omite si el escenario no la admite"""
        report: Dict[str, object] = {"setups": self.evaluate_all(scenario)}
        report["dilution"] = self.dilution_advice(scenario) if scenario.n0 >= 1 else None
        if min(scenario.n1, scenario.n2, scenario.n3) >= 1:
            report["dual_control"] = self.dual_control_threshold(scenario)
        else:
            report["dual_control"] = None
        return report

    # =========================================================================
    # ESCENARIOS ALEATORIOS Y VERIFICACIÓN
    # =========================================================================

    @staticmethod
    def random_scenario(rng: np.random.Generator, alpha: float = 0.05, power: float = 0.8) -> PseScenario:
        """μ ~ U(-10, 10), σ² ~ U(1, 10) y n ~ 5·10^U(1, 3.5)"""
        data: Dict[str, float] = {}
        for k in range(4):
            data[f"n{k}"] = float(np.round(5.0 * 10 ** rng.uniform(1.0, 3.5)))
        for group in SCENARIO_GROUPS:
            data[f"mu_{group}"] = float(rng.uniform(-10.0, 10.0))
            data[f"var_{group}"] = float(rng.uniform(1.0, 10.0))
        return PseScenario(alpha=alpha, power=power, **data)

    @staticmethod
    def _effect_draws(
        setup_id: int,
        scenario: PseScenario,
        size: int,
        rng: np.random.Generator,
        centred: bool = False
    ) -> np.ndarray:
        """
        Efectos estimados por corrida con respuestas normales

        La suma de k respuestas de un grupo se genera como N(kμ, kσ²), lo que
        admite tamaños no enteros; centred=True resta la media de cada grupo
        """
        sizes = (scenario.n0, scenario.n1, scenario.n2, scenario.n3)
        effect = np.zeros(size)
        for sign, members in ANALYSIS_GROUPS[setup_id]:
            total = np.zeros(size)
            count = 0.0
            for group, fraction, k in members:
                n_g = fraction * sizes[k]
                if n_g <= 0:
                    continue
                mean = 0.0 if centred else n_g * scenario.mu(group)
                total += mean + math.sqrt(n_g * scenario.var(group)) * rng.standard_normal(size)
                count += n_g
            effect += sign * total / count
        return effect

    def verify_scenario(
        self,
        scenario: PseScenario,
        runs: Optional[int] = None,
        seed: Optional[int] = None,
        resamples: Optional[int] = None,
        mde_setups: Sequence[int] = SETUP_IDS,
        budget: Optional[int] = None,
        workers: Optional[int] = None
    ) -> PseVerifyReport:
        """
        Δ empírico por setup con IC bootstrap y MDE empírico por bisección
        ruidosa sobre la potencia simulada del test z
        """
        config = simlab_service.mc_config(seed, runs, workers, resamples)
        runs, seed, resamples, workers = config.runs, config.seed, config.bootstrap_resamples, config.workers
        setups: List[SetupVerification] = []
        alternative_alpha = scenario.alpha

        for setup_id, setup_seed in zip(SETUP_IDS, child_seeds(seed, len(SETUP_IDS))):
            theory = self.evaluate_setup(setup_id, scenario)
            sim_seed, boot_seed, mde_seed = child_seeds(setup_seed, 3)

            def block(rng: np.random.Generator, size: int, setup_id: int = setup_id) -> Dict[str, np.ndarray]:
                return {"effect": self._effect_draws(setup_id, scenario, size, rng)}

            draws = concat_blocks(
                simlab_service.run_blocks(block, runs, sim_seed, workers, name=f"pse_setup_{setup_id}")
            )["effect"]
            interval = simlab_service.bootstrap_ci(draws, BootstrapStatistic.MEAN, resamples, 0.05, boot_seed)
            empirical = float(draws.mean())

            empirical_mde = mde_error = None
            if setup_id in mde_setups:
                se = theory.mde / self.z_multiplier(scenario)
                crit = distkit.z_critical(alternative_alpha)

                def power_fn(theta: float, samples: int, rng: np.random.Generator, setup_id: int = setup_id):
                    estimate = theta + self._effect_draws(setup_id, scenario, samples, rng, centred=True)
                    return (np.abs(estimate / se) > crit).astype(float)

                bisection = simlab_service.noisy_bisection(
                    power_fn, scenario.power, (0.5 * theory.mde, 2.0 * theory.mde), budget, mde_seed
                )
                empirical_mde = bisection.estimate
                mde_error = (empirical_mde - theory.mde) / theory.mde

            setups.append(SetupVerification(
                setup_id=setup_id, theoretical_effect=theory.actual_effect, empirical_effect=empirical,
                effect_se=float(draws.std(ddof=1) / math.sqrt(draws.size)),
                effect_ci=[interval.low, interval.high], effect_in_ci=interval.contains(theory.actual_effect),
                effect_relative_error=(
                    (empirical - theory.actual_effect) / abs(theory.actual_effect)
                    if theory.actual_effect != 0 else None
                ),
                theoretical_mde=theory.mde, empirical_mde=empirical_mde, mde_relative_error=mde_error
            ))

        ComputationLogger.log_operation("pse_verify", runs=runs, setups=len(setups))
        return PseVerifyReport(runs=runs, seed=seed, setups=setups)


# Instancia global del servicio
pse_service = PseService()
