"""
Esquemas de evaluación de diseños para estrategias de personalización
"""

from typing import Dict, List, Optional
from enum import Enum

from pydantic import BaseModel, Field


# Combinaciones grupo-escenario: control C0..C3, intervención I1, I2, Iphi, Ipsi
SCENARIO_GROUPS = ("C0", "C1", "C2", "C3", "I1", "I2", "Iphi", "Ipsi")


class PseScenario(BaseModel):
    """Tamaños de los grupos de usuarios y momentos de respuesta por escenario"""
    n0: float = Field(..., ge=0, description="Usuarios que no califican para ninguna estrategia")
    n1: float = Field(..., ge=0, description="Califican solo para la estrategia A")
    n2: float = Field(..., ge=0, description="Califican solo para la estrategia B")
    n3: float = Field(..., ge=0, description="Califican para ambas estrategias")

    mu_C0: float
    mu_C1: float
    mu_C2: float
    mu_C3: float
    mu_I1: float
    mu_I2: float
    mu_Iphi: float
    mu_Ipsi: float

    var_C0: float = Field(..., gt=0)
    var_C1: float = Field(..., gt=0)
    var_C2: float = Field(..., gt=0)
    var_C3: float = Field(..., gt=0)
    var_I1: float = Field(..., gt=0)
    var_I2: float = Field(..., gt=0)
    var_Iphi: float = Field(..., gt=0)
    var_Ipsi: float = Field(..., gt=0)

    alpha: float = Field(0.05, gt=0, lt=1)
    power: float = Field(0.8, gt=0, lt=1, description="Potencia mínima π_min")

    def mu(self, group: str) -> float:
        return getattr(self, f"mu_{group}")

    def var(self, group: str) -> float:
        return getattr(self, f"var_{group}")

    @property
    def n_qualified(self) -> float:
        return self.n1 + self.n2 + self.n3

    @property
    def n_total(self) -> float:
        return self.n0 + self.n1 + self.n2 + self.n3


class SetupEvaluation(BaseModel):
    """Efecto real y MDE de un setup"""
    setup_id: int = Field(..., ge=1, le=4)
    actual_effect: float
    mde: float = Field(..., gt=0)


class Verdict(str, Enum):
    A_SUPERIOR = "a_superior"
    B_SUPERIOR = "b_superior"
    NEITHER = "neither"


class ComparisonResult(BaseModel):
    """Veredicto de superioridad entre dos setups"""
    verdict: Verdict
    criterion: Optional[str] = None
    likely_error: bool = False
    a: SetupEvaluation
    b: SetupEvaluation


class DilutionVerdict(str, Enum):
    DILUTED_WORSE = "diluted_worse"
    DILUTED_BETTER = "diluted_better"
    INCONCLUSIVE = "inconclusive"


class DilutionAdvice(BaseModel):
    """Consejo sobre dilución (Setup 3 sin diluir contra Setup 2 diluido)"""
    verdict: DilutionVerdict
    rule: str
    threshold: float = Field(..., description="Umbral de varianza para σ²_C0")
    checks: Dict[str, Optional[bool]]
    direct_verdict: DilutionVerdict
    agrees_with_direct: bool


class DualControlVerdict(str, Enum):
    S4_SUPERIOR = "s4_superior"
    S3_SUPERIOR = "s3_superior"


class DualControlResult(BaseModel):
    """Umbral de superioridad del control dual (Setup 4 contra Setup 3)"""
    verdict: DualControlVerdict
    lhs: float
    rhs: float
    effect_difference: float
    mde_s4_exceeds_s3: bool
    rhs_sigma_simplified: Optional[float] = None
    lhs_n_simplified: Optional[float] = None
    min_n_equalized: Optional[float] = None
    note: Optional[str] = None


class SetupVerification(BaseModel):
    """Verificación Monte Carlo de un setup"""
    setup_id: int
    theoretical_effect: float
    empirical_effect: float
    effect_se: float
    effect_ci: List[float]
    effect_in_ci: bool
    effect_relative_error: Optional[float] = None
    theoretical_mde: float
    empirical_mde: Optional[float] = None
    mde_relative_error: Optional[float] = None


class PseVerifyReport(BaseModel):
    """Reporte de verificación de un escenario"""
    runs: int
    seed: Optional[int] = None
    setups: List[SetupVerification]
