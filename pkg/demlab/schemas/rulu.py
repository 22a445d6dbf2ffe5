"""
Esquemas del modelo de ranking bajo menor incertidumbre
"""

from typing import List, Optional
from enum import Enum

from pydantic import BaseModel, Field, validator


class ValueFamily(str, Enum):
    """Familia de la distribución de valores y ruido"""
    NORMAL = "normal"
    STUDENT_T = "student_t"


class NoiseLevel(str, Enum):
    """Nivel de ruido de estimación"""
    HIGH = "high"  # sigma²_1
    LOW = "low"    # sigma²_2


class RuluParams(BaseModel):
    """Parámetros del modelo de valoración"""
    n_items: int = Field(..., ge=1, description="Número de propuestas N")
    capacity: int = Field(..., ge=1, description="Propuestas seleccionadas M")
    mean_value: float = Field(0.0, description="Media del valor real")
    mean_noise: float = Field(0.0, description="Media del ruido de estimación")
    var_value: float = Field(..., ge=0, description="Varianza del valor real")
    var_noise_high: float = Field(..., gt=0, description="Varianza del ruido alto")
    var_noise_low: float = Field(..., gt=0, description="Varianza del ruido bajo")
    value_family: ValueFamily = ValueFamily.NORMAL
    dof: Optional[float] = Field(None, description="Grados de libertad para student_t")
    quantile_correction: float = Field(0.4, ge=0, lt=1, description="Constante c de los cuantiles")

    @validator("capacity")
    def validate_capacity(cls, v, values):
        """M no puede superar a N"""
        n_items = values.get("n_items")
        if n_items is not None and v > n_items:
            raise ValueError("capacity (M) no puede ser mayor que n_items (N)")
        return v

    @validator("var_noise_low")
    def validate_noise_order(cls, v, values):
        """El ruido bajo no puede superar al alto"""
        high = values.get("var_noise_high")
        if high is not None and v > high:
            raise ValueError("var_noise_low debe ser menor o igual que var_noise_high")
        return v

    @validator("dof", always=True)
    def validate_dof(cls, v, values):
        """student_t requiere varianza finita"""
        if values.get("value_family") == ValueFamily.STUDENT_T:
            if v is None or v <= 2:
                raise ValueError("student_t requiere dof > 2")
        return v

    def noise_variance(self, level: NoiseLevel) -> float:
        return self.var_noise_high if level == NoiseLevel.HIGH else self.var_noise_low

    def top_ranks(self) -> List[int]:
        """Rangos seleccionados N-M+1..N"""
        return list(range(self.n_items - self.capacity + 1, self.n_items + 1))


class RuluMoments(BaseModel):
    """Momentos del valor seleccionado bajo ambos niveles de ruido"""
    expected_w_high: float
    expected_w_low: float
    expected_gain: float
    var_w_high: float = Field(..., ge=0)
    var_w_low: float = Field(..., ge=0)
    cov_w: float
    var_gain: float = Field(..., ge=0)
    degenerate_fits: int = Field(0, description="Rangos con ajuste beta-binomial degenerado")


class RuluValueReport(BaseModel):
    """Reporte de rulu-value"""
    params: RuluParams
    moments: RuluMoments
    relative_gain: float
    sharpe_ratio: Optional[float] = None
    risk_free: float = 0.0


class RankCoincidenceFit(BaseModel):
    """Ajuste de la marginal de P(I(r)=J(s)) para un rango r"""
    rank: int
    mean_leader: float
    var_leader: float
    mu_p: float
    var_p: float
    alpha: Optional[float] = None
    beta: Optional[float] = None
    degenerate: bool = False


class SweepPoint(BaseModel):
    """Punto de un barrido de parámetros"""
    over: str
    x: float
    expected_gain: Optional[float] = None
    var_gain: Optional[float] = None
    mc_mean_gain: Optional[float] = None
    mc_se_gain: Optional[float] = None


class QuantityCalibration(BaseModel):
    """Calibración de una cantidad teórica contra el Monte Carlo"""
    quantity: str
    trials: int
    contained: int
    fraction_contained: float
    rank_uniformity_p: Optional[float] = None
    rank_shape: Optional[str] = None


class RuluVerifyReport(BaseModel):
    """Reporte de la verificación Monte Carlo del modelo"""
    trials: int
    runs: int
    resamples: int
    seed: Optional[int] = None
    quantities: List[QuantityCalibration]
