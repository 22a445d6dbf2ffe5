"""
Esquemas de la maquinaria Monte Carlo
"""

from typing import List, Optional
from enum import Enum

from pydantic import BaseModel, Field


class McConfig(BaseModel):
    """Configuración de una corrida Monte Carlo"""
    seed: Optional[int] = Field(None, ge=0, lt=2**64)
    runs: int = Field(10000, ge=1)
    workers: int = Field(1, ge=1)
    bootstrap_resamples: int = Field(2000, ge=100)
    block_size: int = Field(500, ge=1)


class BootstrapStatistic(str, Enum):
    MEAN = "mean"
    VARIANCE = "variance"
    COVARIANCE = "covariance"


class BootstrapInterval(BaseModel):
    """Intervalo percentil centrado"""
    statistic: BootstrapStatistic
    estimate: float
    low: float
    high: float
    resamples: int
    degenerate: bool = False

    def contains(self, value: float) -> bool:
        return self.low <= value <= self.high


class RankShape(str, Enum):
    UNIFORM = "uniform"
    UNDER_DISPERSED = "under_dispersed"
    OVER_DISPERSED = "over_dispersed"
    NON_UNIFORM = "non_uniform"


class CalibrationResult(BaseModel):
    """Uniformidad del histograma de rangos percentiles"""
    counts: List[int]
    statistic: float
    p_value: float
    shape: RankShape


class BisectionResult(BaseModel):
    """Resultado de la bisección ruidosa"""
    estimate: float
    low: float
    high: float
    steps: int
    evaluations: List[int] = Field(default_factory=list, description="Muestras usadas por paso")
