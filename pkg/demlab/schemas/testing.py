"""
Esquemas de tests de hipótesis y calculadoras de diseño
"""

from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, validator

from demlab.schemas.common import Alternative


class SampleSummary(BaseModel):
    """Estadísticos suficientes de un grupo"""
    count: int = Field(..., ge=1, description="Tamaño de muestra")
    mean: float = Field(..., description="Media muestral")
    variance: float = Field(..., ge=0, description="Varianza muestral (ddof=1)")

    @classmethod
    def from_values(cls, values) -> "SampleSummary":
        arr = np.asarray(values, dtype=float)
        variance = float(np.var(arr, ddof=1)) if arr.size > 1 else 0.0
        return cls(count=int(arr.size), mean=float(np.mean(arr)), variance=variance)


class TestOutcome(BaseModel):
    """Resultado de un test de hipótesis"""
    __test__ = False  # evitar que pytest lo recolecte

    test: str
    statistic: float
    p_value: Optional[float] = Field(None, ge=0, le=1)
    dof: Optional[float] = None
    reject: bool
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None
    alternative: Alternative = Alternative.TWO_SIDED
    alpha: float
    details: Dict[str, Any] = Field(default_factory=dict)

    @validator("ci_high")
    def validate_ci(cls, v, values):
        low = values.get("ci_low")
        if v is not None and low is not None and low > v:
            raise ValueError("ci_low debe ser menor o igual que ci_high")
        return v


class SampleSizeResult(BaseModel):
    """Tamaño de muestra requerido por grupo"""
    n: int = Field(..., ge=1, description="Tamaño del grupo A")
    m: int = Field(..., ge=1, description="Tamaño del grupo B")
    allocation_ratio: float
    multiplier: float = Field(..., description="(z - z_{1-π})² (σ²_a + σ²_b/k) / σ̄², σ̄² la varianza media")
    rule_of_thumb: int = Field(..., description="16 σ² / θ² por grupo")
    achieved_power: float


class SkewnessRule(BaseModel):
    """Tamaño mínimo por la regla de asimetría"""
    skewness: float
    min_sample: int
    rule_applicable: bool


@dataclass
class ResponseTable:
    """Respuestas por unidad: columnas unit_id, group, value"""
    frame: pd.DataFrame

    @property
    def groups(self) -> List[str]:
        return list(pd.unique(self.frame["group"]))

    def values(self, group: str) -> np.ndarray:
        return self.frame.loc[self.frame["group"] == group, "value"].to_numpy(dtype=float)

    def summary(self, group: str) -> SampleSummary:
        return SampleSummary.from_values(self.values(group))
