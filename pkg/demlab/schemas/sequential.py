"""
Esquemas de monitores secuenciales y bayesianos
"""

import math
from typing import Dict, List, Optional
from enum import Enum

from pydantic import BaseModel, Field, validator


class SprtDecision(str, Enum):
    """Decisión del SPRT de Wald"""
    ACCEPT_H1 = "accept_h1"
    ACCEPT_H0 = "accept_h0"
    CONTINUE = "continue"


class Monitor(str, Enum):
    """Monitor usado en el replay de checkpoints"""
    MSPRT = "msprt"
    BAYES = "bayes"
    FIXED_T = "fixed_t"


class SprtState(BaseModel):
    """Estado acumulado del SPRT"""
    alpha: float = Field(..., gt=0, lt=1)
    beta: float = Field(..., gt=0, lt=1)
    log_lr: float = 0.0  # S_0 = 0
    n: int = 0
    decision: SprtDecision = SprtDecision.CONTINUE

    @property
    def upper_boundary(self) -> float:
        return math.log((1 - self.beta) / self.alpha)

    @property
    def lower_boundary(self) -> float:
        return math.log(self.beta / (1 - self.alpha))


class MsprtState(BaseModel):
    """Estado del mSPRT de dos muestras"""
    n: int = Field(0, ge=0)
    log_lambda: float = 0.0
    lambda_: float = Field(1.0, gt=0, serialization_alias="lambda")
    p_running: float = Field(1.0, ge=0, le=1)
    tau2: float = Field(..., gt=0)
    theta0: float = 0.0
    var_sum: float = Field(..., gt=0)
    alpha: float = Field(..., gt=0, lt=1)

    @property
    def reject(self) -> bool:
        return self.p_running < self.alpha


class BayesState(BaseModel):
    """Estado del test bayesiano con factor de Bayes"""
    n: int = Field(..., ge=2)
    m: int = Field(..., ge=2)
    delta: float
    effective_n: float = Field(..., gt=0)
    v2: float = Field(..., gt=0)
    prior_h0: float = Field(..., gt=0, lt=1)
    log_bf10: float
    bf10: float = Field(..., ge=0)
    posterior_h0: float = Field(..., ge=0, le=1)
    wald_root: float = Field(..., description="Estadístico de Wald con signo")


class ExperimentFinal(BaseModel):
    """Resumen de fin de experimento para estimar hiperparámetros"""
    experiment_id: Optional[str] = None
    delta: float
    cohens_d: float


class Hyperparams(BaseModel):
    """Hiperparámetros estimados entre experimentos"""
    experiments: int
    v2_hat: float = Field(..., ge=0)
    tau2_scale_hat: float = Field(..., ge=0)
    degenerate: bool = False


class CheckpointRow(BaseModel):
    """Checkpoint acumulado de una variante"""
    time_index: int = Field(..., ge=0)
    count_c: int = Field(..., ge=0)
    mean_c: float
    variance_c: float = Field(..., ge=0)
    source_row: Optional[int] = Field(None, description="Fila del CSV de origen")


class CheckpointSeries(BaseModel):
    """Serie de checkpoints de un experimento, variante y métrica"""
    experiment_id: str
    variant_id: str
    metric_id: str
    rows: List[CheckpointRow]

    @validator("rows")
    def validate_rows(cls, v):
        if not v:
            raise ValueError("la serie no tiene checkpoints")
        return v


class ExperimentSeries(BaseModel):
    """Par control/tratamiento de un experimento y métrica"""
    experiment_id: str
    metric_id: str
    control: CheckpointSeries
    treatment: CheckpointSeries


class ReplayConfig(BaseModel):
    """Configuración del replay"""
    alpha: float = Field(0.05, gt=0, lt=1)
    alpha_schedule: Optional[List[float]] = Field(None, description="alfa por checkpoint")
    theta0: float = 0.0
    tau2: Optional[float] = Field(None, gt=0, description="τ² fijo; si falta se usa tau2_scale")
    tau2_scale: float = Field(5.92e-06, gt=0)
    v2: float = Field(5.93e-06, gt=0)
    prior_h0: float = Field(0.75, gt=0, lt=1)
    bayes_threshold: Optional[float] = Field(None, gt=0, lt=1, description="Umbral de P(H0|datos)")
    practical: bool = True

    @validator("alpha_schedule")
    def validate_schedule(cls, v):
        if v is not None and any(not 0 < a < 1 for a in v):
            raise ValueError("cada alfa del calendario debe estar en (0, 1)")
        return v


class TrajectoryPoint(BaseModel):
    """Registro por checkpoint del replay"""
    t: int
    n: int
    m: int
    statistic: Optional[float] = None
    p_or_posterior: Optional[float] = None
    decision: str


class ReplayResult(BaseModel):
    """Trayectoria y decisión final de un replay"""
    experiment_id: str
    metric_id: str
    monitor: Monitor
    trajectory: List[TrajectoryPoint]
    reject: bool
    stop_index: Optional[int] = None


class ConfusionMatrix(BaseModel):
    """Matriz de confusión de un monitor contra la referencia"""
    monitor: Monitor
    reference: Monitor = Monitor.FIXED_T
    both_reject: int = 0
    monitor_only: int = Field(0, description="Monitor rechaza y la referencia no (cuasi tipo I)")
    reference_only: int = 0
    neither: int = 0

    @property
    def total(self) -> int:
        return self.both_reject + self.monitor_only + self.reference_only + self.neither

    def as_table(self) -> Dict[str, Dict[str, int]]:
        return {
            "monitor_reject": {"reference_reject": self.both_reject, "reference_not_reject": self.monitor_only},
            "monitor_not_reject": {"reference_reject": self.reference_only, "reference_not_reject": self.neither},
        }
