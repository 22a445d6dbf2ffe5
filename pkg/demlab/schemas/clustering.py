"""
Esquemas para errores estándar con respuestas dependientes
"""

from dataclasses import dataclass
from typing import Optional
from enum import Enum

import numpy as np
import pandas as pd
from scipy import sparse
from pydantic import BaseModel, Field

from demlab.core.exceptions import InputValidationError, NoRowsError


class BootstrapMode(str, Enum):
    """Esquema de reponderación Poisson"""
    ONEWAY = "oneway"
    TWOWAY = "twoway"


@dataclass
class ClusteredRecords:
    """Filas de análisis con su unidad de aleatorización (usuario) y producto opcional"""
    frame: pd.DataFrame

    def __post_init__(self):
        if self.frame.empty:
            raise NoRowsError()
        users = self.frame["user_id"].astype(str).str.strip()
        if (users == "").any():
            raise InputValidationError("user_id vacío en los registros")
        self.frame = self.frame.assign(user_id=users)

    @classmethod
    def from_arrays(cls, user_ids, values, product_ids=None) -> "ClusteredRecords":
        data = {"user_id": np.asarray(user_ids).astype(str), "value": np.asarray(values, dtype=float)}
        if product_ids is not None:
            data["product_id"] = np.asarray(product_ids).astype(str)
        return cls(pd.DataFrame(data))


@dataclass
class ClusterTotals:
    """
    Estadísticos suficientes para los bootstraps Poisson

    Sumas y conteos por usuario, y por celda (usuario, producto) en matrices
    dispersas; n, media y suma de cuadrados centrados para el SE ingenuo.
    Ocupan O(usuarios + productos + celdas), no O(filas)
    """
    n_rows: int
    mean: float
    m2: float
    user_sums: np.ndarray
    user_counts: np.ndarray
    cell_sums: Optional[sparse.csr_matrix] = None
    cell_counts: Optional[sparse.csr_matrix] = None

    @property
    def n_users(self) -> int:
        return int(self.user_sums.size)

    @property
    def has_products(self) -> bool:
        return self.cell_sums is not None


class SeEstimate(BaseModel):
    """Error estándar estimado"""
    mean: float
    se: float = Field(..., ge=0)
    se_ci_low: Optional[float] = None
    se_ci_high: Optional[float] = None
    b_resamples: int = 0
    coefficient_of_variation: Optional[float] = None
    skipped_resamples: int = 0
    degenerate: bool = False


class SeComparisonReport(BaseModel):
    """Comparación del SE ingenuo contra el bootstrap"""
    mode: BootstrapMode
    mean: float
    vanilla_se: float
    bootstrap_se: float
    ratio: Optional[float] = None
    ci: Optional[list] = None
    b: int
    cv: Optional[float] = None
