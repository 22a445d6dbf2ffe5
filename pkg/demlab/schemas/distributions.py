"""
Esquemas de distribuciones
"""

from pydantic import BaseModel, Field


class BetaParams(BaseModel):
    """Parámetros de una distribución beta (ajuste por momentos)"""
    alpha: float = Field(..., gt=0, description="Parámetro alfa (> 0)")
    beta: float = Field(..., gt=0, description="Parámetro beta (> 0)")

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)
