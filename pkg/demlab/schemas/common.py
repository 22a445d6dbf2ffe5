"""
Esquemas comunes de demlab
Modelos base y utilitarios reutilizables
"""

from typing import Annotated, Optional, Any, Dict, Type, TypeVar
from datetime import datetime
from enum import Enum

from pydantic import BaseModel, Field, ValidationError

from demlab.core.exceptions import InputValidationError


M = TypeVar("M", bound=BaseModel)

# Probabilidad en [0, 1]
Probability = Annotated[float, Field(ge=0.0, le=1.0)]

REPORT_SCHEMA_VERSION = 1


class ResponseStatus(str, Enum):
    """Estado de un reporte"""
    SUCCESS = "success"
    ERROR = "error"
    WARNING = "warning"


class Alternative(str, Enum):
    """Dirección de la hipótesis alternativa"""
    TWO_SIDED = "two_sided"
    GREATER = "greater"
    LESS = "less"


class Report(BaseModel):
    """Reporte estándar emitido por el CLI"""
    schema_version: int = Field(default=REPORT_SCHEMA_VERSION, serialization_alias="schema")
    status: ResponseStatus = ResponseStatus.SUCCESS
    command: str
    result: Any = None
    timestamp: datetime = Field(default_factory=datetime.utcnow)


class ErrorReport(BaseModel):
    """Reporte de error estandarizado"""
    schema_version: int = Field(default=REPORT_SCHEMA_VERSION, serialization_alias="schema")
    status: ResponseStatus = ResponseStatus.ERROR
    message: str
    error_code: Optional[str] = None
    details: Optional[Dict[str, Any]] = None
    timestamp: datetime = Field(default_factory=datetime.utcnow)


def build_model(model: Type[M], **data: Any) -> M:
    """
    Construir un modelo pydantic traduciendo errores de validación
    a InputValidationError (código de salida 2 en el CLI)
    """
    try:
        return model(**data)
    except ValidationError as e:
        errors = [
            {"field": ".".join(str(p) for p in err["loc"]), "message": err["msg"]}
            for err in e.errors()
        ]
        summary = "; ".join(f"{err['field']}: {err['message']}" for err in errors)
        raise InputValidationError(
            f"invalid {model.__name__}: {summary}",
            details={"errors": errors}
        ) from e
