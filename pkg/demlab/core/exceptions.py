"""
Excepciones de demlab
Dos familias: errores de entrada (código de salida 2) y fallos numéricos (código 3)
"""

from typing import Any, Dict, Optional


class DemlabError(Exception):
    """Error base de la aplicación"""

    error_code: str = "demlab_error"
    exit_code: int = 1

    def __init__(
        self,
        message: str,
        error_code: Optional[str] = None,
        details: Optional[Dict[str, Any]] = None
    ):
        super().__init__(message)
        self.message = message
        if error_code is not None:
            self.error_code = error_code
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "message": self.message,
            "error_code": self.error_code,
            "details": self.details,
        }


# =============================================================================
# ERRORES DE ENTRADA
# =============================================================================

class InputValidationError(DemlabError):
    """Parámetros o datos de entrada inválidos"""
    error_code = "invalid_input"
    exit_code = 2


class DataIntegrityError(InputValidationError):
    """Archivo con filas inválidas; indica la fila problemática"""
    error_code = "data_integrity"

    def __init__(self, message: str, row: Optional[int] = None, details: Optional[Dict[str, Any]] = None):
        details = dict(details or {})
        if row is not None:
            details["row"] = row
            message = f"{message} (row {row})"
        super().__init__(message, details=details)
        self.row = row


class NoRowsError(InputValidationError):
    """Archivo sin filas de datos"""
    error_code = "no_rows"

    def __init__(self, path: str = ""):
        super().__init__("no rows", details={"path": path} if path else None)


class InsufficientGroupError(InputValidationError):
    """Grupo de usuarios demasiado pequeño para el setup pedido"""
    error_code = "insufficient_group"

    def __init__(self, group: str, required: int, actual: float):
        super().__init__(
            f"group {group} needs at least {required} users, got {actual:g}",
            details={"group": group, "required": required, "actual": actual}
        )
        self.group = group


class NoDilutionError(InputValidationError):
    """Sin usuarios no calificados (n0 = 0) no hay dilución que evaluar"""
    error_code = "no_dilution_possible"

    def __init__(self):
        super().__init__("no dilution possible: n0 must be at least 1")


# =============================================================================
# ERRORES NUMÉRICOS
# =============================================================================

class NumericalError(DemlabError):
    """Fallo numérico durante un cálculo"""
    error_code = "numerical_failure"
    exit_code = 3


class DegenerateSampleError(NumericalError):
    """Muestras sin varianza donde el estadístico la necesita"""
    error_code = "degenerate_samples"

    def __init__(self, message: str = "degenerate samples", details: Optional[Dict[str, Any]] = None):
        super().__init__(message, details=details)


class DegenerateFitError(NumericalError):
    """Ajuste beta-binomial por momentos con parámetros no positivos"""
    error_code = "degenerate_fit"
