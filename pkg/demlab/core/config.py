"""
Configuración principal de demlab
Maneja variables de entorno y valores por defecto de los cálculos estadísticos
"""

import os
from typing import Optional
from functools import lru_cache

from pydantic import validator
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """Configuración de la aplicación"""

    # Información de la aplicación
    APP_NAME: str = "demlab"
    APP_VERSION: str = "1.0.0"
    DEBUG: bool = False
    ENVIRONMENT: str = "production"

    # Logging
    LOG_LEVEL: str = "WARNING"
    LOG_FORMAT: str = "console"
    LOG_FILE: str = "logs/demlab.log"
    LOG_TO_FILE: bool = False

    # Reproducibilidad (el flag --seed del CLI tiene prioridad)
    DEMLAB_SEED: Optional[int] = None

    # Monte Carlo
    MC_WORKERS: int = 4
    MC_RUNS: int = 10000
    MC_BLOCK_SIZE: int = 500
    MC_BOOTSTRAP_RESAMPLES: int = 2000

    # Modelo de ranking
    QUANTILE_CORRECTION: float = 0.4

    # Diseño de tests
    DEFAULT_ALPHA: float = 0.05
    DEFAULT_POWER: float = 0.8

    # Bootstrap de errores estándar
    BOOTSTRAP_B: int = 1000

    # Bisección ruidosa
    BISECTION_MAX_STEPS: int = 10
    BISECTION_ALPHA: float = 0.01
    BISECTION_INITIAL_SAMPLES: int = 250
    BISECTION_MAX_SAMPLES: int = 64000

    # Monitores secuenciales y bayesianos
    MSPRT_TAU2_SCALE: float = 5.92e-06
    BAYES_V2: float = 5.93e-06
    BAYES_PRIOR_H0: float = 0.75

    @validator("ENVIRONMENT")
    def validate_environment(cls, v: str) -> str:
        """Validar que el entorno sea conocido"""
        if v.lower() not in ("development", "production", "testing"):
            raise ValueError(f"Entorno desconocido: {v}")
        return v.lower()

    @validator("LOG_FORMAT")
    def validate_log_format(cls, v: str) -> str:
        """Validar formato de log"""
        if v not in ("json", "console"):
            raise ValueError("LOG_FORMAT debe ser 'json' o 'console'")
        return v

    @validator("DEFAULT_ALPHA", "DEFAULT_POWER", "BISECTION_ALPHA", "BAYES_PRIOR_H0")
    def validate_probability(cls, v: float) -> float:
        """Validar probabilidades abiertas (0, 1)"""
        if not 0.0 < v < 1.0:
            raise ValueError("El valor debe estar en el intervalo (0, 1)")
        return v

    @validator("MC_WORKERS", "MC_RUNS", "MC_BLOCK_SIZE", "BISECTION_MAX_STEPS", "BISECTION_INITIAL_SAMPLES")
    def validate_positive_count(cls, v: int) -> int:
        """Validar conteos positivos"""
        if v < 1:
            raise ValueError("El valor debe ser un entero positivo")
        return v

    @validator("MC_BOOTSTRAP_RESAMPLES", "BOOTSTRAP_B")
    def validate_resamples(cls, v: int) -> int:
        """Validar el número mínimo de remuestreos"""
        if v < 100:
            raise ValueError("Se requieren al menos 100 remuestreos")
        return v

    @validator("MSPRT_TAU2_SCALE", "BAYES_V2")
    def validate_positive_real(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("El hiperparámetro debe ser positivo")
        return v

    @property
    def is_production(self) -> bool:
        """Verificar si estamos en producción"""
        return self.ENVIRONMENT.lower() == "production"

    @property
    def is_development(self) -> bool:
        """Verificar si estamos en desarrollo"""
        return self.ENVIRONMENT.lower() == "development"

    @property
    def log_path(self) -> str:
        """Ruta completa para logs"""
        return os.path.join(os.getcwd(), self.LOG_FILE)

    class Config:
        env_file = ".env"
        case_sensitive = True


@lru_cache()
def get_settings() -> Settings:
    """
    Obtener configuración de la aplicación (cached)
    """
    return Settings()


# Configuraciones específicas por entorno
class DevelopmentSettings(Settings):
    """Configuración para desarrollo"""
    DEBUG: bool = True
    LOG_LEVEL: str = "DEBUG"
    MC_WORKERS: int = 2


class ProductionSettings(Settings):
    """Configuración para producción"""
    DEBUG: bool = False
    LOG_LEVEL: str = "WARNING"


class TestingSettings(Settings):
    """Configuración para testing"""
    DEBUG: bool = True
    LOG_LEVEL: str = "ERROR"
    DEMLAB_SEED: Optional[int] = 20240101
    MC_RUNS: int = 2000
    MC_BOOTSTRAP_RESAMPLES: int = 500


def get_settings_by_environment(environment: Optional[str] = None) -> Settings:
    """
    Obtener configuración basada en el entorno
    """
    if environment is None:
        environment = os.getenv("ENVIRONMENT", "production")

    environment = environment.lower()

    if environment == "development":
        return DevelopmentSettings(ENVIRONMENT="development")
    elif environment == "testing":
        return TestingSettings(ENVIRONMENT="testing")
    else:
        return ProductionSettings(ENVIRONMENT="production")


# Instancia global de configuración
settings = get_settings()
