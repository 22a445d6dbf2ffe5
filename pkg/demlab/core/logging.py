"""
Configuración de logging estructurado para demlab
Utiliza loguru y structlog; stdout queda reservado para los reportes del CLI
"""

import logging
import os
import sys
from typing import Any, Dict, Optional
from datetime import datetime

import structlog
from loguru import logger

from demlab.core.config import settings


class InterceptHandler(logging.Handler):
    """Reenviar registros de logging estándar (y de structlog) a loguru"""

    def emit(self, record: logging.LogRecord):
        try:
            level = logger.level(record.levelname).name
        except ValueError:
            level = record.levelno

        # Subir hasta el llamador real, fuera del módulo logging
        frame, depth = logging.currentframe(), 2
        while frame is not None and frame.f_code.co_filename == logging.__file__:
            frame = frame.f_back
            depth += 1

        logger.opt(depth=depth, exception=record.exc_info).log(level, record.getMessage())


def configure_logging(level: Optional[str] = None):
    """
    Configurar el sistema de logging de la aplicación
    """
    level = level or settings.LOG_LEVEL

    # Configurar loguru
    logger.remove()  # Remover handler por defecto

    # Consola en stderr: los reportes JSON/CSV van por stdout
    logger.add(
        sys.stderr,
        format="<green>{time:YYYY-MM-DD HH:mm:ss}</green> | "
               "<level>{level: <8}</level> | "
               "<cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> | "
               "<level>{message}</level> {extra}",
        level=level,
        colorize=settings.is_development
    )

    if settings.LOG_TO_FILE:
        log_dir = os.path.dirname(settings.log_path)
        if log_dir and not os.path.exists(log_dir):
            os.makedirs(log_dir, exist_ok=True)

        logger.add(
            settings.log_path,
            format="{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} | {message}",
            level=level,
            rotation="10 MB",
            retention="7 days",
            compression="gz",
            serialize=settings.LOG_FORMAT == "json"
        )

    # structlog escribe en logging estándar; InterceptHandler lo reenvía a loguru
    logging.basicConfig(handlers=[InterceptHandler()], level=level, force=True)

    # Configurar structlog
    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.stdlib.PositionalArgumentsFormatter(),
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.processors.UnicodeDecoder(),
            structlog.processors.JSONRenderer() if settings.LOG_FORMAT == "json"
            else structlog.dev.ConsoleRenderer(colors=False)
        ],
        wrapper_class=structlog.stdlib.BoundLogger,
        logger_factory=structlog.stdlib.LoggerFactory(),
        context_class=dict,
        cache_logger_on_first_use=True,
    )


class ComputationLogger:
    """Logger especializado para cálculos estadísticos"""

    @staticmethod
    def log_operation(operation: str, duration: float = None, **metadata: Any):
        """Log de una operación terminada"""
        log_data = {
            "event": "computation",
            "operation": operation,
            "timestamp": datetime.utcnow().isoformat()
        }

        if duration is not None:
            log_data["duration_ms"] = round(duration * 1000, 2)

        if metadata:
            log_data["metadata"] = metadata

        logger.debug("Computation", **log_data)

    @staticmethod
    def log_numerical_warning(operation: str, reason: str, **details: Any):
        """Log de advertencia numérica (varianzas recortadas, ajustes degenerados, etc.)"""
        log_data = {
            "event": "numerical_warning",
            "operation": operation,
            "reason": reason,
            "details": details,
            "timestamp": datetime.utcnow().isoformat()
        }

        logger.warning("Numerical Warning", **log_data)

    @staticmethod
    def log_error(operation: str, error: Exception):
        """Log de error en un cálculo"""
        log_data = {
            "event": "computation_error",
            "operation": operation,
            "error_type": type(error).__name__,
            "error_message": str(error),
            "timestamp": datetime.utcnow().isoformat()
        }

        logger.error("Computation Error", **log_data)


class SimulationLogger:
    """Logger especializado para simulaciones Monte Carlo"""

    @staticmethod
    def log_batch_start(name: str, runs: int, seed: Optional[int], workers: int):
        """Log de inicio de un lote de simulación"""
        log_data = {
            "event": "simulation_start",
            "simulation": name,
            "runs": runs,
            "seed": seed,
            "workers": workers,
            "timestamp": datetime.utcnow().isoformat()
        }

        logger.info("Simulation Start", **log_data)

    @staticmethod
    def log_batch_finish(name: str, runs: int, elapsed: float, **summary: Any):
        """Log de fin de un lote de simulación"""
        log_data = {
            "event": "simulation_finish",
            "simulation": name,
            "runs": runs,
            "elapsed_ms": round(elapsed * 1000, 2),
            "timestamp": datetime.utcnow().isoformat()
        }

        if summary:
            log_data["summary"] = summary

        logger.info("Simulation Finish", **log_data)

    @staticmethod
    def log_skipped_resamples(name: str, skipped: int, total: int):
        """Log de remuestreos descartados por peso total cero"""
        log_data = {
            "event": "skipped_resamples",
            "simulation": name,
            "skipped": skipped,
            "total": total,
            "rate": skipped / total if total else 0.0,
            "timestamp": datetime.utcnow().isoformat()
        }

        if total and skipped / total > 0.01:
            logger.warning("Skipped Resamples", **log_data)
        else:
            logger.debug("Skipped Resamples", **log_data)


class DataLogger:
    """Logger especializado para ingestión de archivos"""

    @staticmethod
    def log_ingestion(path: str, kind: str, rows: int):
        """Log de lectura de archivo"""
        log_data = {
            "event": "data_ingestion",
            "path": path,
            "kind": kind,
            "rows": rows,
            "timestamp": datetime.utcnow().isoformat()
        }

        logger.info("Data Ingestion", **log_data)

    @staticmethod
    def log_integrity_error(path: str, row: Optional[int], error: Exception):
        """Log de error de integridad de datos"""
        log_data: Dict[str, Any] = {
            "event": "data_integrity_error",
            "path": path,
            "row": row,
            "error_type": type(error).__name__,
            "error_message": str(error),
            "timestamp": datetime.utcnow().isoformat()
        }

        logger.error("Data Integrity Error", **log_data)


# Funciones de utilidad para logging
def get_logger(name: str):
    """Obtener logger con contexto"""
    return structlog.get_logger(name)


def log_startup_info(command: str):
    """Log información de inicio de un comando"""
    logger.debug(
        "Command Starting",
        app_name=settings.APP_NAME,
        version=settings.APP_VERSION,
        environment=settings.ENVIRONMENT,
        debug=settings.DEBUG,
        command=command
    )


# Inicializar logging al importar el módulo
configure_logging()
