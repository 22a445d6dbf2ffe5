"""
Fixtures compartidas para los tests de demlab
"""

import os

# Antes de importar demlab: logs silenciosos y pocos workers
os.environ.setdefault("ENVIRONMENT", "testing")
os.environ.setdefault("LOG_LEVEL", "ERROR")
os.environ.setdefault("MC_WORKERS", "2")

import numpy as np
import pytest

from demlab.schemas.pse import PseScenario
from demlab.schemas.rulu import RuluParams


@pytest.fixture
def rng():
    """Generador con semilla fija"""
    return np.random.default_rng(20240101)


@pytest.fixture
def case_study_params():
    """N = 100, M = 10, σ_V = 1, σ_1 = 0.5, σ_2 = 0.4"""
    return RuluParams(
        n_items=100, capacity=10, mean_value=0.0, var_value=1.0,
        var_noise_high=0.25, var_noise_low=0.16
    )


@pytest.fixture
def equal_scenario():
    """Grupos calificados iguales y varianzas iguales"""
    values = {f"mu_{g}": 0.0 for g in ("C0", "C1", "C2", "C3", "I1", "I2", "Iphi", "Ipsi")}
    values.update({f"var_{g}": 1.0 for g in ("C0", "C1", "C2", "C3", "I1", "I2", "Iphi", "Ipsi")})
    values.update({"mu_I1": 0.1, "mu_I2": 0.3, "mu_Iphi": 0.1, "mu_Ipsi": 0.3})
    return PseScenario(n0=1000, n1=1000, n2=1000, n3=1000, **values)


@pytest.fixture
def write_csv(tmp_path):
    """Escribir un CSV de texto y devolver su ruta"""
    def _write(name: str, text: str):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path
    return _write
