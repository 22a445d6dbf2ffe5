"""
Funciones especiales y distribuciones usadas por el resto de servicios
Normal, t de Student, chi², binomial, beta-binomial y la función T de Owen
"""

from typing import Union

import numpy as np
from scipy import special, stats

from demlab.core.exceptions import DegenerateFitError, InputValidationError
from demlab.schemas.common import Alternative
from demlab.schemas.distributions import BetaParams


ArrayLike = Union[float, np.ndarray]


def _as_result(value: np.ndarray) -> ArrayLike:
    """Devolver float para entradas escalares"""
    return float(value) if np.ndim(value) == 0 else value


def _check_probability(p: ArrayLike, name: str = "p", open_interval: bool = True) -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    if open_interval:
        bad = ~((arr > 0.0) & (arr < 1.0))
    else:
        bad = ~((arr >= 0.0) & (arr <= 1.0))
    if np.any(bad):
        bounds = "(0, 1)" if open_interval else "[0, 1]"
        raise InputValidationError(f"{name} must lie in {bounds}", details={name: np.asarray(p).tolist()})
    return arr


def _check_dof(dof: ArrayLike, minimum: float = 0.0, strict: bool = True) -> np.ndarray:
    arr = np.asarray(dof, dtype=float)
    bad = arr <= minimum if strict else arr < minimum
    if np.any(bad | np.isnan(arr)):
        raise InputValidationError(f"dof must be {'>' if strict else '>='} {minimum:g}")
    return arr


# =============================================================================
# NORMAL
# =============================================================================

def normal_cdf(x: ArrayLike) -> ArrayLike:
    return _as_result(special.ndtr(np.asarray(x, dtype=float)))


def normal_sf(x: ArrayLike) -> ArrayLike:
    """Cola derecha 1 - Φ(x) sin cancelación"""
    return _as_result(special.ndtr(-np.asarray(x, dtype=float)))


def normal_pdf(x: ArrayLike) -> ArrayLike:
    return _as_result(stats.norm.pdf(np.asarray(x, dtype=float)))


def normal_quantile(p: ArrayLike) -> ArrayLike:
    """Inversa de Φ; exige p en (0, 1)"""
    return _as_result(special.ndtri(_check_probability(p)))


def z_critical(alpha: float, alternative: Alternative = Alternative.TWO_SIDED) -> float:
    """Valor crítico z_{1-α/2} (bilateral) o z_{1-α} (unilateral)"""
    _check_probability(alpha, "alpha")
    if Alternative(alternative) == Alternative.TWO_SIDED:
        return float(special.ndtri(1.0 - alpha / 2.0))
    return float(special.ndtri(1.0 - alpha))


# =============================================================================
# T DE STUDENT
# =============================================================================

def student_t_cdf(x: ArrayLike, dof: ArrayLike) -> ArrayLike:
    """CDF de la t; admite grados de libertad fraccionarios (Welch-Satterthwaite)"""
    nu = _check_dof(dof)
    return _as_result(special.stdtr(nu, np.asarray(x, dtype=float)))


def student_t_sf(x: ArrayLike, dof: ArrayLike) -> ArrayLike:
    nu = _check_dof(dof)
    return _as_result(special.stdtr(nu, -np.asarray(x, dtype=float)))


def student_t_quantile(p: ArrayLike, dof: ArrayLike) -> ArrayLike:
    nu = _check_dof(dof)
    return _as_result(special.stdtrit(nu, _check_probability(p)))


def t_critical(alpha: float, dof: float, alternative: Alternative = Alternative.TWO_SIDED) -> float:
    _check_probability(alpha, "alpha")
    q = 1.0 - alpha / 2.0 if Alternative(alternative) == Alternative.TWO_SIDED else 1.0 - alpha
    return float(student_t_quantile(q, dof))


# =============================================================================
# OWEN'S T
# =============================================================================

def owens_t(h: ArrayLike, a: ArrayLike) -> ArrayLike:
    """
    T(h, a) = (1/2π) ∫₀ᵃ exp(-h²(1+x²)/2) / (1+x²) dx

    scipy implementa el algoritmo por regiones de Patefield y Tandy
    """
    h_arr = np.asarray(h, dtype=float)
    a_arr = np.asarray(a, dtype=float)
    if not (np.all(np.isfinite(h_arr)) and np.all(np.isfinite(a_arr))):
        raise InputValidationError("owens_t requires finite h and a")
    return _as_result(special.owens_t(h_arr, a_arr))


# =============================================================================
# BINOMIAL Y CHI²
# =============================================================================

def _check_binomial(k: ArrayLike, n: int, p: float) -> np.ndarray:
    if n < 0 or int(n) != n:
        raise InputValidationError("n must be a non-negative integer", details={"n": n})
    _check_probability(p, "p", open_interval=False)
    k_arr = np.asarray(k)
    if np.any(k_arr < 0) or np.any(k_arr > n):
        raise InputValidationError("k must satisfy 0 <= k <= n", details={"n": n})
    return k_arr


def binomial_pmf(k: ArrayLike, n: int, p: float) -> ArrayLike:
    k_arr = _check_binomial(k, n, p)
    return _as_result(stats.binom.pmf(k_arr, int(n), p))


def binomial_cdf(k: ArrayLike, n: int, p: float) -> ArrayLike:
    k_arr = _check_binomial(k, n, p)
    return _as_result(stats.binom.cdf(k_arr, int(n), p))


def binomial_sf(k: ArrayLike, n: int, p: float) -> ArrayLike:
    """P(X > k); k = -1 se admite para obtener P(X >= 0) = 1"""
    k_arr = np.asarray(k)
    _check_binomial(np.clip(k_arr, 0, n), n, p)
    return _as_result(stats.binom.sf(k_arr, int(n), p))


def binomial_quantile(q: float, n: int, p: float) -> int:
    """Menor k con CDF(k) >= q"""
    _check_binomial(0, n, p)
    _check_probability(q, "q", open_interval=False)
    k = int(stats.binom.ppf(q, int(n), p))
    # ppf trabaja en coma flotante; corregir un paso si la CDF queda justo por debajo
    while k < n and stats.binom.cdf(k, int(n), p) < q:
        k += 1
    while k > 0 and stats.binom.cdf(k - 1, int(n), p) >= q:
        k -= 1
    return k


def chi2_cdf(x: ArrayLike, dof: ArrayLike) -> ArrayLike:
    nu = _check_dof(dof, minimum=1.0, strict=False)
    return _as_result(special.chdtr(nu, np.asarray(x, dtype=float)))


def chi2_sf(x: ArrayLike, dof: ArrayLike) -> ArrayLike:
    """Cola derecha, precisa para estadísticos enormes (p < 1e-100)"""
    nu = _check_dof(dof, minimum=1.0, strict=False)
    return _as_result(special.chdtrc(nu, np.asarray(x, dtype=float)))


def chi2_quantile(q: ArrayLike, dof: ArrayLike) -> ArrayLike:
    nu = _check_dof(dof, minimum=1.0, strict=False)
    return _as_result(stats.chi2.ppf(_check_probability(q, "q"), nu))


# =============================================================================
# BETA-BINOMIAL
# =============================================================================

def beta_binomial_logpmf(k: ArrayLike, n: int, params: BetaParams) -> ArrayLike:
    """log pmf en forma cerrada vía log-gamma"""
    if n < 0 or int(n) != n:
        raise InputValidationError("n must be a non-negative integer", details={"n": n})
    k_arr = np.asarray(k, dtype=float)
    if np.any(k_arr < 0) or np.any(k_arr > n):
        raise InputValidationError("k must satisfy 0 <= k <= n", details={"n": n})
    a, b = params.alpha, params.beta
    log_comb = special.gammaln(n + 1) - special.gammaln(k_arr + 1) - special.gammaln(n - k_arr + 1)
    value = log_comb + special.betaln(k_arr + a, n - k_arr + b) - special.betaln(a, b)
    return _as_result(value)


def beta_binomial_pmf(k: ArrayLike, n: int, params: BetaParams) -> ArrayLike:
    return _as_result(np.exp(beta_binomial_logpmf(k, n, params)))


def fit_beta_moments(mean: float, variance: float) -> BetaParams:
    """
    Ajuste por momentos de una beta con media y varianza dadas

    Levanta DegenerateFitError cuando alfa o beta no son positivos;
    el llamador decide cómo tratar el ajuste degenerado
    """
    if not (0.0 < mean < 1.0) or not variance > 0.0:
        raise DegenerateFitError(
            "degenerate beta fit: mean must lie in (0, 1) and variance must be positive",
            details={"mean": mean, "variance": variance}
        )
    alpha = ((1.0 - mean) / variance - 1.0 / mean) * mean ** 2
    beta = alpha * (1.0 / mean - 1.0)
    if not (np.isfinite(alpha) and np.isfinite(beta) and alpha > 0.0 and beta > 0.0):
        raise DegenerateFitError(
            "degenerate beta fit: non-positive parameters",
            details={"mean": mean, "variance": variance, "alpha": alpha, "beta": beta}
        )
    return BetaParams(alpha=alpha, beta=beta)
