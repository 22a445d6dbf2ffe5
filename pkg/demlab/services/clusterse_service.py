"""
Servicio de errores estándar con respuestas dependientes
SE ingenuo, bootstrap Poisson de una y dos vías y diagnósticos de potencia
y cobertura cuando el SE está subestimado
"""

from typing import Callable, Dict, Iterable, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy import sparse

from demlab.core.config import settings
from demlab.core.exceptions import InputValidationError, NoRowsError
from demlab.core.logging import ComputationLogger, SimulationLogger, get_logger
from demlab.schemas.clustering import (
    BootstrapMode, ClusteredRecords, ClusterTotals, SeComparisonReport, SeEstimate
)
from demlab.services import distkit
from demlab.services.simlab_service import resolve_seed, simlab_service

logger = get_logger(__name__)

JACKKNIFE_BLOCKS = 20
RESAMPLE_BLOCK_SIZE = 100

# Fábrica de iteradores de trozos con columnas user_id, value y product_id opcional
ChunkSource = Callable[[], Iterable[pd.DataFrame]]
ClusterData = Union[ClusteredRecords, ClusterTotals]


class ClusterSeService:
    """Servicio de estimación de errores estándar por bootstrap"""

    def __init__(self):
        self.default_b = settings.BOOTSTRAP_B

    # =========================================================================
    # ESTADÍSTICOS SUFICIENTES
    # =========================================================================

    def accumulate(self, chunks: ChunkSource) -> ClusterTotals:
        """
        Estadísticos suficientes en dos pasadas sobre trozos de filas

        La primera pasada arma los índices de usuario y producto; la segunda
        acumula sumas y conteos en arreglos de tamaño ya fijo. chunks() debe
        devolver un iterador nuevo en cada llamada (p. ej. un CSV leído por
        trozos), así nunca se carga el archivo completo
        """
        users: Dict[str, int] = {}
        products: Dict[str, int] = {}
        with_products = True
        for chunk in chunks():
            for user in pd.unique(chunk["user_id"].astype(str)):
                users.setdefault(user, len(users))
            if not with_products:
                continue
            if "product_id" not in chunk or chunk["product_id"].isna().any():
                with_products = False
                continue
            product_ids = chunk["product_id"].astype(str)
            if (product_ids.str.strip() == "").any():
                with_products = False
                continue
            for product in pd.unique(product_ids):
                products.setdefault(product, len(products))
        if not users:
            raise NoRowsError()

        user_index = pd.Index(list(users))
        product_index = pd.Index(list(products)) if with_products else None
        shape = (len(users), len(products))
        user_sums = np.zeros(len(users))
        user_counts = np.zeros(len(users))
        cell_sums = cell_counts = None
        if with_products:
            cell_sums, cell_counts = sparse.csr_matrix(shape), sparse.csr_matrix(shape)

        n, mean, m2 = 0, 0.0, 0.0
        for chunk in chunks():
            values = chunk["value"].to_numpy(dtype=float)
            if values.size == 0:
                continue
            codes = user_index.get_indexer(chunk["user_id"].astype(str))
            if (codes < 0).any():
                raise InputValidationError("rows changed between passes: unknown user_id")
            user_sums += np.bincount(codes, weights=values, minlength=len(users))
            user_counts += np.bincount(codes, minlength=len(users))
            if with_products:
                product_codes = product_index.get_indexer(chunk["product_id"].astype(str))
                if (product_codes < 0).any():
                    raise InputValidationError("rows changed between passes: unknown product_id")
                cell_sums = cell_sums + sparse.csr_matrix((values, (codes, product_codes)), shape=shape)
                cell_counts = cell_counts + sparse.csr_matrix(
                    (np.ones(values.size), (codes, product_codes)), shape=shape
                )
            n, mean, m2 = self._combine_moments(n, mean, m2, values)

        logger.debug(
            "cluster_totals", rows=n, users=len(users), products=len(products),
            cells=int(cell_sums.nnz) if with_products else None
        )
        return ClusterTotals(
            n_rows=n, mean=mean, m2=m2, user_sums=user_sums, user_counts=user_counts,
            cell_sums=cell_sums, cell_counts=cell_counts
        )

    @staticmethod
    def _combine_moments(n: int, mean: float, m2: float, values: np.ndarray) -> Tuple[int, float, float]:
        """Unión de (n, media, M2) con un trozo nuevo (Chan et al.)"""
        k = values.size
        chunk_mean = float(values.mean())
        chunk_m2 = float(np.sum((values - chunk_mean) ** 2))
        if n == 0:
            return k, chunk_mean, chunk_m2
        total = n + k
        delta = chunk_mean - mean
        return total, mean + delta * k / total, m2 + chunk_m2 + delta ** 2 * n * k / total

    def totals(self, records: ClusterData) -> ClusterTotals:
        if isinstance(records, ClusterTotals):
            return records
        return self.accumulate(lambda: [records.frame])

    # =========================================================================
    # SE INGENUO
    # =========================================================================

    def vanilla_se(self, records: ClusterData) -> SeEstimate:
        """√(s²/n) sobre las unidades de análisis, ignorando la agrupación"""
        totals = self.totals(records)
        n = totals.n_rows
        if n < 2:
            raise InputValidationError("vanilla_se needs at least 2 rows", details={"rows": n})
        se = float(np.sqrt(totals.m2 / (n - 1) / n))
        degenerate = se == 0.0
        if degenerate:
            ComputationLogger.log_numerical_warning("vanilla_se", "all values are equal", rows=n)
        return SeEstimate(mean=totals.mean, se=se, degenerate=degenerate)

    # =========================================================================
    # BOOTSTRAP POISSON
    # =========================================================================

    def _check_b(self, b: Optional[int]) -> int:
        b = b or self.default_b
        if b < 100:
            raise InputValidationError("bootstrap needs b >= 100", details={"b": b})
        return b

    @staticmethod
    def _jackknife(means: np.ndarray, blocks: int = JACKKNIFE_BLOCKS) -> Tuple[float, float]:
        """SE bootstrap y su desviación por jackknife sobre bloques de remuestreos"""
        se = float(means.std(ddof=1))
        groups = np.array_split(np.arange(means.size), min(blocks, means.size))
        leave_out = np.array([
            np.delete(means, idx).std(ddof=1) for idx in groups
        ])
        g = leave_out.size
        sd = float(np.sqrt((g - 1) / g * np.sum((leave_out - leave_out.mean()) ** 2)))
        return se, sd

    def _summarize(
        self,
        name: str,
        mean: float,
        blocks,
        b: int,
        alpha: float = 0.05
    ) -> SeEstimate:
        means = np.concatenate([blk["means"] for blk in blocks])
        skipped = int(sum(int(blk["skipped"]) for blk in blocks))
        SimulationLogger.log_skipped_resamples(name, skipped, b)
        if means.size < 2:
            raise InputValidationError(
                "too few resamples with positive total weight", details={"kept": int(means.size)}
            )

        se, sd = self._jackknife(means)
        z = distkit.z_critical(alpha)
        degenerate = se == 0.0
        return SeEstimate(
            mean=mean, se=se,
            se_ci_low=max(0.0, se - z * sd), se_ci_high=se + z * sd,
            b_resamples=int(means.size),
            coefficient_of_variation=sd / se if se > 0 else None,
            skipped_resamples=skipped, degenerate=degenerate
        )

    def oneway_bootstrap_se(
        self,
        records: ClusterData,
        b: Optional[int] = None,
        seed: Optional[int] = None,
        workers: Optional[int] = None
    ) -> SeEstimate:
        """
        Un peso Poisson(1) por usuario aplicado a todas sus filas

        La media ponderada usa sumas y conteos por usuario, así cada
        remuestreo cuesta O(usuarios)
        """
        b = self._check_b(b)
        totals = self.totals(records)
        sums, counts = totals.user_sums, totals.user_counts

        def block(rng: np.random.Generator, size: int) -> Dict[str, np.ndarray]:
            weights = rng.poisson(1.0, size=(size, sums.size)).astype(float)
            num, den = weights @ sums, weights @ counts
            keep = den > 0
            return {"means": num[keep] / den[keep], "skipped": np.sum(~keep)}

        blocks = simlab_service.run_blocks(
            block, b, seed, workers, block_size=RESAMPLE_BLOCK_SIZE, name="oneway_bootstrap"
        )
        return self._summarize("oneway_bootstrap", totals.mean, blocks, b)

    def twoway_bootstrap_se(
        self,
        records: ClusterData,
        b: Optional[int] = None,
        seed: Optional[int] = None,
        workers: Optional[int] = None
    ) -> SeEstimate:
        """
        Pesos Poisson(1) independientes por usuario y por producto; cada fila recibe su producto

        Sobre las celdas (usuario, producto): num = Σ w_u·w_p·S_up, den = Σ w_u·w_p·C_up.
        Cada bloque ocupa O(bloque × (usuarios + productos))
        """
        b = self._check_b(b)
        totals = self.totals(records)
        if not totals.has_products:
            raise InputValidationError("twoway bootstrap needs product_id on every row")
        # productos × usuarios, para multiplicar por los pesos de usuario traspuestos
        sums_t = totals.cell_sums.T.tocsr()
        counts_t = totals.cell_counts.T.tocsr()
        n_products = sums_t.shape[0]

        def block(rng: np.random.Generator, size: int) -> Dict[str, np.ndarray]:
            w_user = rng.poisson(1.0, size=(size, totals.n_users)).astype(float)
            w_product = rng.poisson(1.0, size=(size, n_products)).astype(float)
            num = np.sum(np.asarray(sums_t @ w_user.T).T * w_product, axis=1)
            den = np.sum(np.asarray(counts_t @ w_user.T).T * w_product, axis=1)
            keep = den > 0
            return {"means": num[keep] / den[keep], "skipped": np.sum(~keep)}

        blocks = simlab_service.run_blocks(
            block, b, seed, workers, block_size=RESAMPLE_BLOCK_SIZE, name="twoway_bootstrap"
        )
        return self._summarize("twoway_bootstrap", totals.mean, blocks, b)

    def estimate(
        self,
        records: ClusterData,
        mode: BootstrapMode = BootstrapMode.ONEWAY,
        b: Optional[int] = None,
        seed: Optional[int] = None,
        workers: Optional[int] = None
    ) -> SeComparisonReport:
        """Reporte {mean, vanilla_se, bootstrap_se, ratio, ci, b, cv}"""
        mode = BootstrapMode(mode)
        totals = self.totals(records)
        vanilla = self.vanilla_se(totals)
        if mode == BootstrapMode.TWOWAY:
            boot = self.twoway_bootstrap_se(totals, b, seed, workers)
        else:
            boot = self.oneway_bootstrap_se(totals, b, seed, workers)

        ComputationLogger.log_operation(
            "bootstrap_se", mode=mode.value, rows=totals.n_rows, b=boot.b_resamples
        )
        return SeComparisonReport(
            mode=mode, mean=vanilla.mean, vanilla_se=vanilla.se, bootstrap_se=boot.se,
            ratio=boot.se / vanilla.se if vanilla.se > 0 else None,
            ci=[boot.se_ci_low, boot.se_ci_high], b=boot.b_resamples,
            cv=boot.coefficient_of_variation
        )

    # =========================================================================
    # DIAGNÓSTICOS
    # =========================================================================

    @staticmethod
    def power_under_se(theta: float, se: float, alpha: Optional[float] = None, dof: Optional[float] = None) -> float:
        """
        Potencia bilateral cuando el SE real es se

        Con dof usa la t de Student; sin dof el límite normal
        """
        alpha = settings.DEFAULT_ALPHA if alpha is None else alpha
        if se <= 0:
            raise InputValidationError("se must be positive", details={"se": se})
        ratio = theta / se
        if dof is None:
            crit = distkit.z_critical(alpha)
            return float(1.0 - distkit.normal_cdf(crit - ratio) + distkit.normal_cdf(-crit - ratio))
        crit = distkit.t_critical(alpha, dof)
        return float(1.0 - distkit.student_t_cdf(crit - ratio, dof) + distkit.student_t_cdf(-crit - ratio, dof))

    @staticmethod
    def coverage_under_se_ratio(ratio: float, alpha: Optional[float] = None) -> float:
        """Cobertura real 2Φ(z_{1-α/2}/ratio) - 1 de un IC construido con un SE subestimado ratio veces"""
        alpha = settings.DEFAULT_ALPHA if alpha is None else alpha
        if ratio < 1:
            raise InputValidationError("ratio must be at least 1", details={"ratio": ratio})
        return float(2.0 * distkit.normal_cdf(distkit.z_critical(alpha) / ratio) - 1.0)

    @staticmethod
    def design_effect(cluster_size: float, icc: float) -> float:
        """1 + (k - 1)ρ"""
        if cluster_size < 1:
            raise InputValidationError("cluster_size must be at least 1")
        if not -1.0 <= icc <= 1.0:
            raise InputValidationError("icc must lie in [-1, 1]")
        return 1.0 + (cluster_size - 1.0) * icc

    # =========================================================================
    # DATOS SINTÉTICOS
    # =========================================================================

    @staticmethod
    def synthetic_clustered_records(
        users: int,
        mean_cluster_size: float,
        icc: float,
        seed: Optional[int] = None,
        products: Optional[int] = None
    ) -> ClusteredRecords:
        """
        Filas con efecto de usuario N(0, ρ) y ruido N(0, 1 - ρ)

        El tamaño de cada grupo es 1 + Poisson(k - 1)
        """
        if users < 1 or mean_cluster_size < 1 or not 0.0 <= icc <= 1.0:
            raise InputValidationError(
                "synthetic records need users >= 1, mean_cluster_size >= 1 and icc in [0, 1]"
            )
        rng = np.random.default_rng(resolve_seed(seed))
        sizes = 1 + rng.poisson(mean_cluster_size - 1.0, size=users)
        user_index = np.repeat(np.arange(users), sizes)
        effects = rng.normal(0.0, np.sqrt(icc), size=users)
        values = effects[user_index] + rng.normal(0.0, np.sqrt(1.0 - icc), size=user_index.size)
        product_ids = None
        if products:
            product_ids = np.char.add("p", rng.integers(0, products, size=user_index.size).astype(str))
        return ClusteredRecords.from_arrays(np.char.add("u", user_index.astype(str)), values, product_ids)

    @staticmethod
    def analytic_clustered_se(records: ClusteredRecords, icc: float, total_variance: float = 1.0) -> float:
        """SE de la media global bajo el modelo de componentes de varianza, dados los tamaños de grupo"""
        sizes = records.frame.groupby("user_id").size().to_numpy(dtype=float)
        total = sizes.sum()
        variance = total_variance * (icc * np.sum(sizes ** 2) + (1.0 - icc) * total) / total ** 2
        return float(np.sqrt(variance))


# Instancia global del servicio
clusterse_service = ClusterSeService()
