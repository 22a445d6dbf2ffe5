"""
Entrada y salida del CLI
Lectura validada de CSV, archivos de escenario y renderizado de reportes
"""

from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Union

import numpy as np
import orjson
import pandas as pd
from dotenv import dotenv_values
from pydantic import BaseModel

from demlab.core.exceptions import DataIntegrityError, InputValidationError, NoRowsError
from demlab.core.logging import DataLogger, get_logger
from demlab.schemas.clustering import ClusteredRecords
from demlab.schemas.common import build_model
from demlab.schemas.pse import PseScenario
from demlab.schemas.sequential import CheckpointRow, CheckpointSeries, ExperimentSeries
from demlab.schemas.testing import ResponseTable

logger = get_logger(__name__)

PathLike = Union[str, Path]

CHECKPOINT_HEADER = [
    "experiment_id", "variant_id", "metric_id", "time_index", "count_c", "mean_c", "variance_c"
]
TRANSACTION_HEADER = ["user_id", "product_id", "value"]
RESPONSE_HEADER = ["unit_id", "group", "value"]
DEFAULT_CHUNK_SIZE = 100_000

OUTPUT_FORMATS = ("json", "csv", "table")


# =============================================================================
# LECTURA DE CSV
# =============================================================================

def _read_raw(path: PathLike, header: List[str], kind: str) -> pd.DataFrame:
    """
    Leer un CSV como texto y validar el encabezado exacto

    Las filas de datos se numeran desde 1 (el encabezado es la fila 0)
    """
    path = str(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=True)
    except FileNotFoundError as e:
        raise InputValidationError(f"file not found: {path}", details={"path": path}) from e
    except pd.errors.EmptyDataError as e:
        raise NoRowsError(path) from e
    except pd.errors.ParserError as e:
        raise DataIntegrityError(f"malformed CSV: {e}", details={"path": path}) from e

    frame = _checked_frame(frame, header, kind, path)
    if frame.empty:
        raise NoRowsError(path)
    return frame


def _checked_frame(frame: pd.DataFrame, header: List[str], kind: str, path: str, first_row: int = 1) -> pd.DataFrame:
    """Encabezado exacto, índice con el número de fila del archivo y celdas sin espacios"""
    columns = [c.strip() for c in frame.columns]
    if columns != header:
        error = DataIntegrityError(
            f"unexpected header in {kind} file, expected {','.join(header)}",
            row=0, details={"path": path, "header": columns}
        )
        DataLogger.log_integrity_error(path, 0, error)
        raise error

    frame.columns = columns
    if frame.empty:
        return frame
    frame.index = pd.RangeIndex(first_row, first_row + len(frame))
    return frame.apply(lambda col: col.str.strip())


def _numeric(frame: pd.DataFrame, column: str, path: PathLike, integer: bool = False) -> pd.Series:
    """Convertir una columna a número reportando la primera fila inválida"""
    values = pd.to_numeric(frame[column], errors="coerce")
    bad = values.isna() | ~np.isfinite(values)
    if integer:
        bad |= values.notna() & (values != np.floor(values))
    if bad.any():
        row = int(bad.idxmax())
        error = DataIntegrityError(
            f"non-numeric value in column {column}: {frame.at[row, column]!r}",
            row=row, details={"path": str(path), "column": column}
        )
        DataLogger.log_integrity_error(str(path), row, error)
        raise error
    return values.astype("int64") if integer else values.astype(float)


def _require(condition: pd.Series, message: str, path: PathLike) -> None:
    """condition es True en las filas válidas"""
    if not condition.all():
        row = int((~condition).idxmax())
        error = DataIntegrityError(message, row=row, details={"path": str(path)})
        DataLogger.log_integrity_error(str(path), row, error)
        raise error


def read_checkpoint_csv(path: PathLike) -> List[CheckpointSeries]:
    """
    Series de checkpoints acumulados por (experimento, variante, métrica)

    Cada serie se ordena por time_index, que debe ser estrictamente
    creciente; count_c no puede decrecer
    """
    frame = _read_raw(path, CHECKPOINT_HEADER, "checkpoint")
    frame["time_index"] = _numeric(frame, "time_index", path, integer=True)
    frame["count_c"] = _numeric(frame, "count_c", path, integer=True)
    frame["mean_c"] = _numeric(frame, "mean_c", path)
    frame["variance_c"] = _numeric(frame, "variance_c", path)
    _require(frame["time_index"] >= 0, "time_index must be non-negative", path)
    _require(frame["count_c"] >= 0, "count_c must be non-negative", path)
    _require(frame["variance_c"] >= 0, "variance_c must be non-negative", path)
    for column in ("experiment_id", "variant_id", "metric_id"):
        _require(frame[column] != "", f"{column} must not be empty", path)
    frame["source_row"] = frame.index

    series: List[CheckpointSeries] = []
    keys = ["experiment_id", "variant_id", "metric_id"]
    for (experiment_id, variant_id, metric_id), group in frame.groupby(keys, sort=False):
        group = group.sort_values(["time_index", "source_row"], kind="stable")
        duplicated = group["time_index"].duplicated()
        _require(~duplicated, "time_index must be strictly increasing within a series", path)
        decreasing = group["count_c"].diff().fillna(0) < 0
        _require(~decreasing, "cumulative count_c decreases", path)
        rows = [
            CheckpointRow(
                time_index=int(r.time_index), count_c=int(r.count_c), mean_c=float(r.mean_c),
                variance_c=float(r.variance_c), source_row=int(r.source_row)
            )
            for r in group.itertuples(index=False)
        ]
        series.append(CheckpointSeries(
            experiment_id=experiment_id, variant_id=variant_id, metric_id=metric_id, rows=rows
        ))

    DataLogger.log_ingestion(str(path), "checkpoints", len(frame))
    return series


def pair_experiments(series: Sequence[CheckpointSeries]) -> List[ExperimentSeries]:
    """
    Agrupar en pares control/tratamiento por (experimento, métrica)

    La variante llamada "control" es el control; si no existe, la primera
    en orden lexicográfico
    """
    grouped: Dict[tuple, List[CheckpointSeries]] = {}
    for s in series:
        grouped.setdefault((s.experiment_id, s.metric_id), []).append(s)

    experiments: List[ExperimentSeries] = []
    for (experiment_id, metric_id), variants in grouped.items():
        if len(variants) != 2:
            raise InputValidationError(
                "two-sample monitors need exactly two variants",
                details={
                    "experiment_id": experiment_id, "metric_id": metric_id,
                    "variants": [v.variant_id for v in variants]
                }
            )
        variants = sorted(variants, key=lambda v: (v.variant_id.lower() != "control", v.variant_id))
        experiments.append(ExperimentSeries(
            experiment_id=experiment_id, metric_id=metric_id, control=variants[0], treatment=variants[1]
        ))
    return experiments


def read_checkpoint_dir(directory: PathLike) -> List[ExperimentSeries]:
    """Todos los *.csv de un directorio, en orden de nombre"""
    root = Path(directory)
    if not root.is_dir():
        raise InputValidationError(f"not a directory: {root}")
    files = sorted(root.glob("*.csv"))
    if not files:
        raise NoRowsError(str(root))
    experiments: List[ExperimentSeries] = []
    for file in files:
        experiments.extend(pair_experiments(read_checkpoint_csv(file)))
    return experiments


def iter_transaction_chunks(path: PathLike, chunksize: int = DEFAULT_CHUNK_SIZE) -> Iterator[pd.DataFrame]:
    """
    Filas user_id, product_id, value leídas por trozos de chunksize filas

    Cada trozo se valida por separado y conserva el número de fila del archivo;
    un archivo sin filas de datos es NoRowsError
    """
    path = str(path)
    if chunksize < 1:
        raise InputValidationError("chunksize must be at least 1", details={"chunksize": chunksize})
    try:
        head = pd.read_csv(path, dtype=str, nrows=0)
    except FileNotFoundError as e:
        raise InputValidationError(f"file not found: {path}", details={"path": path}) from e
    except pd.errors.EmptyDataError as e:
        raise NoRowsError(path) from e
    _checked_frame(head, TRANSACTION_HEADER, "transactions", path)

    reader = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=True, chunksize=chunksize)

    rows = 0
    with reader:
        try:
            for raw in reader:
                chunk = _checked_frame(raw, TRANSACTION_HEADER, "transactions", path, first_row=rows + 1)
                if chunk.empty:
                    continue
                _require(chunk["user_id"] != "", "user_id must not be empty", path)
                chunk["value"] = _numeric(chunk, "value", path)
                rows += len(chunk)
                logger.debug("transaction_chunk", path=path, rows=len(chunk), total=rows)
                yield chunk
        except pd.errors.ParserError as e:
            raise DataIntegrityError(f"malformed CSV: {e}", details={"path": path}) from e
    if rows == 0:
        raise NoRowsError(path)


def read_transactions_csv(path: PathLike) -> ClusteredRecords:
    """Filas user_id, product_id, value; product_id puede quedar vacío salvo en el modo de dos vías"""
    frame = pd.concat(list(iter_transaction_chunks(path)))
    DataLogger.log_ingestion(str(path), "transactions", len(frame))
    return ClusteredRecords(frame.reset_index(drop=True))


def read_responses_csv(path: PathLike) -> ResponseTable:
    frame = _read_raw(path, RESPONSE_HEADER, "responses")
    _require(frame["group"] != "", "group must not be empty", path)
    frame["value"] = _numeric(frame, "value", path)
    DataLogger.log_ingestion(str(path), "responses", len(frame))
    return ResponseTable(frame.reset_index(drop=True))


# =============================================================================
# ESCRITURA DE CSV
# =============================================================================

def write_checkpoint_csv(path: PathLike, series: Iterable[CheckpointSeries]) -> None:
    records = [
        {
            "experiment_id": s.experiment_id, "variant_id": s.variant_id, "metric_id": s.metric_id,
            "time_index": row.time_index, "count_c": row.count_c,
            "mean_c": row.mean_c, "variance_c": row.variance_c,
        }
        for s in series for row in s.rows
    ]
    pd.DataFrame(records, columns=CHECKPOINT_HEADER).to_csv(path, index=False, float_format="%.17g")


def write_transactions_csv(path: PathLike, records: ClusteredRecords) -> None:
    frame = records.frame.copy()
    if "product_id" not in frame:
        frame["product_id"] = ""
    frame[TRANSACTION_HEADER].to_csv(path, index=False, float_format="%.17g")


def write_responses_csv(path: PathLike, table: ResponseTable) -> None:
    table.frame[RESPONSE_HEADER].to_csv(path, index=False, float_format="%.17g")


# =============================================================================
# ESCENARIOS
# =============================================================================

def read_scenario(path: PathLike, overrides: Optional[Dict[str, Any]] = None) -> PseScenario:
    """
    Escenario PSE en formato KEY=VALUE (n0, mu_C1, var_Ipsi, alpha, ...)

    Se lee con python-dotenv; las claves desconocidas son un error
    """
    path = str(path)
    if not Path(path).is_file():
        raise InputValidationError(f"file not found: {path}", details={"path": path})
    values = {k.strip(): v for k, v in dotenv_values(path).items() if v is not None and v.strip() != ""}
    if not values:
        raise NoRowsError(path)
    unknown = sorted(set(values) - set(PseScenario.model_fields))
    if unknown:
        raise InputValidationError("unknown scenario keys", details={"path": path, "keys": unknown})
    data: Dict[str, Any] = dict(values)
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    DataLogger.log_ingestion(path, "scenario", len(values))
    return build_model(PseScenario, **data)


# =============================================================================
# REPORTES
# =============================================================================

def to_plain(obj: Any) -> Any:
    """Modelos pydantic, arrays y escalares numpy a estructuras JSON"""
    if isinstance(obj, BaseModel):
        return to_plain(obj.model_dump(mode="json", by_alias=True))
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def dump_json(payload: Any) -> str:
    options = orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_NON_STR_KEYS
    return orjson.dumps(to_plain(payload), option=options).decode()


def _records(result: Any) -> List[Dict[str, Any]]:
    """
    Filas planas para csv/table

    Una lista se renderiza por elemento; un dict con una única lista de
    objetos se expande en esa lista
    """
    result = to_plain(result)
    if isinstance(result, list):
        return [r if isinstance(r, dict) else {"value": r} for r in result]
    if isinstance(result, dict):
        nested = [k for k, v in result.items() if isinstance(v, list) and v and isinstance(v[0], dict)]
        if len(nested) == 1:
            return [r for r in result[nested[0]]]
        return [result]
    return [{"value": result}]


def render_result(result: Any, fmt: str) -> str:
    """csv y table aplanan con pandas.json_normalize; json devuelve el resultado tal cual"""
    if fmt == "json":
        return dump_json(result)
    frame = pd.json_normalize(_records(result), sep=".")
    if fmt == "csv":
        return frame.to_csv(index=False)
    return frame.to_string(index=False)
