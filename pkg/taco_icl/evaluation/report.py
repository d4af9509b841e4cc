"""
Report module for the TACO demonstration configurator.
Collects per-method metric rows into a table and writes it as CSV and JSON
with a provenance block.
"""
import hashlib
import json
import platform
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, Tuple, Union

import numpy as np
import pandas as pd

import taco_icl
from taco_icl.utils.logger import get_logger

# Create logger
logger = get_logger("evaluation.report")

REPORT_COLUMNS = ["method", "setting", "accuracy", "delta", "sigma", "mean_loglik", "n_queries"]
UNHASHED_PROVENANCE = ("created_at",)


def build_report(rows: Iterable[Dict[str, Any]], extra_columns: Tuple[str, ...] = ()) -> pd.DataFrame:
    """
    Assemble metric rows into a report table.

    Args:
        rows: One mapping per (method, setting); missing metrics become NaN
        extra_columns: Columns kept after the standard ones (e.g. "reference")

    Returns:
        DataFrame with the standard columns first
    """
    columns = REPORT_COLUMNS + [c for c in extra_columns if c not in REPORT_COLUMNS]
    return pd.DataFrame(list(rows), columns=columns)


def provenance(config: Dict[str, Any], command: str) -> Dict[str, Any]:
    """Where a report's numbers come from."""
    return {
        "command": command,
        "config_hash": config.get("config_hash"),
        "seed": int(config["seed"]),
        "taco_icl_version": taco_icl.__version__,
        "numpy_version": np.__version__,
        "pandas_version": pd.__version__,
        "python_version": platform.python_version(),
        "created_at": datetime.now(timezone.utc).isoformat(),
    }


def _records(table: pd.DataFrame):
    return json.loads(table.to_json(orient="records", double_precision=15))


def report_hash(table: pd.DataFrame, meta: Dict[str, Any]) -> str:
    """SHA-256 over the rows and the provenance, timestamps excluded."""
    stable = {k: v for k, v in meta.items() if k not in UNHASHED_PROVENANCE}
    payload = json.dumps({"rows": _records(table), "provenance": stable}, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def write_report(
    table: pd.DataFrame,
    meta: Dict[str, Any],
    output_dir: Union[str, Path],
    name: str = "report"
) -> Tuple[Path, Path]:
    """
    Write ``<name>.csv`` and ``<name>.json``.

    Args:
        table: Report table
        meta: Provenance block
        output_dir: Destination directory
        name: File stem

    Returns:
        (csv path, json path)
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    csv_path = output_dir / f"{name}.csv"
    json_path = output_dir / f"{name}.json"
    table.to_csv(csv_path, index=False)
    document = {"provenance": meta, "report_hash": report_hash(table, meta), "rows": _records(table)}
    json_path.write_text(json.dumps(document, indent=2), encoding="utf-8")
    logger.info(f"Wrote report with {len(table)} rows to {csv_path} and {json_path}")
    return csv_path, json_path


def load_report(path: Union[str, Path]) -> Tuple[pd.DataFrame, Dict[str, Any]]:
    document = json.loads(Path(path).read_text(encoding="utf-8"))
    return pd.DataFrame(document["rows"]), document["provenance"]
