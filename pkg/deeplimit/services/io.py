"""
Output files: RFC-4180 CSV with 17 significant digits, JSON manifests with
sorted keys, and the canonical config hash.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

from ..constants import CSV_FLOAT_FORMAT

logger = logging.getLogger(__name__)

_VERSIONED = ("numpy", "scipy", "Django", "djangorestframework", "celery")


def format_cell(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return CSV_FLOAT_FORMAT % value
    if hasattr(value, "item"):  # numpy scalars
        return format_cell(value.item())
    return "" if value is None else str(value)


def write_csv(path: Path, rows: Sequence[Dict[str, Any]], fieldnames: Optional[Sequence[str]] = None) -> Path:
    """Header row always written, even for an empty table."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fieldnames is None:
        fieldnames = []
        for row in rows:
            fieldnames.extend(k for k in row if k not in fieldnames)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow([format_cell(row.get(k)) for k in fieldnames])
    logger.debug("Wrote %d rows to %s", len(rows), path)
    return path


def read_csv(path: Path) -> List[Dict[str, str]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def read_pairs(path: Path, x_column: str, y_column: str) -> List[Tuple[float, float]]:
    """(x, y) float pairs from two CSV columns; rows with blank cells are skipped."""
    pairs = []
    for row in read_csv(path):
        if x_column not in row or y_column not in row:
            raise KeyError(f"{path} has no column {x_column!r} or {y_column!r}")
        if not row[x_column] or not row[y_column]:
            continue
        pairs.append((float(row[x_column]), float(row[y_column])))
    return pairs


def jsonable(obj: Any) -> Any:
    """numpy values as Python ones; non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if hasattr(obj, "tolist"):
        return jsonable(obj.tolist())
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def config_hash(config: Dict[str, Any]) -> str:
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


def write_json(path: Path, obj: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(jsonable(obj), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def library_versions(names: Iterable[str] = _VERSIONED) -> Dict[str, str]:
    versions = {}
    for name in names:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions
