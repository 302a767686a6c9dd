"""
flatscan storage - CSV tables, trace files and atomic JSON documents

Every file is written to a temporary sibling and moved into place with
os.replace, so readers never observe a half-written result. Floats in CSV
files carry 17 significant digits.
"""

import csv
import io
import json
import math
import os
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from .errors import DataError, TraceError
from .solvers import IterateTrace


def format_float(value: float) -> str:
    return '%.17g' % value


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(float(value))
    return '' if value is None else str(value)


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, 'w', encoding='utf-8', newline='') as f:
        f.write(text)
    os.replace(tmp, path)
    return path


def json_safe(value):
    if isinstance(value, dict):
        return {str(k): json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    if isinstance(value, np.ndarray):
        return [json_safe(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return None if math.isnan(value) or math.isinf(value) else value
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def write_json(path, data: Dict[str, Any]) -> Path:
    """Write a JSON document (indent 2, NaN and Inf as null) atomically"""
    return atomic_write_text(path, json.dumps(json_safe(data), indent=2) + '\n')


def read_json(path) -> Dict[str, Any]:
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


class CSVTable:
    """A CSV file with a fixed header, written in one piece"""

    def __init__(self, filepath, columns: Sequence[str]):
        self.filepath = Path(filepath)
        self.columns = list(columns)

    def write(self, rows: Iterable[Dict[str, Any]]) -> Path:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator='\n')
        writer.writerow(self.columns)
        for row in rows:
            writer.writerow([_cell(row.get(col)) for col in self.columns])
        return atomic_write_text(self.filepath, buffer.getvalue())

    def read(self) -> List[Dict[str, str]]:
        if not self.filepath.exists():
            raise FileNotFoundError(f"table not found: {self.filepath}")
        with open(self.filepath, 'r', encoding='utf-8', newline='') as f:
            reader = csv.DictReader(f)
            header = reader.fieldnames or []
            missing = [c for c in self.columns if c not in header]
            if missing:
                raise TraceError(f"{self.filepath} is missing columns {missing}", row=1)
            return list(reader)


# ----------------------------------------------------------------------------
# Traces
# ----------------------------------------------------------------------------

_INT_COLUMNS = ('iter', 'krylov_iters')
_FLOAT_COLUMNS = ('loss', 'sq_grad_norm', 'r', 'r_H', 'step_size')


def write_trace(trace: IterateTrace, path) -> Path:
    return CSVTable(path, IterateTrace.COLUMNS).write(trace.rows)


def read_trace(path, stop_reason: Optional[str] = None) -> IterateTrace:
    """Rebuild a trace from its CSV file; malformed rows raise TraceError with the file row"""
    path = Path(path)
    if not path.exists():
        raise TraceError(f"trace file not found: {path}")
    if path.stat().st_size == 0:
        raise TraceError(f"trace file is empty: {path}")
    raw_rows = CSVTable(path, IterateTrace.COLUMNS).read()
    if not raw_rows:
        raise TraceError(f"trace file has no rows: {path}", row=1)
    rows = []
    for i, raw in enumerate(raw_rows):
        file_row = i + 2
        row = {}
        try:
            for col in _INT_COLUMNS:
                row[col] = int(raw[col])
            for col in _FLOAT_COLUMNS:
                row[col] = float(raw[col])
        except (TypeError, ValueError):
            raise TraceError(f"malformed value in {path}", row=file_row)
        row['krylov_stop'] = raw.get('krylov_stop') or ''
        if row['iter'] != i:
            raise TraceError(f"iterations out of order in {path}", row=file_row)
        if row['sq_grad_norm'] < 0:
            raise TraceError(f"negative squared gradient norm in {path}", row=file_row)
        rows.append(row)
    return IterateTrace.from_rows(rows, stop_reason=stop_reason)


# ----------------------------------------------------------------------------
# Parameter vectors
# ----------------------------------------------------------------------------

def write_vector(path, theta) -> Path:
    return atomic_write_text(path, ''.join(format_float(float(v)) + '\n' for v in np.ravel(theta)))


def read_vector(path) -> np.ndarray:
    """Parameter vector from CSV: one value per line, or a single row"""
    path = Path(path)
    if not path.exists():
        raise DataError(f"parameter file not found: {path}")
    values = []
    with open(path, 'r', encoding='utf-8', newline='') as f:
        for r, cells in enumerate(csv.reader(f), start=1):
            for c, cell in enumerate(cells, start=1):
                cell = cell.strip()
                if not cell:
                    continue
                try:
                    values.append(float(cell))
                except ValueError:
                    raise DataError(f"non-numeric parameter {cell!r} in {path}", row=r, column=c)
    if not values:
        raise DataError(f"parameter file is empty: {path}")
    theta = np.array(values, dtype=np.float64)
    if not np.all(np.isfinite(theta)):
        raise DataError(f"parameter file contains non-finite values: {path}")
    return theta
