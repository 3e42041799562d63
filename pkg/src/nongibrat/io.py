"""Panel CSV files, headerless TSV tables and atomic writes."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .balance import PairedPanel
from .errors import DomainError

CSV_HEADER = ("x1", "x2")


def atomic_write_bytes(path, data: bytes) -> Path:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def panel_to_csv(panel: PairedPanel) -> str:
    buf = io.StringIO()
    buf.write(",".join(CSV_HEADER) + "\n")
    np.savetxt(buf, np.column_stack([panel.x1, panel.x2]), fmt="%.17g", delimiter=",", newline="\n")
    return buf.getvalue()


def write_panel_csv(path, panel: PairedPanel) -> Path:
    return atomic_write_text(path, panel_to_csv(panel))


@dataclass(frozen=True)
class CsvStats:
    n_rows: int
    n_unparseable: int
    n_nonpositive: int

    @property
    def n_skipped(self) -> int:
        return self.n_unparseable + self.n_nonpositive

    def to_dict(self) -> dict:
        return {"n_rows": self.n_rows, "n_unparseable": self.n_unparseable, "n_nonpositive": self.n_nonpositive}


def read_panel_csv(path) -> tuple[PairedPanel, CsvStats]:
    """Read ``x1,x2`` rows; unparseable and nonpositive rows are skipped and counted.

    A missing header is tolerated when the first row is numeric.
    """
    x1, x2 = [], []
    n_rows = bad = nonpos = 0
    with open(path, newline="", encoding="utf-8") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or all(not c.strip() for c in row):
                continue
            if i == 0 and [c.strip().lower() for c in row[:2]] == list(CSV_HEADER):
                continue
            n_rows += 1
            try:
                if len(row) != 2:
                    raise ValueError
                a, b = float(row[0]), float(row[1])
            except ValueError:
                bad += 1
                continue
            if not (math.isfinite(a) and math.isfinite(b)):
                bad += 1
                continue
            if a <= 0 or b <= 0:
                nonpos += 1
                continue
            x1.append(a)
            x2.append(b)
    stats = CsvStats(n_rows, bad, nonpos)
    if not x1:
        raise DomainError(f"{path}: no usable rows ({n_rows} rows, {bad} unparseable, {nonpos} nonpositive)")
    return PairedPanel(np.array(x1), np.array(x2), meta={"source": str(path)}), stats


def write_tsv(path, columns) -> Path:
    """Headerless tab-separated numeric table, one column per array."""
    arr = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    buf = io.StringIO()
    np.savetxt(buf, arr, fmt="%.10g", delimiter="\t", newline="\n")
    return atomic_write_text(path, buf.getvalue())


def _clean(obj):
    """Make an object JSON-safe: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=False, allow_nan=False) + "\n"


def write_json(path, obj) -> Path:
    return atomic_write_text(path, dumps_json(obj))
