"""CSV input and JSON output.

Table files have the header ``stratum_id,n11,n12,n21,n22`` followed by zero
or more covariate columns (a constant covariate is used when there are
none).  Survival files have the header ``time,status,group``.  JSON output
writes every float with 17 significant digits so values round-trip exactly.
"""
from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import IO, Union

import numpy as np

from .errors import ParseError
from .strata import FitResult, StratifiedDataset
from .survival import SurvivalData

__all__ = [
    "SCHEMA_VERSION",
    "TABLE_HEADER",
    "SURVIVAL_HEADER",
    "read_tables_csv",
    "write_tables_csv",
    "read_survival_csv",
    "write_survival_csv",
    "dumps",
    "fit_report",
]

SCHEMA_VERSION = 1
TABLE_HEADER = ("stratum_id", "n11", "n12", "n21", "n22")
SURVIVAL_HEADER = ("time", "status", "group")

PathOrText = Union[str, Path, IO[str]]


def _open(source: PathOrText):
    if hasattr(source, "read"):
        return source, False
    return open(source, newline=""), True


def _rows(source: PathOrText):
    handle, close = _open(source)
    try:
        reader = csv.reader(handle)
        rows = [(i, row) for i, row in enumerate(reader, start=1) if row and any(c.strip() for c in row)]
    finally:
        if close:
            handle.close()
    if not rows:
        raise ParseError("empty file", line=1)
    return rows


def _number(text, line, column, integer=False):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"column {column!r}: not a number: {text!r}", line=line) from None
    if not math.isfinite(value):
        raise ParseError(f"column {column!r}: non-finite value", line=line)
    if integer:
        if value != int(value):
            raise ParseError(f"column {column!r}: expected an integer, got {text!r}", line=line)
        return int(value)
    return value


def read_tables_csv(source: PathOrText) -> StratifiedDataset:
    """Read a stratified-tables CSV file.

    Raises
    ------
    ParseError
        With the 1-based line number of the first offending line.
    """
    rows = _rows(source)
    line, header = rows[0]
    header = [h.strip() for h in header]
    if tuple(header[:5]) != TABLE_HEADER:
        raise ParseError(f"header must start with {','.join(TABLE_HEADER)}, got {','.join(header)}", line=line)
    names = header[5:]
    if len(set(names)) != len(names) or any(not n for n in names):
        raise ParseError("covariate columns need distinct non-empty names", line=line)
    ids, counts, design = [], [], []
    for line, row in rows[1:]:
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=line)
        ids.append(row[0].strip())
        c = [_number(row[k], line, header[k], integer=True) for k in range(1, 5)]
        if min(c) < 0:
            raise ParseError("counts must be non-negative", line=line)
        if c[0] + c[1] < 1 or c[2] + c[3] < 1:
            raise ParseError("each row of a table needs at least one observation", line=line)
        counts.append(c)
        design.append([_number(row[k], line, header[k]) for k in range(5, len(header))])
    if not counts:
        raise ParseError("no tables", line=line + 1)
    X = np.array(design, dtype=float) if names else None
    return StratifiedDataset(np.array(counts), X, names or None, ids)


def write_tables_csv(ds: StratifiedDataset, target: PathOrText) -> None:
    """Write ``ds`` so that :func:`read_tables_csv` returns an equal dataset."""
    handle, close = (target, False) if hasattr(target, "write") else (open(target, "w", newline=""), True)
    try:
        w = csv.writer(handle, lineterminator="\n")
        w.writerow(list(TABLE_HEADER) + list(ds.names))
        for j in range(ds.J):
            w.writerow(
                [ds.stratum_ids[j]]
                + [int(v) for v in ds.counts[j]]
                + [format(float(v), ".17g") for v in ds.design[j]]
            )
    finally:
        if close:
            handle.close()


def read_survival_csv(source: PathOrText) -> SurvivalData:
    """Read a ``time,status,group`` CSV file (status 0/1, group 1/2)."""
    rows = _rows(source)
    line, header = rows[0]
    header = [h.strip() for h in header]
    if tuple(header) != SURVIVAL_HEADER:
        raise ParseError(f"header must be {','.join(SURVIVAL_HEADER)}, got {','.join(header)}", line=line)
    t, d, g = [], [], []
    for line, row in rows[1:]:
        if len(row) != 3:
            raise ParseError(f"expected 3 fields, got {len(row)}", line=line)
        time = _number(row[0], line, "time")
        if time < 0:
            raise ParseError("negative time", line=line)
        status = _number(row[1], line, "status", integer=True)
        group = _number(row[2], line, "group", integer=True)
        if status not in (0, 1):
            raise ParseError("status must be 0 or 1", line=line)
        if group not in (1, 2):
            raise ParseError("group must be 1 or 2", line=line)
        if status == 1 and time == 0:
            raise ParseError("an event cannot occur at time 0", line=line)
        t.append(time)
        d.append(status)
        g.append(group)
    if not t:
        raise ParseError("no records", line=line + 1)
    return SurvivalData(np.array(t), np.array(d), np.array(g))


def write_survival_csv(data: SurvivalData, target: PathOrText) -> None:
    handle, close = (target, False) if hasattr(target, "write") else (open(target, "w", newline=""), True)
    try:
        w = csv.writer(handle, lineterminator="\n")
        w.writerow(SURVIVAL_HEADER)
        for t, d, g in zip(data.time, data.status, data.group):
            w.writerow([format(float(t), ".17g"), int(d), int(g)])
    finally:
        if close:
            handle.close()


def _write(value, out: io.StringIO, indent: int, level: int):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(value, np.ndarray):
        value = value.tolist()
    if isinstance(value, dict):
        if not value:
            out.write("{}")
            return
        out.write("{\n")
        items = list(value.items())
        for k, (key, v) in enumerate(items):
            out.write(f'{pad}"{_escape(str(key))}": ')
            _write(v, out, indent, level + 1)
            out.write(",\n" if k < len(items) - 1 else "\n")
        out.write(end + "}")
    elif isinstance(value, (list, tuple)):
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in value):
            out.write("[" + ", ".join(_scalar(v) for v in value) + "]")
            return
        out.write("[\n")
        for k, v in enumerate(value):
            out.write(pad)
            _write(v, out, indent, level + 1)
            out.write(",\n" if k < len(value) - 1 else "\n")
        out.write(end + "]")
    else:
        out.write(_scalar(value))


def _escape(s: str) -> str:
    out = []
    for ch in s:
        if ch in '"\\':
            out.append("\\" + ch)
        elif ord(ch) < 0x20:
            out.append(f"\\u{ord(ch):04x}")
        else:
            out.append(ch)
    return "".join(out)


def _scalar(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return format(v, ".17g") if math.isfinite(v) else "null"
    return f'"{_escape(str(v))}"'


def dumps(obj, indent: int = 2) -> str:
    """JSON text with floats at 17 significant digits; NaN and inf become null."""
    out = io.StringIO()
    _write(obj, out, indent, 0)
    out.write("\n")
    return out.getvalue()


def fit_report(fit: FitResult, **sections) -> dict:
    """Machine-readable summary of a fit; extra keyword sections are appended."""
    diagnostics = {
        "iterations": fit.iterations,
        "gradient_norm": fit.gradient_norm,
        "converged": fit.converged,
    }
    diagnostics.update(fit.diagnostics)
    report = {
        "schema_version": SCHEMA_VERSION,
        "method": fit.method,
        "names": list(fit.names),
        "estimate": fit.estimate,
        "bse": fit.bse,
        "rse": fit.rse,
        "cov_model_based": fit.cov_model_based,
        "cov_model_robust": fit.cov_model_robust,
        "diagnostics": diagnostics,
    }
    for key, value in fit.extras.items():
        report[key] = value
    report.update(sections)
    return report
