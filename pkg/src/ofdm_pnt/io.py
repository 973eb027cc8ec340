"""Atomic, byte-stable CSV and JSON output."""

from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path


def fmt(x) -> str:
    """12 significant digits for floats, 'unbounded' for None, plain text otherwise."""
    if x is None:
        return "unbounded"
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float) or hasattr(x, "dtype"):
        v = float(x)
        if math.isnan(v):
            return "nan"
        return f"{v:.12g}"
    return str(x)


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header: list[str], rows, meta: dict | None = None) -> str:
    """Comma-separated text; an optional leading '#' metadata row, then the header row."""
    lines = []
    if meta:
        lines.append("# " + ",".join(f"{k}={fmt(v)}" for k, v in meta.items()))
    lines.append(",".join(header))
    for r in rows:
        lines.append(",".join(fmt(v) for v in r))
    return "\n".join(lines) + "\n"


def write_csv(path, header, rows, meta=None) -> None:
    atomic_write_text(path, csv_text(header, rows, meta))


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "tolist"):
        return _clean(obj.tolist())
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def read_csv(path) -> tuple[dict, list[str], list[list[str]]]:
    """(metadata, header, rows) from a file written by :func:`write_csv`."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    meta = {}
    if lines and lines[0].startswith("# "):
        for item in lines[0][2:].split(","):
            k, _, v = item.partition("=")
            meta[k] = v
        lines = lines[1:]
    header = lines[0].split(",")
    return meta, header, [ln.split(",") for ln in lines[1:]]
