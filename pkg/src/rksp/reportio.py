"""Deterministic report serialization.

Reports must be byte-identical across runs with the same seed, so
floats are rendered at 17 significant digits (enough to round-trip any
IEEE double), dict field order is insertion order, and non-finite
values are rendered as the strings "inf", "-inf" and "nan" since JSON
has no literals for them.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

SCHEMA_VERSION = 1


def format_float(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return format(float(x), ".17g")


def _render(obj, indent: int, pad: str) -> str:
    if obj is None:
        return "null"
    if obj is True:
        return "true"
    if obj is False:
        return "false"
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return format_float(obj)
    inner = pad + "  "
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = (f"{inner}{json.dumps(str(k))}: {_render(v, indent, inner)}"
                 for k, v in obj.items())
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = (f"{inner}{_render(v, indent, inner)}" for v in obj)
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def canonical_json(obj) -> str:
    return _render(obj, 0, "") + "\n"


def write_report(obj, path) -> None:
    Path(path).write_text(canonical_json(obj), encoding="utf-8")


def read_report(path) -> dict:
    """Parse a report, mapping the non-finite sentinels back to floats."""
    def hook(d):
        return {k: _revive(v) for k, v in d.items()}
    return json.loads(Path(path).read_text(encoding="utf-8"), object_hook=hook)


def _revive(v):
    if v == "inf":
        return math.inf
    if v == "-inf":
        return -math.inf
    if v == "nan":
        return math.nan
    return v


def check_schema_version(report: dict, path="report") -> None:
    from .errors import SchemaVersionError
    version = report.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(f"{path}: unknown schema_version {version!r}")
