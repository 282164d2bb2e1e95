"""Deterministic text serialization shared by every writer."""

from __future__ import annotations

import json
import math

import numpy as np


def fmt_float(x) -> str:
    """17 significant digits: exact round trip for doubles."""
    return format(float(x), ".17g")


def dumps(obj, indent: int | None = None, _level: int = 0) -> str:
    """JSON text with every float written by :func:`fmt_float`.

    ``indent=None`` gives compact output; otherwise nested containers are
    broken over lines, except flat numeric lists which stay on one line.
    """
    if isinstance(obj, (np.floating, float)):
        if not math.isfinite(obj):
            raise ValueError(f"cannot serialize non-finite value {obj}")
        return fmt_float(obj)
    if isinstance(obj, np.integer):
        return str(int(obj))
    if isinstance(obj, (bool, int, str)) or obj is None:
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist(), indent, _level)
    if isinstance(obj, dict):
        parts = [f"{json.dumps(str(k), ensure_ascii=False)}:{_sp(indent)}{dumps(v, indent, _level + 1)}"
                 for k, v in obj.items()]
        return _wrap("{", "}", parts, indent, _level)
    if isinstance(obj, (list, tuple)):
        parts = [dumps(v, indent, _level + 1) for v in obj]
        flat = all(isinstance(v, (int, float, np.number)) and not isinstance(v, bool) for v in obj)
        return _wrap("[", "]", parts, None if flat else indent, _level)
    raise TypeError(f"unsupported type {type(obj)!r}")


def _sp(indent):
    return "" if indent is None else " "


def _wrap(open_, close, parts, indent, level):
    if indent is None or not parts:
        return open_ + ",".join(parts) + close
    pad = " " * (indent * (level + 1))
    return open_ + "\n" + ",\n".join(pad + p for p in parts) + "\n" + " " * (indent * level) + close


def write_json(path, obj, indent: int | None = 2):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(obj, indent) + "\n")
