"""Text checkpoint format.

Layout::

    RLAB1
    meta <json object>
    param <name> <d1,d2,...> <v1> <v2> ...
    ...

Values are written with ``repr`` so float64 round-trips exactly.  A scalar
parameter has an empty shape field written as ``-``.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ParseError

MAGIC = "RLAB1"


def save_checkpoint(path, params, meta=None):
    lines = [MAGIC, "meta " + json.dumps(meta or {}, sort_keys=True)]
    for name in sorted(params):
        if any(c.isspace() for c in name):
            raise ValueError(f"parameter name {name!r} contains whitespace")
        arr = np.asarray(params[name], dtype=np.float64)
        shape = ",".join(str(d) for d in arr.shape) or "-"
        values = " ".join(repr(float(v)) for v in arr.reshape(-1))
        lines.append(f"param {name} {shape} {values}".rstrip())
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_checkpoint(path):
    """Return ``(params, meta)`` from an RLAB1 file."""
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or text[0].strip() != MAGIC:
        raise ParseError(f"{path}: not an {MAGIC} checkpoint", line=1)
    meta = {}
    params = {}
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        kind, _, rest = line.partition(" ")
        if kind == "meta":
            meta = json.loads(rest)
        elif kind == "param":
            parts = rest.split(" ")
            if len(parts) < 2:
                raise ParseError("param line needs a name and a shape", line=lineno)
            name, shape_s, values = parts[0], parts[1], parts[2:]
            shape = () if shape_s == "-" else tuple(int(d) for d in shape_s.split(","))
            arr = np.array([float(v) for v in values], dtype=np.float64)
            if arr.size != int(np.prod(shape)):
                raise ParseError(f"{name}: {arr.size} values for shape {shape}", line=lineno)
            params[name] = arr.reshape(shape)
        else:
            raise ParseError(f"unknown record type {kind!r}", line=lineno)
    return params, meta
