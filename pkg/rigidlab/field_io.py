"""RIGF field files: magic line, JSON header line, raw little-endian float64 payload."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from rigidlab.types import FormField, GridDomain, MatrixField

MAGIC = b"RIGF1"
_DTYPE = np.dtype("<f8")


def encode_field(field: FormField | MatrixField) -> bytes:
    dom = field.domain
    if isinstance(field, MatrixField):
        header = {"n": dom.n, "res": dom.res, "radius": dom.radius, "kind": "matrix", "degree": 1}
        payload = field.values
    else:
        header = {"n": dom.n, "res": dom.res, "radius": dom.radius, "kind": "form", "degree": field.degree}
        payload = field.coeffs
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + b"\n" + head + b"\n" + np.ascontiguousarray(payload, dtype=_DTYPE).tobytes(order="C")


def decode_field(data: bytes) -> FormField | MatrixField:
    magic, sep, rest = data.partition(b"\n")
    if magic != MAGIC or not sep:
        raise ValueError("not a RIGF1 file (bad magic)")
    head, sep, payload = rest.partition(b"\n")
    if not sep:
        raise ValueError("RIGF header line missing")
    try:
        header = json.loads(head.decode("utf-8"))
        n, res, radius, kind = int(header["n"]), int(header["res"]), float(header["radius"]), header["kind"]
        degree = int(header["degree"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ValueError(f"malformed RIGF header: {e}") from e
    dom = GridDomain(n=n, res=res, radius=radius)
    if kind == "matrix":
        shape = (*dom.shape, n, n)
    elif kind == "form":
        shape = (*dom.shape, math.comb(n, degree))
    else:
        raise ValueError(f"unknown RIGF kind: {kind!r}")
    expected = int(np.prod(shape)) * _DTYPE.itemsize
    if len(payload) != expected:
        raise ValueError(f"RIGF payload has {len(payload)} bytes, expected {expected}")
    values = np.frombuffer(payload, dtype=_DTYPE).reshape(shape).astype(float)
    if kind == "matrix":
        return MatrixField(dom, values)
    return FormField(dom, degree, values)


def write_field(path: Path | str, field: FormField | MatrixField) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_field(field))
    return path


def read_field(path: Path | str) -> FormField | MatrixField:
    return decode_field(Path(path).read_bytes())
