"""Dense matrix carrier and its JSON wire format.

Matrices are plain ``numpy`` arrays (float64 or complex128). The JSON form is
``{"rows": m, "cols": n, "field": "real"|"complex", "data": [...]}`` in
row-major order, complex entries written as ``[re, im]`` pairs. ``json``
serializes floats with ``repr``, which round-trips (17 significant digits).
"""
import numpy as np

from ripkit.errors import ValidationError


def as_matrix(a, name="matrix"):
    """Validate and return ``a`` as a finite 2-D float64/complex128 array."""
    arr = np.asarray(a)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValidationError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if np.iscomplexobj(arr):
        arr = arr.astype(np.complex128)
    else:
        arr = arr.astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} has non-finite entries")
    return arr


def field_of(a):
    return "complex" if np.iscomplexobj(a) else "real"


def matrix_to_json(a):
    a = as_matrix(a)
    rows, cols = a.shape
    flat = a.ravel(order="C")
    if np.iscomplexobj(a):
        data = [[float(z.real), float(z.imag)] for z in flat]
    else:
        data = [float(v) for v in flat]
    return {"rows": rows, "cols": cols, "field": field_of(a), "data": data}


def matrix_from_json(obj):
    try:
        rows, cols, field, data = obj["rows"], obj["cols"], obj["field"], obj["data"]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed matrix JSON: missing {exc}") from None
    if not (isinstance(rows, int) and isinstance(cols, int)) or rows < 1 or cols < 1:
        raise ValidationError("matrix JSON: rows/cols must be positive integers")
    if len(data) != rows * cols:
        raise ValidationError(f"matrix JSON: expected {rows * cols} entries, got {len(data)}")
    if field == "real":
        arr = np.array(data, dtype=np.float64)
    elif field == "complex":
        pairs = np.array(data, dtype=np.float64)
        if pairs.shape != (rows * cols, 2):
            raise ValidationError("matrix JSON: complex entries must be [re, im] pairs")
        arr = pairs[:, 0] + 1j * pairs[:, 1]
    else:
        raise ValidationError(f"matrix JSON: unknown field {field!r}")
    return as_matrix(arr.reshape(rows, cols))
