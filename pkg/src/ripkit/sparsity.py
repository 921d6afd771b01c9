"""Sparse vectors, hard thresholding and best s-term approximation error."""
from dataclasses import dataclass

import numpy as np

from ripkit.errors import ValidationError


@dataclass(frozen=True)
class SparseVector:
    dim: int
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).ravel()
        vals = np.asarray(self.values).ravel()
        vals = vals.astype(np.complex128 if np.iscomplexobj(vals) else np.float64)
        if self.dim < 1:
            raise ValidationError("dim must be positive")
        if idx.size != vals.size:
            raise ValidationError("indices and values differ in length")
        if idx.size and (idx[0] < 0 or idx[-1] >= self.dim or np.any(np.diff(idx) <= 0)):
            raise ValidationError("indices must be strictly increasing within [0, dim)")
        if np.any(vals == 0):
            raise ValidationError("stored values must be nonzero")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_dense(cls, x):
        x = np.asarray(x)
        idx = np.flatnonzero(x)
        return cls(x.size, idx, x[idx])

    @property
    def field(self):
        return "complex" if np.iscomplexobj(self.values) else "real"

    def to_dense(self):
        out = np.zeros(self.dim, dtype=self.values.dtype)
        out[self.indices] = self.values
        return out

    def to_json(self):
        if self.field == "complex":
            values = [[float(v.real), float(v.imag)] for v in self.values]
        else:
            values = [float(v) for v in self.values]
        return {"dim": self.dim, "indices": self.indices.tolist(), "values": values}

    @classmethod
    def from_json(cls, obj):
        try:
            dim, indices, vals = obj["dim"], obj["indices"], obj["values"]
            if vals and isinstance(vals[0], list):
                vals = np.array([complex(re, im) for re, im in vals])
            vals = np.array(vals, dtype=None if len(vals) else float)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed sparse vector JSON: {exc}") from None
        return cls(int(dim), indices, vals)


def l0_norm(x):
    if isinstance(x, SparseVector):
        return int(x.indices.size)
    return int(np.count_nonzero(np.asarray(x)))


def _check_order(x, s):
    if not 0 <= s <= x.size:
        raise ValidationError(f"sparsity s={s} outside [0, {x.size}]")


def hard_threshold(x, s):
    """Keep the ``s`` largest-magnitude entries of ``x``; ties go to the lowest index."""
    x = np.asarray(x).ravel()
    _check_order(x, s)
    # stable sort on -|x| keeps index order among equal magnitudes
    keep = np.sort(np.argsort(-np.abs(x), kind="stable")[:s])
    keep = keep[x[keep] != 0]
    return SparseVector(x.size, keep, x[keep])


def best_s_term_error(x, s, p=1.0):
    """l_p distance from ``x`` to its best s-sparse approximation (p >= 1 or inf)."""
    x = np.asarray(x).ravel()
    _check_order(x, s)
    if not p >= 1:
        raise ValidationError(f"p must be >= 1, got {p}")
    tail = x - hard_threshold(x, s).to_dense()
    return float(np.linalg.norm(tail, ord=p))
