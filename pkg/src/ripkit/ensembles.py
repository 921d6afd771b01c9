"""Sensing-matrix ensembles and synthetic point clouds."""
import math
from dataclasses import asdict, dataclass

import numpy as np

from ripkit.errors import SingularityError, ValidationError
from ripkit.numerics.rng import RngStream, check_seed

KINDS = ("gaussian", "bernoulli", "simplex_etf", "alltop_gabor")


def is_prime(n):
    if n < 2:
        return False
    return all(n % d for d in range(2, math.isqrt(n) + 1))


@dataclass(frozen=True)
class EnsembleSpec:
    kind: str
    m: int
    N: int
    normalize_columns: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown ensemble kind {self.kind!r}; expected one of {KINDS}")
        for name in ("m", "N"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
                raise ValidationError(f"ensemble.{name} must be a positive integer, got {v!r}")
        check_seed(self.seed)
        m, N = self.m, self.N
        if self.kind in ("gaussian", "bernoulli") and m > N:
            raise ValidationError(f"ensemble requires m <= N, got m={m}, N={N}")
        if self.kind == "simplex_etf" and N != m + 1:
            raise ValidationError(f"simplex_etf requires N = m + 1, got m={m}, N={N}")
        if self.kind == "alltop_gabor":
            if m < 5 or not is_prime(m):
                raise ValidationError(f"alltop_gabor requires prime m >= 5, got m={m}")
            if N != m * m:
                raise ValidationError(f"alltop_gabor requires N = m^2 = {m * m}, got N={N}")

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, obj):
        if not isinstance(obj, dict):
            raise ValidationError("ensemble must be a JSON object")
        unknown = set(obj) - {"kind", "m", "N", "normalize_columns", "seed"}
        if unknown:
            raise ValidationError(f"unknown ensemble fields: {sorted(unknown)}")
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ValidationError(f"ensemble: {exc}") from None


def normalize_columns(a):
    a = np.asarray(a)
    norms = np.linalg.norm(a, axis=0)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise SingularityError(f"column {int(zero[0])} has zero norm")
    return a / norms


def _helmert(n):
    """(n-1)×n matrix whose rows are an orthonormal basis of the sum-zero hyperplane."""
    h = np.zeros((n - 1, n))
    for k in range(1, n):
        h[k - 1, :k] = 1.0
        h[k - 1, k] = -float(k)
        h[k - 1] /= math.sqrt(k * (k + 1))
    return h


def simplex_etf(m):
    """m+1 unit vectors in R^m with all pairwise inner products -1/m."""
    n = m + 1
    centered = np.eye(n) - 1.0 / n
    centered /= np.linalg.norm(centered, axis=0)
    return _helmert(n) @ centered


def alltop_gabor(m):
    """Time-frequency shifts of the Alltop sequence; column k*m + l is shift k, modulation l."""
    j = np.arange(m)
    cols = []
    for k in range(m):
        for ell in range(m):
            # integer phase kept modulo m to stay exact before the exponential
            phase = ((j - k) ** 3 + ell * j) % m
            cols.append(np.exp(2j * np.pi * phase / m) / math.sqrt(m))
    return np.column_stack(cols)


def build(spec):
    m, N = spec.m, spec.N
    if spec.kind == "gaussian":
        a = RngStream(spec.seed).gaussian(m * N).reshape(m, N) / math.sqrt(m)
    elif spec.kind == "bernoulli":
        a = RngStream(spec.seed).signs(m * N).reshape(m, N) / math.sqrt(m)
    elif spec.kind == "simplex_etf":
        a = simplex_etf(m)
    else:
        a = alltop_gabor(m)
    if spec.normalize_columns:
        a = normalize_columns(a)
    return a


def suggest_m(s, N, delta, c=1.0):
    """Measurement count ceil(c * s * ln(N/s) / delta^2), clamped to [1, N]."""
    if not 1 <= s < N:
        raise ValidationError(f"need 1 <= s < N, got s={s}, N={N}")
    if not 0 < delta < 1:
        raise ValidationError(f"delta must lie in (0, 1), got {delta}")
    if not c > 0:
        raise ValidationError(f"c must be positive, got {c}")
    value = math.ceil(c * s * math.log(N / s) / delta ** 2)
    return int(min(max(value, 1), N))


def hierarchical_dataset(n, N, depth, decay, seed):
    """Points around the leaves of a random binary tree of cluster centers.

    The root sits at the origin; a node at level ``l`` (root = 0) has two
    children offset along random unit directions by ``decay ** (l + 1)``.
    Point ``i`` belongs to leaf ``i % 2**depth`` and is that leaf's center
    plus Gaussian noise of typical norm ``decay ** depth``.

    Returns an ``n × N`` array (points as rows).
    """
    if n < 1 or N < 1 or depth < 0:
        raise ValidationError(f"need n, N >= 1 and depth >= 0, got n={n}, N={N}, depth={depth}")
    if not 0 < decay < 1:
        raise ValidationError(f"decay must lie in (0, 1), got {decay}")
    root = RngStream(seed)
    tree = root.spawn("tree")
    noise = root.spawn("points")
    centers = np.zeros((1, N))
    for level in range(1, depth + 1):
        dirs = tree.gaussian(2 * centers.shape[0] * N).reshape(-1, N)
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        centers = np.repeat(centers, 2, axis=0) + decay ** level * dirs
    leaf = np.arange(n) % centers.shape[0]
    jitter = noise.gaussian(n * N).reshape(n, N) * (decay ** depth / math.sqrt(N))
    return centers[leaf] + jitter
