"""Compression of point clouds, pullback metrics, spherical lifting and spectra.

A cloud ``x_1..x_n`` in R^N is compressed to ``v_k = A_k x_k`` (one shared
``A`` or one per point). Each ``A_k`` gets a right inverse ``DF_k`` and a
metric ``G_k = DF_k^T DF_k``. The centered projections are then placed in the
tangent plane at the north pole of a sphere of radius R and lifted with the
exponential map; pairwise geodesic distances are compared with the original
Euclidean ones.
"""
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate

from ripkit.ensembles import EnsembleSpec, build
from ripkit.errors import NumericalFailure, SingularityError, ValidationError
from ripkit.numerics.linalg import pseudoinverse, symmetric_eig
from ripkit.numerics.rng import derive_seed

MODES = ("shared", "per_point")
PULLBACK_RTOL = 1e-10
SPHERE_RTOL = 1e-9
MAX_DRAWS = 4  # first draw plus three retries
DEFAULT_GRID_SIZE = 16
DEFAULT_GRID_SPAN = 1e3


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray  # n × dim, one point per row

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float)
        if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 1:
            raise ValidationError(f"point cloud must be a non-empty n×dim array, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValidationError("point cloud has non-finite coordinates")
        object.__setattr__(self, "points", p)

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    def distances(self):
        return euclidean_distances(self.points)


def euclidean_distances(points):
    p = np.asarray(points, dtype=float)
    diff = p[:, None, :] - p[None, :, :]
    d = np.sqrt(np.sum(diff * diff, axis=-1))
    np.fill_diagonal(d, 0.0)
    return d


@dataclass
class CompressionRun:
    mode: str
    source: PointCloud
    matrices: list
    projected: PointCloud
    pullbacks: list
    metrics: list
    seed: int
    kind: Optional[str]
    matrix_seeds: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    min_eigenvalues: list = field(default_factory=list)

    @property
    def m(self):
        return self.projected.dim

    def matrix_for(self, k):
        return self.matrices[0 if self.mode == "shared" else k]

    def to_json(self, include_pullbacks=False):
        out = {
            "mode": self.mode, "kind": self.kind, "seed": self.seed,
            "n": self.source.n, "N": self.source.dim, "m": self.m,
            "matrix_seeds": self.matrix_seeds,
            "pullback_residuals": self.residuals,
            "metric_min_eigenvalues": self.min_eigenvalues,
            "projected": self.projected.points.tolist(),
        }
        if include_pullbacks:
            out["pullbacks"] = [df.tolist() for df in self.pullbacks]
        return out


def _pullback(a):
    """Right inverse of ``a`` with its residual and metric, checked."""
    m = a.shape[0]
    df = pseudoinverse(a)
    residual = float(np.linalg.norm(a @ df - np.eye(m)))
    g = df.T @ df
    g = 0.5 * (g + g.T)
    lam_min = float(symmetric_eig(g, want_vectors=False).eigenvalues[0])
    if residual > PULLBACK_RTOL * math.sqrt(m):
        raise NumericalFailure(f"pullback residual {residual:.3e} exceeds {PULLBACK_RTOL}*sqrt(m)")
    if not lam_min > 0:
        raise NumericalFailure(f"metric matrix has min eigenvalue {lam_min:.3e} <= 0")
    return df, g, residual, lam_min


def _draw(kind, m, N, seed, k):
    last = None
    for attempt in range(MAX_DRAWS):
        sd = derive_seed(seed, "compress", k, attempt)
        a = build(EnsembleSpec(kind, m, N, seed=sd))
        try:
            return a, sd, _pullback(a)
        except SingularityError as exc:
            last = exc
    raise SingularityError(f"matrix {k}: {MAX_DRAWS} rank-deficient draws in a row ({last})")


def compress(cloud, m, mode="shared", kind="gaussian", seed=0, matrices=None):
    """Project ``cloud`` to R^m and build pullback frames and metrics.

    ``matrices`` bypasses the random draw (one matrix for shared mode, one per
    point otherwise); ``kind`` is then recorded as None.
    """
    if not isinstance(cloud, PointCloud):
        cloud = PointCloud(cloud)
    n, N = cloud.n, cloud.dim
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}, got {mode!r}")
    if isinstance(m, bool) or not isinstance(m, (int, np.integer)) or not 1 <= m <= N:
        raise ValidationError(f"need 1 <= m <= N={N}, got m={m!r}")
    count = 1 if mode == "shared" else n
    mats, seeds, frames = [], [], []
    if matrices is not None:
        if len(matrices) != count:
            raise ValidationError(f"{mode} mode needs {count} matrices, got {len(matrices)}")
        for a in matrices:
            a = np.asarray(a, dtype=float)
            if a.shape != (m, N):
                raise ValidationError(f"compression matrix has shape {a.shape}, expected {(m, N)}")
            mats.append(a)
            seeds.append(None)
            frames.append(_pullback(a))
        kind = None
    else:
        if kind not in ("gaussian", "bernoulli"):
            raise ValidationError(f"compression ensemble must be gaussian or bernoulli, got {kind!r}")
        for k in range(count):
            a, sd, fr = _draw(kind, m, N, seed, k)
            mats.append(a)
            seeds.append(sd)
            frames.append(fr)
    if mode == "shared":
        projected = cloud.points @ mats[0].T
    else:
        projected = np.stack([mats[k] @ cloud.points[k] for k in range(n)])
    return CompressionRun(
        mode, cloud, mats, PointCloud(projected),
        [f[0] for f in frames], [f[1] for f in frames], seed, kind, seeds,
        [f[2] for f in frames], [f[3] for f in frames],
    )


def sphere_exp(p, v, radius):
    """Exponential map of the round sphere of the given radius at ``p``."""
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    if not radius > 0:
        raise ValidationError(f"radius must be positive, got {radius}")
    if abs(np.linalg.norm(p) - radius) > SPHERE_RTOL * radius:
        raise ValidationError("base point is not on the sphere")
    nv = float(np.linalg.norm(v))
    if nv == 0.0:
        return p.copy()
    if abs(float(p @ v)) > SPHERE_RTOL * radius * nv:
        raise ValidationError(f"tangent vector is not orthogonal to the base point (<P, v> = {float(p @ v):.3e})")
    if nv >= math.pi * radius:
        warnings.warn(f"|v| = {nv:.6g} is beyond the injectivity radius pi*R = {math.pi * radius:.6g}",
                      RuntimeWarning, stacklevel=2)
    t = nv / radius
    return math.cos(t) * p + radius * math.sin(t) * v / nv


def _lift_north(v, radius):
    """Row-wise exp at P = (0, ..., 0, R) for tangent vectors given in R^m."""
    norms = np.linalg.norm(v, axis=1)
    t = norms / radius
    scale = np.where(norms > 0, radius * np.sin(t) / np.where(norms > 0, norms, 1.0), 1.0)
    return np.column_stack([v * scale[:, None], radius * np.cos(t)])


def geodesic_distances(points, radius):
    """Great-circle distances ``R * angle(p, q)`` between rows of ``points``.

    The angle is evaluated as ``2 atan2(|p - q|, |p + q|)``, which equals
    ``arccos(<p, q> / R^2)`` but keeps full relative accuracy for nearby points.
    """
    p = np.asarray(points, dtype=float)
    if not radius > 0:
        raise ValidationError(f"radius must be positive, got {radius}")
    off = np.abs(np.linalg.norm(p, axis=1) - radius)
    if np.any(off > SPHERE_RTOL * radius):
        k = int(np.argmax(off))
        raise ValidationError(f"point {k} is off the sphere by {off[k]:.3e}")
    diff = np.sqrt(np.sum((p[:, None, :] - p[None, :, :]) ** 2, axis=-1))
    summ = np.sqrt(np.sum((p[:, None, :] + p[None, :, :]) ** 2, axis=-1))
    d = radius * 2.0 * np.arctan2(diff, summ)
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return d


def distortion(d_ref, d_test, squared=True):
    """Largest relative deviation of (squared) pairwise distances."""
    d_ref = np.asarray(d_ref, dtype=float)
    d_test = np.asarray(d_test, dtype=float)
    if d_ref.shape != d_test.shape or d_ref.ndim != 2 or d_ref.shape[0] != d_ref.shape[1]:
        raise ValidationError(f"distance matrices must be square and equal-shaped, got {d_ref.shape}, {d_test.shape}")
    n = d_ref.shape[0]
    if n < 2:
        raise ValidationError("distortion needs at least two points")
    if np.any(np.diag(d_ref) != 0) or np.any(np.diag(d_test) != 0):
        raise ValidationError("distance matrices must have zero diagonals")
    iu = np.triu_indices(n, 1)
    ref, test = d_ref[iu], d_test[iu]
    if np.any(ref <= 0):
        k = int(np.argmin(ref))
        raise ValidationError(f"reference distance between points {iu[0][k]} and {iu[1][k]} is zero")
    if squared:
        return float(np.max(np.abs(test ** 2 - ref ** 2) / ref ** 2))
    return float(np.max(np.abs(test - ref) / ref))


@dataclass
class SphereExtension:
    radius: float
    base_point: np.ndarray
    lifted: PointCloud
    distances: np.ndarray
    delta_sphere: float
    delta_linear: float

    def to_json(self, include_points=True):
        out = {
            "radius": self.radius,
            "base_point": self.base_point.tolist(),
            "delta_sphere": self.delta_sphere,
            "delta_linear": self.delta_linear,
            "distances": self.distances.tolist(),
        }
        if include_points:
            out["lifted"] = self.lifted.points.tolist()
        return out


def centered_tangents(run):
    v = run.projected.points
    return v - v.mean(axis=0)


def data_diameter(run):
    return float(np.max(euclidean_distances(centered_tangents(run))))


def extend_to_sphere(run, radius):
    if not radius > 0:
        raise ValidationError(f"radius must be positive, got {radius}")
    if run.source.n < 2:
        raise ValidationError("sphere extension needs at least two points")
    tangents = centered_tangents(run)
    reach = float(np.max(np.linalg.norm(tangents, axis=1)))
    if reach >= math.pi * radius:
        raise ValidationError(f"radius {radius:.6g} too small: a centered point has norm {reach:.6g} >= pi*R")
    lifted = _lift_north(tangents, radius)
    geo = geodesic_distances(lifted, radius)
    ref = run.source.distances()
    base = np.zeros(run.m + 1)
    base[-1] = radius
    return SphereExtension(
        float(radius), base, PointCloud(lifted), geo,
        distortion(ref, geo), distortion(ref, run.projected.distances()),
    )


def default_grid(run):
    diam = data_diameter(run)
    return np.geomspace(diam, DEFAULT_GRID_SPAN * diam, DEFAULT_GRID_SIZE)


def radius_scores(run, grid):
    """``(R, delta_sphere)`` for each grid entry; ``None`` where R is too small."""
    out = []
    for r in np.asarray(grid, dtype=float).ravel():
        try:
            out.append((float(r), extend_to_sphere(run, float(r)).delta_sphere))
        except ValidationError:
            out.append((float(r), None))
    return out


def fit_radius(run, grid=None):
    """Grid search for the radius with smallest ``delta_sphere`` (ties to smaller R)."""
    grid = default_grid(run) if grid is None else np.asarray(grid, dtype=float).ravel()
    if grid.size == 0:
        raise ValidationError("radius grid is empty")
    best = None
    for r, score in sorted(radius_scores(run, grid)):
        if score is not None and (best is None or score < best[1]):
            best = (r, score)
    if best is None:
        raise ValidationError(f"no grid radius exceeds the centered cloud reach / pi ({data_diameter(run):.6g} diameter)")
    return best[0], extend_to_sphere(run, best[0])


def mp_support(lam):
    _check_ratio(lam)
    r = math.sqrt(lam)
    return (1.0 - r) ** 2, (1.0 + r) ** 2


def _check_ratio(lam):
    if not 0 < lam <= 1:
        raise ValidationError(f"aspect ratio must lie in (0, 1], got {lam}")


def mp_density(x, lam):
    lo, hi = mp_support(lam)
    x = np.asarray(x, dtype=float)
    inside = (x > lo) & (x < hi)
    xs = np.where(inside, x, 1.0)
    dens = np.sqrt(np.maximum((hi - xs) * (xs - lo), 0.0)) / (2.0 * math.pi * lam * xs)
    out = np.where(inside, dens, 0.0)
    return float(out) if out.ndim == 0 else out


def _cdf_one(x, lam, lo, hi):
    if x <= lo:
        return 0.0
    if x >= hi:
        return 1.0
    w = hi - lo
    # x = lo + w sin^2(th/2) removes the square-root endpoint behaviour
    th = 2.0 * math.asin(math.sqrt((x - lo) / w))

    def f(t):
        u = lo + w * math.sin(0.5 * t) ** 2
        return (0.5 * w * math.sin(t)) ** 2 / (2.0 * math.pi * lam * u)

    val, _ = integrate.quad(f, 0.0, th, epsabs=1e-13, epsrel=1e-12, limit=200)
    return min(max(val, 0.0), 1.0)


def mp_cdf(x, lam):
    lo, hi = mp_support(lam)
    x = np.asarray(x, dtype=float)
    out = np.array([_cdf_one(float(v), lam, lo, hi) for v in x.ravel()]).reshape(x.shape)
    return float(out) if out.ndim == 0 else out


def ks_statistic(sample, lam):
    """Sup distance between the empirical CDF of ``sample`` and the MP CDF."""
    xs = np.sort(np.asarray(sample, dtype=float).ravel())
    n = xs.size
    if n == 0:
        raise ValidationError("empty eigenvalue sample")
    f = mp_cdf(xs, lam)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))


@dataclass
class SpectralComparison:
    eigenvalues: np.ndarray
    aspect_ratio: float
    support: tuple
    ks_statistic: float
    ensemble_warning: Optional[str] = None

    def to_json(self):
        return {
            "aspect_ratio": self.aspect_ratio,
            "support": list(self.support),
            "ks_statistic": self.ks_statistic,
            "ensemble_warning": self.ensemble_warning,
            "eigenvalues": self.eigenvalues.tolist(),
        }


def normalized_spectrum(a):
    """Eigenvalues of ``(m/N) A A^T`` for an m×N matrix with entry variance 1/m."""
    a = np.asarray(a, dtype=float)
    m, N = a.shape
    return symmetric_eig((m / N) * (a @ a.T), want_vectors=False).eigenvalues


def compare_spectrum(matrices, kind="gaussian"):
    """Pooled normalized spectra of ``matrices`` (all m×N) against the MP law."""
    if not matrices:
        raise ValidationError("no matrices to compare")
    m, N = np.shape(matrices[0])
    if m > N:
        raise ValidationError(f"MP comparison needs m <= N, got m={m}, N={N}")
    lam = m / N
    note = None
    if kind != "gaussian":
        note = f"MP comparison assumes a gaussian ensemble; got {kind or 'explicit matrices'}"
        warnings.warn(note, RuntimeWarning, stacklevel=3)
    sample = np.sort(np.concatenate([normalized_spectrum(a) for a in matrices]))
    return SpectralComparison(sample, lam, mp_support(lam), ks_statistic(sample, lam), note)


def spectral_compare(run):
    return compare_spectrum(run.matrices, run.kind)
