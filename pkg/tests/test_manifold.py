import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from ripkit.ensembles import hierarchical_dataset
from ripkit.errors import ValidationError
from ripkit.manifold import (
    PointCloud, compare_spectrum, compress, data_diameter, default_grid, distortion,
    euclidean_distances, extend_to_sphere, fit_radius, geodesic_distances, ks_statistic,
    mp_cdf, mp_density, mp_support, radius_scores, spectral_compare, sphere_exp,
)
from ripkit.numerics.linalg import symmetric_eig
from ripkit.numerics.rng import RngStream, derive_seed


def _cloud(n=10, N=20, seed=0):
    return hierarchical_dataset(n, N, 2, 0.5, seed)


# ---------------------------------------------------------------- compression

def test_identity_compression():
    x = _cloud(6, 4)
    run = compress(x, 4, matrices=[np.eye(4)])
    assert np.array_equal(run.projected.points, x)
    assert np.allclose(run.pullbacks[0], np.eye(4), atol=1e-15) and np.allclose(run.metrics[0], np.eye(4), atol=1e-15)
    assert run.kind is None and run.matrix_seeds == [None]


def test_shared_gaussian_residual():
    run = compress(_cloud(10, 20), 5, "shared", seed=3)
    a, df = run.matrices[0], run.pullbacks[0]
    assert np.linalg.norm(a @ df - np.eye(5)) <= 1e-10 * math.sqrt(5)
    assert len(run.matrices) == 1 and run.m == 5


def test_per_point_metrics():
    run = compress(_cloud(10, 20), 5, "per_point", seed=4)
    assert len(run.matrices) == 10
    assert len({m.tobytes() for m in run.matrices}) == 10
    for a, df, g in zip(run.matrices, run.pullbacks, run.metrics):
        assert np.linalg.norm(a @ df - np.eye(5)) <= 1e-10 * math.sqrt(5)
        assert np.max(np.abs(g - g.T)) <= 1e-12
        assert symmetric_eig(g, want_vectors=False).eigenvalues[0] > 0
    k = 3
    assert np.allclose(run.projected.points[k], run.matrices[k] @ run.source.points[k])


def test_compress_deterministic_and_validated():
    x = _cloud()
    a, b = compress(x, 5, seed=1), compress(x, 5, seed=1)
    assert a.matrices[0].tobytes() == b.matrices[0].tobytes()
    for kwargs in (dict(m=21), dict(m=5, mode="both"), dict(m=5, kind="simplex_etf"), dict(m=0)):
        with pytest.raises(ValidationError):
            compress(x, **kwargs)
    with pytest.raises(ValidationError):
        compress(x, 2, matrices=[np.ones((3, 20))])


def test_compress_rank_deficient_explicit():
    from ripkit.errors import SingularityError
    with pytest.raises(SingularityError):
        compress(_cloud(4, 3), 2, matrices=[np.array([[1.0, 0, 0], [2.0, 0, 0]])])


# ---------------------------------------------------------------- sphere

def test_sphere_exp_examples():
    r = 2.0
    p = np.array([0.0, 0.0, r])
    assert np.array_equal(sphere_exp(p, np.zeros(3), r), p)
    with pytest.warns(RuntimeWarning):
        anti = sphere_exp(p, np.array([math.pi * r, 0.0, 0.0]), r)
    assert np.allclose(anti, -p, atol=1e-9)
    v = np.array([0.0, math.pi * r / 2, 0.0])
    eq = sphere_exp(p, v, r)
    assert np.allclose(eq, r * v / np.linalg.norm(v), atol=1e-12)
    assert geodesic_distances(np.stack([p, eq]), r)[0, 1] == pytest.approx(math.pi * r / 2, rel=1e-12)
    with pytest.raises(ValidationError):
        sphere_exp(p, np.array([0.0, 1.0, 1.0]), r)


def test_geodesic_examples():
    r = 10.0
    p = np.array([0.0, 0.0, r])
    d = geodesic_distances(np.stack([p, -p, sphere_exp(p, np.array([1.0, 0.0, 0.0]), r)]), r)
    assert d[0, 0] == 0.0 and d[0, 1] == pytest.approx(math.pi * r, rel=1e-15)
    assert abs(d[0, 2] - 1.0) <= 1e-9
    with pytest.raises(ValidationError):
        geodesic_distances(np.array([[0.0, 0.0, 9.0]]), r)


@given(st.integers(0, 2 ** 32), st.floats(0.1, 100))
def test_radial_isometry(seed, r):
    g = RngStream(seed)
    dirs = g.gaussian(100 * 4).reshape(100, 4)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    lengths = g.uniform(100) * math.pi * r * 0.999
    p = np.array([0.0, 0.0, 0.0, 0.0, r])
    pts = [sphere_exp(p, np.append(lengths[k] * dirs[k], 0.0), r) for k in range(100)]
    d = geodesic_distances(np.vstack([p] + pts), r)[0, 1:]
    assert np.allclose(d, lengths, rtol=1e-9, atol=1e-12 * r)


# ---------------------------------------------------------------- distortion

def test_distortion_examples():
    x = _cloud(5, 3)
    d = euclidean_distances(x)
    assert distortion(d, d) == 0.0
    assert distortion(d, math.sqrt(1.1) * d) == pytest.approx(0.1, abs=1e-12)
    d3 = euclidean_distances(np.array([[0.0, 0.0], [3.0, 0.0], [0.0, 4.0]]))
    t = d3.copy()
    t[1, 2] = t[2, 1] = 5.5
    assert distortion(d3, t) == pytest.approx((5.5 ** 2 - 25) / 25, abs=1e-15)
    assert distortion(d3, t, squared=False) == pytest.approx(0.1, abs=1e-15)
    bad = d3.copy()
    bad[0, 1] = bad[1, 0] = 0.0
    with pytest.raises(ValidationError):
        distortion(bad, d3)


@given(st.floats(0.01, 100), st.integers(0, 1000))
def test_distortion_scaling(c, seed):
    d = euclidean_distances(RngStream(seed).gaussian(12).reshape(4, 3))
    assert distortion(d, math.sqrt(c) * d) == pytest.approx(abs(c - 1), abs=1e-12 * max(1, c))


# ---------------------------------------------------------------- extension / radius

def test_large_radius_limit():
    run = compress(_cloud(30, 40, 2), 6, seed=5)
    diam = data_diameter(run)
    for factor, tol in ((1e3, 1e-3), (1e6, 1e-6)):
        ext = extend_to_sphere(run, factor * diam)
        assert abs(ext.delta_sphere - ext.delta_linear) <= tol
        assert np.allclose(np.linalg.norm(ext.lifted.points, axis=1), ext.radius, rtol=1e-9)
        d = ext.distances
        assert np.array_equal(d, d.T) and np.all(np.diag(d) == 0) and d.max() <= math.pi * ext.radius


def test_identity_chain_large_radius():
    x = _cloud(12, 5)
    run = compress(x, 5, matrices=[np.eye(5)])
    assert extend_to_sphere(run, 1e6 * data_diameter(run)).delta_sphere <= 1e-6
    q, _ = np.linalg.qr(np.random.default_rng(0).normal(size=(5, 5)))
    orth = extend_to_sphere(compress(x, 5, matrices=[q]), 10.0)
    assert orth.delta_linear <= 1e-12


def test_two_points():
    x = np.array([[0.0, 0.0, 0.0], [1.0, 2.0, 2.0]])
    run = compress(x, 2, matrices=[np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])])
    ext = extend_to_sphere(run, 4.0)
    expected = abs(ext.distances[0, 1] ** 2 - 9.0) / 9.0
    assert ext.delta_sphere == pytest.approx(expected, rel=1e-14)
    assert ext.delta_linear == pytest.approx(abs(5 - 9) / 9, rel=1e-14)


def test_radius_too_small():
    run = compress(_cloud(), 5, seed=1)
    with pytest.raises(ValidationError, match="too small"):
        extend_to_sphere(run, 1e-6)
    with pytest.raises(ValidationError):
        fit_radius(run, [1e-6, 2e-6])
    with pytest.raises(ValidationError):
        fit_radius(run, [])


def test_delta_linear_self_consistency():
    run = compress(_cloud(15, 30, 3), 8, seed=2)
    ext = extend_to_sphere(run, 5 * data_diameter(run))
    d0, d1 = run.source.distances(), run.projected.distances()
    iu = np.triu_indices(15, 1)
    assert ext.delta_linear == np.max(np.abs(d1[iu] ** 2 - d0[iu] ** 2) / d0[iu] ** 2)


def test_fit_radius_properties():
    run = compress(_cloud(20, 30, 1), 6, seed=3)
    grid = default_grid(run)
    assert grid.size == 16 and grid[0] == pytest.approx(data_diameter(run))
    r, ext = fit_radius(run)
    scores = dict(radius_scores(run, grid))
    assert ext.delta_sphere == min(v for v in scores.values() if v is not None) and scores[r] == ext.delta_sphere
    assert fit_radius(run, [grid[5]])[0] == grid[5]
    big = 1e6 * data_diameter(run)
    assert fit_radius(run, [grid[3], big])[1].delta_sphere <= ext.delta_linear + 1e-6
    dense = np.geomspace(grid[0], grid[-1], 31)
    assert fit_radius(run, dense)[1].delta_sphere <= ext.delta_sphere
    tie_grid = [grid[2], grid[2], grid[4]]
    assert fit_radius(run, tie_grid)[0] == min(tie_grid, key=lambda g: (scores.get(g), g))


def test_per_point_extension_runs():
    run = compress(_cloud(8, 12), 4, "per_point", seed=6)
    r, ext = fit_radius(run)
    assert ext.delta_sphere >= 0 and r > 0


# ---------------------------------------------------------------- Marchenko–Pastur

def test_mp_support_examples():
    assert mp_support(1.0) == (0.0, 4.0)
    assert mp_support(0.25) == pytest.approx((0.25, 2.25))
    assert mp_density(0.0, 1.0) == 0.0 and mp_density(4.0, 1.0) == 0.0
    assert mp_density(5.0, 0.5) == 0.0
    with pytest.raises(ValidationError):
        mp_density(1.0, 1.5)
    with pytest.raises(ValidationError):
        mp_cdf(1.0, 0.0)


@pytest.mark.parametrize("lam", [1.0, 0.5, 0.25, 0.1, 0.01])
def test_mp_normalization(lam):
    lo, hi = mp_support(lam)
    # algebraic-weight quadrature handles the square-root endpoints exactly
    total, _ = integrate.quad(lambda x: 1.0 / (2 * math.pi * lam * x), lo, hi, weight="alg", wvar=(0.5, 0.5)) \
        if lam < 1 else (integrate.quad(lambda x: mp_density(x, lam), lo, hi, limit=200)[0], 0)
    assert abs(total - 1.0) <= 1e-6
    assert mp_cdf(lo, lam) == 0.0 and abs(mp_cdf(hi, lam) - 1.0) <= 1e-6
    assert abs(mp_cdf(hi - 1e-9, lam) - 1.0) <= 1e-6
    xs = np.linspace(lo, hi, 40)
    assert np.all(np.diff(mp_cdf(xs, lam)) >= 0)


def test_mp_cdf_against_alg_weight_oracle():
    lam = 0.3
    lo, hi = mp_support(lam)
    for x in (lo + 0.1, 1.0, hi - 0.2):
        ref, _ = integrate.quad(lambda t: math.sqrt(hi - t) / (2 * math.pi * lam * t), lo, x, weight="alg", wvar=(0.5, 0))
        assert mp_cdf(x, lam) == pytest.approx(ref, abs=1e-10)


def _mp_inverse_sample(lam, size, seed):
    lo, hi = mp_support(lam)
    grid = np.linspace(lo, hi, 4001)
    cdf = mp_cdf(grid, lam)
    u = RngStream(seed).uniform(size)
    return np.interp(u, cdf, grid)


def test_ks_sampling_oracle():
    # D = 0.02 at n = 1e4 sits at p ~ 5e-4 of the Kolmogorov law, so the draw is fixed by a named seed
    sample = _mp_inverse_sample(0.25, 10 ** 4, derive_seed(0, "mp-inverse-sample"))
    assert ks_statistic(sample, 0.25) < 0.02


def test_ks_definition():
    lam = 0.5
    sample = np.array([1.0, 0.4, 2.0])
    f = mp_cdf(np.sort(sample), lam)
    grid_sup = max(max(abs(f[i] - (i + 1) / 3), abs(f[i] - i / 3)) for i in range(3))
    assert ks_statistic(sample, lam) == pytest.approx(grid_sup, abs=1e-15)


def test_spectral_square_gaussian_support():
    run = compress(np.eye(60)[:2], 60, seed=1)
    sc = spectral_compare(run)
    assert sc.aspect_ratio == 1.0 and sc.support == (0.0, 4.0)
    assert sc.eigenvalues.min() >= 0 and 3.0 < sc.eigenvalues.max() < 4.6
    assert sc.ensemble_warning is None


def test_spectral_bernoulli_flagged():
    run = compress(np.eye(40)[:2], 10, kind="bernoulli", seed=1)
    with pytest.warns(RuntimeWarning):
        sc = spectral_compare(run)
    assert sc.ensemble_warning and 0 <= sc.ks_statistic <= 1


def test_compare_spectrum_recomputable():
    sc = compare_spectrum([RngStream(k).gaussian(20 * 50).reshape(20, 50) / math.sqrt(20) for k in range(3)])
    assert sc.eigenvalues.size == 60
    assert abs(ks_statistic(np.array(sc.to_json()["eigenvalues"]), sc.aspect_ratio) - sc.ks_statistic) <= 1e-12


def test_point_cloud_validation():
    with pytest.raises(ValidationError):
        PointCloud(np.array([1.0, 2.0]))
    with pytest.raises(ValidationError):
        PointCloud(np.array([[np.nan]]))
