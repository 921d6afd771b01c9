import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ripkit.diagnostics import coherence
from ripkit.ensembles import (
    EnsembleSpec, alltop_gabor, build, hierarchical_dataset, is_prime, normalize_columns,
    simplex_etf, suggest_m,
)
from ripkit.errors import SingularityError, ValidationError


def test_mercedes_frame():
    a = simplex_etf(2)
    g = a.T @ a
    assert np.allclose(np.diag(g), 1.0, atol=1e-15)
    assert np.allclose(np.abs(g[~np.eye(3, dtype=bool)]), 0.5, atol=1e-15)


@pytest.mark.parametrize("m", range(2, 9))
def test_simplex_etf_gram(m):
    a = simplex_etf(m)
    n = m + 1
    assert a.shape == (m, n)
    assert np.allclose(a.T @ a, (1 + 1 / m) * np.eye(n) - np.ones((n, n)) / m, atol=1e-14)


@pytest.mark.parametrize("m", [5, 7, 11])
def test_alltop_gabor(m):
    a = alltop_gabor(m)
    assert a.shape == (m, m * m) and np.iscomplexobj(a)
    assert np.allclose(np.linalg.norm(a, axis=0), 1.0, atol=1e-12)
    assert abs(coherence(a) - 1 / math.sqrt(m)) <= 1e-9
    # column k*m + l is the time shift by k of the modulation by l
    j = np.arange(m)
    k, ell = 2, 3
    expected = np.exp(2j * np.pi * ((j - k) ** 3 + ell * j) / m) / math.sqrt(m)
    assert np.allclose(a[:, k * m + ell], expected, atol=1e-13)


def test_alltop_m5_value():
    assert coherence(alltop_gabor(5)) == pytest.approx(0.4472136, abs=1e-7)


def test_build_random_kinds():
    spec = EnsembleSpec("gaussian", 4, 10, seed=123)
    a = build(spec)
    assert a.shape == (4, 10) and np.array_equal(a, build(spec))
    assert a.tobytes() == build(EnsembleSpec.from_json(spec.to_json())).tobytes()
    b = build(EnsembleSpec("bernoulli", 4, 10, seed=1))
    assert set(np.unique(b * 2)) == {-1.0, 1.0}
    big = build(EnsembleSpec("gaussian", 50, 400, seed=9))
    assert abs(big.var() - 1 / 50) < 0.1 / 50


@given(st.sampled_from(["gaussian", "bernoulli"]), st.integers(1, 12), st.integers(0, 12), st.integers(0, 2 ** 64 - 1))
def test_normalized_columns_property(kind, m, extra, seed):
    a = build(EnsembleSpec(kind, m, m + extra, normalize_columns=True, seed=seed))
    assert np.allclose(np.linalg.norm(a, axis=0), 1.0, atol=1e-12)


@pytest.mark.parametrize("kwargs", [
    dict(kind="gaussian", m=5, N=4), dict(kind="uniform", m=2, N=3), dict(kind="simplex_etf", m=3, N=5),
    dict(kind="alltop_gabor", m=6, N=36), dict(kind="alltop_gabor", m=3, N=9), dict(kind="alltop_gabor", m=5, N=20),
    dict(kind="gaussian", m=0, N=4), dict(kind="gaussian", m=2, N=4, seed=-1),
])
def test_spec_validation(kwargs):
    with pytest.raises(ValidationError):
        EnsembleSpec(**kwargs)


def test_spec_json_rejects_unknown():
    with pytest.raises(ValidationError):
        EnsembleSpec.from_json({"kind": "gaussian", "m": 2, "N": 3, "color": "red"})


def test_is_prime():
    assert [p for p in range(20) if is_prime(p)] == [2, 3, 5, 7, 11, 13, 17, 19]


def test_normalize_columns_examples():
    assert np.allclose(normalize_columns(np.diag([2.0, 3.0])), np.eye(2))
    assert np.allclose(normalize_columns(np.array([[3.0], [4.0]])).ravel(), [0.6, 0.8], atol=1e-15)
    e = simplex_etf(3)
    assert np.allclose(normalize_columns(e), e, atol=1e-12)
    with pytest.raises(SingularityError, match="column 1"):
        normalize_columns(np.array([[1.0, 0.0], [0.0, 0.0]]))


def test_suggest_m():
    assert suggest_m(4, 1024, 0.5) == math.ceil(4 * math.log(256) / 0.25) == 89
    assert suggest_m(1, 2, 0.99, c=1e-3) == 1
    assert suggest_m(10, 20, 0.1) == 20
    for bad in ((0, 10, 0.5), (10, 10, 0.5), (2, 10, 1.0), (2, 10, 0.0)):
        with pytest.raises(ValidationError):
            suggest_m(*bad)
    with pytest.raises(ValidationError):
        suggest_m(2, 10, 0.5, c=0)


def test_hierarchical_depth_zero_is_one_cluster():
    x = hierarchical_dataset(200, 30, 0, 0.5, seed=3)
    assert x.shape == (200, 30)
    norms = np.linalg.norm(x, axis=1)
    assert abs(np.median(norms) - 1.0) < 0.2 and np.linalg.norm(x.mean(axis=0)) < 0.2


def test_hierarchical_determinism():
    assert np.array_equal(hierarchical_dataset(20, 8, 2, 0.5, 11), hierarchical_dataset(20, 8, 2, 0.5, 11))
    assert not np.array_equal(hierarchical_dataset(20, 8, 2, 0.5, 11), hierarchical_dataset(20, 8, 2, 0.5, 12))


def test_hierarchical_separation():
    depth = 3
    x = hierarchical_dataset(160, 40, depth, 0.25, seed=5)
    leaf = np.arange(160) % 2 ** depth
    branch = leaf >> (depth - 1)
    d = np.linalg.norm(x[:, None] - x[None], axis=-1)
    iu = np.triu_indices(160, 1)
    same_leaf = leaf[iu[0]] == leaf[iu[1]]
    other_branch = branch[iu[0]] != branch[iu[1]]
    assert np.median(d[iu][same_leaf]) < np.median(d[iu][other_branch])


def test_hierarchical_validation():
    for args in ((0, 3, 1, 0.5, 0), (3, 3, -1, 0.5, 0), (3, 3, 1, 1.0, 0), (3, 3, 1, 0.0, 0)):
        with pytest.raises(ValidationError):
            hierarchical_dataset(*args)
