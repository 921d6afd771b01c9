"""Dense eigen/SVD kernels built on a parallel-ordered cyclic Jacobi method.

All routines accept real or complex input. ``symmetric_eig`` also accepts a
stack of matrices (shape ``(..., n, n)``) and diagonalizes them together,
which is what the restricted-isometry support enumeration relies on.
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from ripkit.errors import NumericalFailure, SingularityError, ValidationError

HERMITIAN_RTOL = 1e-10
_OFF_RTOL = 1e-15
_MAX_SWEEPS = 100


@dataclass(frozen=True)
class EigenResult:
    eigenvalues: np.ndarray
    eigenvectors: Optional[np.ndarray] = None


@lru_cache(maxsize=64)
def _round_robin(n):
    """Pairings for one Jacobi sweep; each round touches every index once."""
    size = n + (n % 2)
    players = list(range(size))
    rounds = []
    for _ in range(size - 1):
        pairs = [(players[i], players[size - 1 - i]) for i in range(size // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p < n and q < n]
        if pairs:
            p, q = zip(*pairs)
            rounds.append((np.array(p), np.array(q)))
        players = [players[0], players[-1]] + players[1:-1]
    return tuple(rounds)


def _offdiag_norm(a):
    mask = ~np.eye(a.shape[-1], dtype=bool)
    return np.sqrt(np.sum(np.abs(a[..., mask]) ** 2, axis=-1))


def _check_hermitian(a):
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValidationError(f"expected square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError("matrix has non-finite entries")
    ah = np.conj(np.swapaxes(a, -1, -2))
    scale = np.max(np.abs(a), axis=(-2, -1))
    err = np.max(np.abs(a - ah), axis=(-2, -1))
    if np.any(err > HERMITIAN_RTOL * np.maximum(scale, np.finfo(float).tiny)):
        raise ValidationError(f"matrix is not Hermitian (asymmetry {float(np.max(err)):.3e})")
    return 0.5 * (a + ah)


def symmetric_eig(a, want_vectors=True):
    """Eigen-decomposition of a real symmetric or complex Hermitian matrix.

    Rotations are scheduled in round-robin order so each round applies
    ``n // 2`` disjoint rotations as one vectorized update.

    Returns an :class:`EigenResult` with eigenvalues ascending along the last
    axis and eigenvectors as columns.
    """
    a = np.array(a)
    if not (np.iscomplexobj(a) or np.issubdtype(a.dtype, np.floating)):
        a = a.astype(np.float64)
    a = _check_hermitian(a)
    batch_shape = a.shape[:-2]
    n = a.shape[-1]
    work = a.reshape((-1, n, n)).copy()
    complex_input = np.iscomplexobj(work)
    vecs = np.broadcast_to(np.eye(n, dtype=work.dtype), work.shape).copy() if want_vectors else None

    fro = np.sqrt(np.sum(np.abs(work) ** 2, axis=(-2, -1)))
    thresh = _OFF_RTOL * fro
    rounds = _round_robin(n) if n > 1 else ()
    sweeps = 0
    while rounds and np.any(_offdiag_norm(work) > thresh):
        if sweeps >= _MAX_SWEEPS:
            off = _offdiag_norm(work)
            if np.any(off > 1e-10 * np.maximum(fro, 1e-300)):
                raise NumericalFailure(f"Jacobi failed to converge in {_MAX_SWEEPS} sweeps")
            break
        sweeps += 1
        for p, q in rounds:
            app = work[:, p, p].real
            aqq = work[:, q, q].real
            b = work[:, p, q]
            babs = np.abs(b)
            nz = babs > 0
            safe = np.where(nz, babs, 1.0)
            phase = np.where(nz, b / safe, 1.0)
            with np.errstate(over="ignore"):
                theta = (aqq - app) / (2.0 * safe)
                sgn = np.where(theta >= 0, 1.0, -1.0)
                big = np.abs(theta) > 1e150
                th = np.where(big, 1.0, theta)
                t = np.where(big, 0.5 / np.where(big, theta, 1.0), sgn / (np.abs(th) + np.sqrt(th * th + 1.0)))
            t = np.where(nz, t, 0.0)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            ph = np.conj(phase) if complex_input else phase.real
            vpp, vpq, vqp, vqq = c, s, -s * ph, c * ph

            rp = work[:, p, :]
            rq = work[:, q, :]
            work[:, p, :] = np.conj(vpp)[..., None] * rp + np.conj(vqp)[..., None] * rq
            work[:, q, :] = np.conj(vpq)[..., None] * rp + np.conj(vqq)[..., None] * rq
            cp = work[:, :, p]
            cq = work[:, :, q]
            work[:, :, p] = cp * vpp[:, None, :] + cq * vqp[:, None, :]
            work[:, :, q] = cp * vpq[:, None, :] + cq * vqq[:, None, :]
            if want_vectors:
                cp = vecs[:, :, p]
                cq = vecs[:, :, q]
                vecs[:, :, p] = cp * vpp[:, None, :] + cq * vqp[:, None, :]
                vecs[:, :, q] = cp * vpq[:, None, :] + cq * vqq[:, None, :]

    evals = np.diagonal(work, axis1=-2, axis2=-1).real.copy()
    order = np.argsort(evals, axis=-1, kind="stable")
    evals = np.take_along_axis(evals, order, axis=-1).reshape(batch_shape + (n,))
    if not want_vectors:
        return EigenResult(evals)
    vecs = np.take_along_axis(vecs, order[:, None, :], axis=-1).reshape(batch_shape + (n, n))
    return EigenResult(evals, vecs)


def _complete_basis(q, total):
    """Extend orthonormal columns ``q`` (n×k) to ``total`` columns, deterministically."""
    n, k = q.shape
    cols = [q[:, i] for i in range(k)]
    for j in range(n):
        if len(cols) == total:
            break
        e = np.zeros(n, dtype=q.dtype)
        e[j] = 1.0
        for _ in range(2):
            for c in cols:
                e = e - c * np.vdot(c, e)
        nrm = np.linalg.norm(e)
        if nrm > 1e-8:
            cols.append(e / nrm)
    return np.column_stack(cols) if cols else np.zeros((n, 0), dtype=q.dtype)


def svd(a, compute_uv=False):
    """Thin singular value decomposition via the smaller Gram matrix.

    Singular values are taken as ``||A^H u_i||`` (resp. ``||A v_i||``) rather
    than the square root of the Gram eigenvalue, which keeps small singular
    values accurate to roughly ``eps * ||A||``.

    Returns ``s`` (descending) or ``(u, s, vh)`` with ``a ≈ u @ diag(s) @ vh``.
    """
    a = np.asarray(a)
    if a.ndim != 2:
        raise ValidationError(f"svd expects a 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError("matrix has non-finite entries")
    m, n = a.shape
    wide = m <= n
    op = a if wide else np.conj(a.T)
    # op is k×l with k <= l; decompose op op^H
    gram = op @ np.conj(op.T)
    left = symmetric_eig(gram).eigenvectors[:, ::-1]
    right = np.conj(op.T) @ left
    s = np.linalg.norm(right, axis=0)
    order = np.argsort(-s, kind="stable")
    s, left, right = s[order], left[:, order], right[:, order]
    if not compute_uv:
        return s
    smax = s[0] if s.size else 0.0
    good = s > max(smax * 1e-14, np.finfo(float).tiny)
    right = right[:, good] / s[good]
    right = _complete_basis(right, left.shape[1])
    if wide:
        return left, s, np.conj(right.T)
    return right, s, np.conj(left.T)


def pseudoinverse(a, rank_tol=1e-12):
    """Moore–Penrose inverse of a full-rank matrix.

    For a wide matrix (full row rank) the result ``X`` satisfies ``A X = I``.
    One Newton–Schulz step polishes the residual.
    """
    a = np.asarray(a)
    m, n = a.shape
    u, s, vh = svd(a, compute_uv=True)
    ratio = s[-1] / s[0] if s[0] > 0 else 0.0
    if ratio <= rank_tol:
        raise SingularityError(
            f"matrix is rank deficient: smallest/largest singular value ratio {ratio:.3e} <= {rank_tol:.1e}"
        )
    x = np.conj(vh.T) @ (np.conj(u.T) / s[:, None])
    if m <= n:
        x = x @ (2.0 * np.eye(m) - a @ x)
    else:
        x = (2.0 * np.eye(n) - x @ a) @ x
    return x


def null_space(a, rtol=1e-10):
    """Orthonormal basis (columns) of the kernel of ``a``.

    Rank is decided by singular values above ``rtol * s_max``.
    """
    a = np.asarray(a)
    n = a.shape[1]
    s = svd(a)
    rank = int(np.sum(s > rtol * s[0])) if s.size and s[0] > 0 else 0
    vecs = symmetric_eig(np.conj(a.T) @ a).eigenvectors
    return vecs[:, : n - rank]
