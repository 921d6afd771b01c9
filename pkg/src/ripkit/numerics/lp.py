"""Dense two-phase primal simplex with Bland's anti-cycling rule.

Problems are stated as::

    minimize    c @ x
    subject to  A_eq @ x == b_eq
                x >= lower          (lower may be -inf per variable)

Infeasible and unbounded problems are reported through ``LpResult.status``
rather than raised; only an exhausted iteration budget raises.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ripkit.errors import NumericalFailure, ValidationError

MAX_ITERATIONS = 1_000_000
_COST_TOL = 1e-10
_PIVOT_TOL = 1e-11
_ALT_TOL = 1e-9
_ZERO_TOL = 1e-13
_DEGENERATE_STREAK = 20


@dataclass(frozen=True)
class LpProblem:
    objective: np.ndarray
    a_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    lower: Optional[np.ndarray] = None

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float).ravel()
        object.__setattr__(self, "objective", c)
        n = c.size
        if self.a_eq is None:
            a = np.zeros((0, n))
            b = np.zeros(0)
        else:
            a = np.atleast_2d(np.asarray(self.a_eq, dtype=float))
            b = np.asarray(self.b_eq, dtype=float).ravel()
        if a.shape[1] != n:
            raise ValidationError(f"constraint matrix has {a.shape[1]} columns, objective has {n}")
        if b.size != a.shape[0]:
            raise ValidationError(f"rhs length {b.size} does not match {a.shape[0]} constraint rows")
        lower = np.zeros(n) if self.lower is None else np.asarray(self.lower, dtype=float).ravel()
        if lower.size != n:
            raise ValidationError("lower bounds length does not match objective")
        if np.any(np.isnan(lower)) or np.any(lower == np.inf):
            raise ValidationError("lower bounds must be finite or -inf")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValidationError("LP data has non-finite entries")
        object.__setattr__(self, "a_eq", a)
        object.__setattr__(self, "b_eq", b)
        object.__setattr__(self, "lower", lower)


@dataclass
class LpResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    value: Optional[float] = None
    x: Optional[np.ndarray] = None
    iterations: int = 0
    unique: Optional[bool] = None
    basis: list = field(default_factory=list)


def _pivot(t, row, col):
    t[row] /= t[row, col]
    factor = t[:, col].copy()
    factor[row] = 0.0
    t -= np.outer(factor, t[row])


def _run(t, basis, allowed, counter):
    """Pivot on tableau ``t`` (last row = reduced costs, last column = rhs)
    until optimal or unbounded.

    Entering columns are priced by most negative reduced cost; after
    ``_DEGENERATE_STREAK`` consecutive degenerate pivots the rule switches to
    Bland's (lowest index enters, lowest-index basic variable leaves among
    tied ratios) until the objective moves again, which rules out cycling.
    """
    m = t.shape[0] - 1
    streak = 0
    while True:
        d = t[-1, :-1]
        candidates = np.flatnonzero((d < -_COST_TOL) & allowed)
        if candidates.size == 0:
            return "optimal"
        bland = streak >= _DEGENERATE_STREAK
        col = int(candidates[0] if bland else candidates[np.argmin(d[candidates])])
        column = t[:m, col]
        pos = column > _PIVOT_TOL
        if not np.any(pos):
            return "unbounded"
        ratios = np.full(m, np.inf)
        ratios[pos] = t[:m, -1][pos] / column[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + 1e-12 * max(1.0, abs(best)))
        if bland:
            row = min(ties, key=lambda i: basis[i])
        else:
            row = int(ties[np.argmax(column[ties])])
        streak = streak + 1 if best <= _ZERO_TOL else 0
        _pivot(t, row, col)
        basis[row] = col
        rhs = t[:m, -1]
        rhs[np.abs(rhs) < _ZERO_TOL] = 0.0
        counter[0] += 1
        if counter[0] >= MAX_ITERATIONS:
            raise NumericalFailure(f"simplex iteration cap {MAX_ITERATIONS} reached")


def solve_lp(problem: LpProblem) -> LpResult:
    c, a, b, lower = problem.objective, problem.a_eq, problem.b_eq, problem.lower
    n = c.size
    finite = np.isfinite(lower)
    shift = np.where(finite, lower, 0.0)
    b = b - a @ shift

    # standard-form columns: one per variable, plus a negated twin for free ones
    origin = list(range(n)) + [j for j in range(n) if not finite[j]]
    sign = np.array([1.0] * n + [-1.0] * int(np.sum(~finite)))
    origin = np.array(origin, dtype=int)
    twin = {}
    for k, j in enumerate(origin[n:], start=n):
        twin[k] = j
        twin[j] = k
    a_std = a[:, origin] * sign
    c_std = c[origin] * sign
    n_std = c_std.size

    # drop all-zero rows: consistent ones are redundant, others infeasible
    row_scale = np.max(np.abs(a_std), axis=1) if a_std.size else np.zeros(a_std.shape[0])
    zero_rows = row_scale == 0
    if np.any(np.abs(b[zero_rows]) > 1e-9 * max(1.0, np.max(np.abs(b), initial=0.0))):
        return LpResult("infeasible")
    a_std, b = a_std[~zero_rows], b[~zero_rows]
    m = a_std.shape[0]

    flip = b < 0
    a_std[flip] *= -1.0
    b = np.where(flip, -b, b)

    t = np.zeros((m + 1, n_std + m + 1))
    t[:m, :n_std] = a_std
    t[:m, n_std:n_std + m] = np.eye(m)
    t[:m, -1] = b
    basis = list(range(n_std, n_std + m))
    # a column that is a positive multiple of a unit vector (e.g. a slack)
    # starts in the basis instead of that row's artificial
    nnz = np.count_nonzero(a_std, axis=0)
    for j in np.flatnonzero(nnz == 1):
        i = int(np.flatnonzero(a_std[:, j])[0])
        if a_std[i, j] > 0 and basis[i] >= n_std:
            t[i] /= a_std[i, j]
            basis[i] = int(j)
    artificial = [i for i in range(m) if basis[i] >= n_std]
    t[-1, :] = -t[artificial].sum(axis=0)
    t[-1, n_std:n_std + m] = 0.0
    counter = [0]

    allowed = np.ones(n_std + m, dtype=bool)
    allowed[n_std:] = False
    allowed[[n_std + i for i in artificial]] = True
    _run(t, basis, allowed, counter)
    feas_tol = 1e-8 * max(1.0, float(np.linalg.norm(b)))
    if -t[-1, -1] > feas_tol:
        return LpResult("infeasible", iterations=counter[0])

    # drive artificials out of the basis; drop rows that are redundant
    keep = np.ones(m, dtype=bool)
    for i in range(m):
        if basis[i] >= n_std:
            row = t[i, :n_std]
            nz = np.flatnonzero(np.abs(row) > 1e-9)
            if nz.size:
                _pivot(t, i, nz[0])
                basis[i] = int(nz[0])
            else:
                keep[i] = False
    rows = np.flatnonzero(keep)
    basis = [int(basis[i]) for i in rows]
    t = np.vstack([t[rows][:, list(range(n_std)) + [-1]], np.zeros((1, n_std + 1))])
    m = len(rows)

    # phase 2 cost row: reduced costs c - c_B B^-1 A
    t[-1, :n_std] = c_std
    t[-1, -1] = 0.0
    for i, j in enumerate(basis):
        if t[-1, j] != 0.0:
            t[-1] -= t[-1, j] * t[i]
    allowed = np.ones(n_std, dtype=bool)
    status = _run(t, basis, allowed, counter)
    if status == "unbounded":
        return LpResult("unbounded", iterations=counter[0])

    x_std = np.zeros(n_std)
    if m:
        bmat = a_std[rows][:, basis]
        try:
            xb = np.linalg.solve(bmat, b[rows])
            if np.min(xb, initial=0.0) < -1e-9 * max(1.0, np.max(np.abs(xb))):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            xb = t[:m, -1]
        x_std[basis] = np.maximum(xb, 0.0)

    x = shift.copy()
    np.add.at(x, origin, sign * x_std)
    value = float(c @ x) if n else 0.0

    unique = True
    d = t[-1, :n_std]
    basic = set(basis)
    for j in np.flatnonzero(np.abs(d) <= _ALT_TOL):
        if j in basic or twin.get(j) in basic:
            continue
        column = t[:m, j]
        pos = column > _PIVOT_TOL
        if not np.any(pos) or np.min(t[:m, -1][pos] / column[pos]) > _ALT_TOL:
            unique = False
            break
    return LpResult("optimal", value, x, counter[0], unique, list(basis))
