"""Sensing-matrix quality measures and recovery-guarantee certificates."""
import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ripkit.errors import ValidationError
from ripkit.numerics.linalg import null_space, symmetric_eig
from ripkit.numerics.lp import LpProblem, solve_lp
from ripkit.numerics.rng import RngStream

NORMALIZED_TOL = 1e-8
NSP_STRICT_MARGIN = 1e-10
NSP_MAX_SUPPORTS = 10 ** 5
NSP_AUTO_BUDGET = 500
RIP_MAX_SUPPORTS = 10 ** 6
RIP_THIRD = 1.0 / 3.0
RIP_ROBUST = 4.0 / math.sqrt(41.0)
_RIP_CHUNK = 20000


def gram(a):
    a = np.asarray(a)
    return np.conj(a.T) @ a


def columns_normalized(a, tol=NORMALIZED_TOL):
    return bool(np.all(np.abs(np.linalg.norm(a, axis=0) - 1.0) <= tol))


def _require_normalized(a):
    norms = np.linalg.norm(a, axis=0)
    bad = np.flatnonzero(np.abs(norms - 1.0) > NORMALIZED_TOL)
    if bad.size:
        raise ValidationError(
            f"columns must be l2-normalized; column {int(bad[0])} has norm {norms[bad[0]]:.12g}"
        )


def _abs_offdiag_gram(a):
    g = np.abs(gram(a))
    np.fill_diagonal(g, 0.0)
    return g


def coherence(a):
    """Largest |<a_i, a_j>| over distinct columns."""
    a = np.asarray(a)
    _require_normalized(a)
    if a.shape[1] < 2:
        return 0.0
    return float(_abs_offdiag_gram(a).max())


def l1_coherence(a, s):
    """Worst-case sum of the ``s`` largest cross inner products against one column.

    ``s = 0`` returns 0 so that ``mu1(s) + mu1(s - 1)`` is defined at ``s = 1``.
    """
    a = np.asarray(a)
    _require_normalized(a)
    n = a.shape[1]
    if s == 0:
        return 0.0
    if not 1 <= s <= n - 1:
        raise ValidationError(f"l1-coherence order s={s} outside [1, {n - 1}]")
    g = _abs_offdiag_gram(a)
    mask = ~np.eye(n, dtype=bool)
    rows = g[mask].reshape(n, n - 1)
    top = -np.sort(-rows, axis=1)[:, :s]
    return float(top.sum(axis=1).max())


def welch_bound(m, N, s=1):
    """Lower bound s*sqrt((N-m)/(m(N-1))) on mu1(s) (s = 1: on the coherence)."""
    if not (1 <= m <= N) or N < 2:
        raise ValidationError(f"need 1 <= m <= N and N >= 2, got m={m}, N={N}")
    if s < 1:
        raise ValidationError(f"s must be >= 1, got {s}")
    if s > 1 and not s < math.sqrt(N - 1):
        warnings.warn(f"l1 Welch bound is only valid for s < sqrt(N-1) = {math.sqrt(N - 1):.4g}; got s={s}")
    return s * math.sqrt((N - m) / (m * (N - 1)))


@dataclass(frozen=True)
class FrameCheck:
    is_equiangular: bool
    c: float
    is_tight: bool
    lam: float

    @property
    def frame_bound(self):
        """The constant 1/lambda with A A^* = (1/lambda) I."""
        return 1.0 / self.lam

    def to_json(self):
        return {"is_equiangular": self.is_equiangular, "c": self.c, "is_tight": self.is_tight,
                "lambda": self.lam, "frame_bound": self.frame_bound}


def frame_check(a, tol=1e-10):
    a = np.asarray(a)
    m, n = a.shape
    if n >= 2:
        off = _abs_offdiag_gram(a)[~np.eye(n, dtype=bool)]
        c = float(off.mean())
        equi = columns_normalized(a) and bool(np.all(np.abs(off - c) <= tol))
    else:
        c, equi = 0.0, columns_normalized(a)
    s = a @ np.conj(a.T)
    bound = float(np.trace(s).real) / m
    tight = bool(np.linalg.norm(s - bound * np.eye(m)) <= tol * np.linalg.norm(s))
    return FrameCheck(equi, c, tight, 1.0 / bound)


# ---------------------------------------------------------------- null space property

@dataclass
class NspReport:
    order: int
    mode: str
    holds: bool
    worst_ratio: float
    witness: Optional[np.ndarray] = None
    support: Optional[list] = None
    rho: Optional[float] = None
    tau: Optional[float] = None
    supports_examined: int = 0

    def to_json(self):
        return {
            "order": self.order, "mode": self.mode, "holds": self.holds,
            "worst_ratio": self.worst_ratio,
            "witness": None if self.witness is None else [float(v) for v in self.witness],
            "support": self.support, "rho": self.rho, "tau": self.tau,
            "supports_examined": self.supports_examined,
        }

    @classmethod
    def from_json(cls, obj):
        w = obj.get("witness")
        return cls(obj["order"], obj["mode"], obj["holds"], obj["worst_ratio"],
                   None if w is None else np.asarray(w, dtype=float), obj.get("support"),
                   obj.get("rho"), obj.get("tau"), obj.get("supports_examined", 0))


def nsp_ratio(a, v, support, mode="plain", rho=None, tau=None):
    """Left side over right side of the defining inequality at ``v``."""
    v = np.asarray(v, dtype=float)
    mask = np.zeros(v.size, dtype=bool)
    mask[list(support)] = True
    inside = np.abs(v[mask]).sum()
    outside = np.abs(v[~mask]).sum()
    if mode == "robust_l1":
        denom = rho * outside + tau * np.abs(np.asarray(a) @ v).sum()
    else:
        denom = outside
    if denom == 0:
        return math.inf if inside > 0 else 0.0
    return float(inside / denom)


def _kernel_lp(k_in, k_out, signs):
    """max signs @ (k_in c) subject to ||k_out c||_1 <= 1, c free."""
    d = k_in.shape[1]
    q = k_out.shape[0]
    nvar = d + q + 2 * q + 1
    rows = []
    rhs = []
    for sgn, slack0 in ((1.0, d + q), (-1.0, d + 2 * q)):
        blk = np.zeros((q, nvar))
        blk[:, :d] = sgn * k_out
        blk[:, d:d + q] = -np.eye(q)
        blk[:, slack0:slack0 + q] = np.eye(q)
        rows.append(blk)
        rhs.append(np.zeros(q))
    last = np.zeros((1, nvar))
    last[0, d:d + q] = 1.0
    last[0, -1] = 1.0
    rows.append(last)
    rhs.append(np.ones(1))
    obj = np.zeros(nvar)
    obj[:d] = -(signs @ k_in)
    lower = np.concatenate([np.full(d, -np.inf), np.zeros(nvar - d)])
    return solve_lp(LpProblem(obj, np.vstack(rows), np.concatenate(rhs), lower)), d


def _robust_lp(a, support, signs, rho, tau):
    """min rho*||v_out||_1 + tau*||A v||_1 subject to signs @ v_S = 1."""
    m, n = a.shape
    sup = np.asarray(support)
    out = np.setdiff1d(np.arange(n), sup)
    q = out.size
    # variables: v (n, free) | t (q) | u (m) | slacks (2q + 2m)
    nvar = n + q + m + 2 * q + 2 * m
    rows, rhs = [], []
    first = np.zeros((1, nvar))
    first[0, sup] = signs
    rows.append(first)
    rhs.append(np.ones(1))
    col = n + q + m
    for sgn in (1.0, -1.0):
        blk = np.zeros((q, nvar))
        blk[np.arange(q), out] = sgn
        blk[:, n:n + q] = -np.eye(q)
        blk[:, col:col + q] = np.eye(q)
        col += q
        rows.append(blk)
        rhs.append(np.zeros(q))
    for sgn in (1.0, -1.0):
        blk = np.zeros((m, nvar))
        blk[:, :n] = sgn * a
        blk[:, n + q:n + q + m] = -np.eye(m)
        blk[:, col:col + m] = np.eye(m)
        col += m
        rows.append(blk)
        rhs.append(np.zeros(m))
    obj = np.zeros(nvar)
    obj[n:n + q] = rho
    obj[n + q:n + q + m] = tau
    lower = np.concatenate([np.full(n, -np.inf), np.zeros(nvar - n)])
    return solve_lp(LpProblem(obj, np.vstack(rows), np.concatenate(rhs), lower))


def _sign_patterns(s):
    # v and -v give the same ratio, so the first sign is fixed to +1
    for rest in itertools.product((1.0, -1.0), repeat=s - 1):
        yield np.array((1.0,) + rest)


def nsp_check(a, s, mode="plain", rho=None, tau=None):
    """Exact null space property check of order ``s`` by linear programming.

    For each support ``S`` with ``|S| = s`` (larger supports dominate smaller
    ones) and each sign pattern on ``S`` one LP is solved:

    * ``plain``/``stable``: ``rho*_S = max ||v_S||_1`` over ``v`` in the kernel
      with ``||v_{S^c}||_1 <= 1``, in kernel coordinates;
    * ``robust_l1``: ``min rho ||v_{S^c}||_1 + tau ||A v||_1`` subject to
      ``||v_S||_1 = 1``; ``worst_ratio`` is the reciprocal of the smallest
      such value, so the property holds iff ``worst_ratio <= 1``.
    """
    a = np.asarray(a)
    if np.iscomplexobj(a):
        raise ValidationError("nsp_check supports real matrices only")
    m, n = a.shape
    if not 1 <= s <= n:
        raise ValidationError(f"NSP order s={s} outside [1, {n}]")
    if mode not in ("plain", "stable", "robust_l1"):
        raise ValidationError(f"unknown NSP mode {mode!r}")
    if mode in ("stable", "robust_l1") and (rho is None or not 0 < rho < 1):
        raise ValidationError(f"{mode} mode needs 0 < rho < 1, got {rho}")
    if mode == "robust_l1" and (tau is None or not tau > 0):
        raise ValidationError(f"robust_l1 mode needs tau > 0, got {tau}")
    total = math.comb(n, s)
    if total > NSP_MAX_SUPPORTS:
        raise ValidationError(f"C({n},{s}) = {total} supports exceeds the NSP guard {NSP_MAX_SUPPORTS}")

    if mode == "robust_l1":
        return _nsp_robust(a, s, rho, tau, total)

    kernel = null_space(a)
    if kernel.shape[1] == 0:
        return NspReport(s, mode, True, 0.0, None, None, rho, tau, total)

    worst, witness, worst_support = -1.0, None, None
    for support in itertools.combinations(range(n), s):
        sup = list(support)
        out = np.setdiff1d(np.arange(n), sup)
        k_in, k_out = kernel[sup], kernel[out]
        if out.size == 0 or null_space(k_out).shape[1] > 0:
            # some kernel vector vanishes off S: the ratio is unbounded
            dirs = kernel if out.size == 0 else kernel @ null_space(k_out)
            worst, witness, worst_support = math.inf, dirs[:, 0], sup
            break
        best_s, best_v = -1.0, None
        for signs in _sign_patterns(s):
            res, d = _kernel_lp(k_in, k_out, signs)
            if res.status != "optimal":
                raise ValidationError(f"NSP subproblem on support {sup} returned {res.status}")
            v = kernel @ res.x[:d]
            if -res.value > best_s:
                best_s, best_v = -res.value, v
        if best_s > worst:
            worst, witness, worst_support = best_s, best_v, sup
    # report the exact ratio of the witness itself
    worst = nsp_ratio(a, witness, worst_support)
    if mode == "plain":
        holds = worst < 1.0 - NSP_STRICT_MARGIN
    else:
        holds = worst <= rho
    return NspReport(s, mode, bool(holds), float(worst), witness, worst_support, rho, tau, total)


def _nsp_robust(a, s, rho, tau, total):
    n = a.shape[1]
    margin, witness, worst_support = math.inf, None, None
    for support in itertools.combinations(range(n), s):
        for signs in _sign_patterns(s):
            res = _robust_lp(a, support, signs, rho, tau)
            if res.status != "optimal":
                raise ValidationError(f"robust NSP subproblem on support {list(support)} returned {res.status}")
            if res.value < margin:
                margin, witness, worst_support = res.value, res.x[:n], list(support)
    worst = nsp_ratio(a, witness, worst_support, "robust_l1", rho, tau)
    holds = worst <= 1.0 + NSP_STRICT_MARGIN
    return NspReport(s, "robust_l1", bool(holds), float(worst), witness, worst_support, rho, tau, total)


def verify_nsp_witness(a, report, tol=1e-9):
    """Re-evaluate an NSP witness; returns a list of violation messages."""
    problems = []
    if report.witness is None:
        return problems
    v = np.asarray(report.witness, dtype=float)
    ratio = nsp_ratio(a, v, report.support, report.mode, report.rho, report.tau)
    target = report.worst_ratio
    if math.isinf(target) or math.isinf(ratio):
        if ratio != target:
            problems.append(f"NSP witness ratio {ratio} does not reproduce worst_ratio {target}")
    elif abs(ratio - target) > tol * max(1.0, abs(target)):
        problems.append(f"NSP witness ratio {ratio:.15g} differs from worst_ratio {target:.15g}")
    if report.mode != "robust_l1":
        resid = np.linalg.norm(np.asarray(a) @ v)
        if resid > tol * max(1.0, np.linalg.norm(a) * np.linalg.norm(v)):
            problems.append(f"NSP witness is not in the kernel (||A v|| = {resid:.3e})")
    return problems


# ---------------------------------------------------------------- restricted isometry

@dataclass
class RipEstimate:
    order: int
    method: str
    delta: float
    supports_examined: int
    extremal_support: list
    seed: Optional[int] = None

    @property
    def certified(self):
        return self.method == "exact"

    def to_json(self):
        return {"order": self.order, "method": self.method, "delta": self.delta,
                "supports_examined": self.supports_examined,
                "extremal_support": self.extremal_support, "seed": self.seed}


def _unrank_combination(rank, n, k):
    """The ``rank``-th k-subset of range(n) in lexicographic order."""
    out = []
    x = 0
    for i in range(k, 0, -1):
        while True:
            count = math.comb(n - x - 1, i - 1)
            if rank < count:
                break
            rank -= count
            x += 1
        out.append(x)
        x += 1
    return out


def _support_deltas(a, supports):
    cols = a[:, supports]                      # m × K × s
    g = np.einsum("mki,mkj->kij", np.conj(cols), cols)
    ev = symmetric_eig(g, want_vectors=False).eigenvalues
    return np.maximum(ev[:, -1] - 1.0, 1.0 - ev[:, 0])


def _scan(a, support_iter):
    best, best_support, count = -1.0, None, 0
    while True:
        chunk = list(itertools.islice(support_iter, _RIP_CHUNK))
        if not chunk:
            break
        sup = np.array(chunk, dtype=np.int64)
        deltas = _support_deltas(a, sup)
        i = int(np.argmax(deltas))
        if deltas[i] > best:
            best, best_support = float(deltas[i]), [int(j) for j in sup[i]]
        count += len(chunk)
    return best, best_support, count


def rip_constant(a, s, method="exact", trials=1000, seed=0):
    """Restricted isometry constant of order ``s``.

    ``exact`` enumerates every support in lexicographic order; ``monte_carlo``
    examines ``trials`` distinct random supports and is a lower bound.
    """
    a = np.asarray(a)
    n = a.shape[1]
    if not 1 <= s <= n:
        raise ValidationError(f"RIP order s={s} outside [1, {n}]")
    total = math.comb(n, s)
    if method == "exact":
        if total > RIP_MAX_SUPPORTS:
            raise ValidationError(f"C({n},{s}) = {total} supports exceeds the exact RIP guard {RIP_MAX_SUPPORTS}")
        delta, support, count = _scan(a, itertools.combinations(range(n), s))
        return RipEstimate(s, "exact", delta, count, support)
    if method != "monte_carlo":
        raise ValidationError(f"unknown RIP method {method!r}")
    if trials < 1:
        raise ValidationError("monte_carlo RIP needs trials >= 1")
    stream = RngStream(seed)
    if trials >= total:
        supports = itertools.combinations(range(n), s)
    elif total < 2 ** 62:
        ranks = sorted(int(r) for r in _distinct_ranks(stream, total, trials))
        supports = iter([_unrank_combination(r, n, s) for r in ranks])
    else:
        seen = set()
        while len(seen) < trials:
            seen.add(tuple(stream.subset(n, s).tolist()))
        supports = iter(sorted(seen))
    delta, support, count = _scan(a, supports)
    return RipEstimate(s, "monte_carlo", delta, count, support, seed)


def _distinct_ranks(stream, total, k):
    chosen = set()
    for j in range(total - k, total):
        t = int(stream.integers(j + 1, 1)[0])
        chosen.add(j if t in chosen else t)
    return chosen


# ---------------------------------------------------------------- guarantee report

@dataclass
class DiagnosticsReport:
    order: int
    shape: tuple
    columns_normalized: bool
    coherence: float
    l1_coherence: dict
    welch_bound: float
    welch_bound_l1: Optional[float]
    frame: FrameCheck
    nsp: list = field(default_factory=list)
    rip: list = field(default_factory=list)
    guarantees: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_json(self):
        return {
            "order": self.order,
            "shape": list(self.shape),
            "columns_normalized": self.columns_normalized,
            "coherence": self.coherence,
            "l1_coherence": {str(k): v for k, v in self.l1_coherence.items()},
            "welch_bound": self.welch_bound,
            "welch_bound_l1": self.welch_bound_l1,
            "frame": self.frame.to_json(),
            "nsp": [r.to_json() for r in self.nsp],
            "rip": [r.to_json() for r in self.rip],
            "guarantees": self.guarantees,
            "notes": self.notes,
        }


def _inequality(lhs, rhs, holds, certified):
    return {"lhs": lhs, "rhs": rhs, "holds": holds, "certified": certified}


def guarantee_report(a, s, rip_trials=2000, seed=0, include_nsp="auto"):
    """Evaluate the coherence and RIP recovery hypotheses for order ``s``.

    * coherence: ``mu1(s) + mu1(s-1) < 1``;
    * exact recovery: ``delta_2s < 1/3``;
    * robust recovery: ``delta_2s < 4/sqrt(41)``.

    RIP constants are exact when the support count allows it, otherwise a
    Monte Carlo lower bound is used and the flags are marked uncertified.
    ``include_nsp="auto"`` runs the exact NSP check only when it needs at
    most ``NSP_AUTO_BUDGET`` LP solves.
    """
    a = np.asarray(a)
    m, n = a.shape
    if not 1 <= s <= n:
        raise ValidationError(f"order s={s} outside [1, {n}]")
    notes = []
    normalized = columns_normalized(a)
    an = a if normalized else a / np.linalg.norm(a, axis=0)
    if not normalized:
        notes.append("columns not normalized: coherence figures refer to the column-normalized matrix "
                     "and the coherence theorem is not applicable")
    mu = coherence(an)
    mu1 = {k: l1_coherence(an, k) for k in range(0, min(s, n - 1) + 1)}
    wb = welch_bound(m, n, 1) if n >= 2 else 0.0
    wb1 = None
    if n >= 2 and s < math.sqrt(n - 1):
        wb1 = welch_bound(m, n, s)
    frame = frame_check(an)

    nsp = []
    lp_count = math.comb(n, s) * 2 ** (s - 1)
    budget = NSP_AUTO_BUDGET if include_nsp == "auto" else NSP_MAX_SUPPORTS * 2 ** (s - 1)
    if include_nsp and not np.iscomplexobj(a) and lp_count <= budget:
        nsp.append(nsp_check(a, s))
    elif include_nsp:
        notes.append(f"NSP check skipped (complex matrix or {lp_count} LP solves above budget)")

    rip = []
    for order in sorted({s, min(2 * s, n)}):
        if math.comb(n, order) <= RIP_MAX_SUPPORTS:
            rip.append(rip_constant(a, order, "exact"))
        else:
            rip.append(rip_constant(a, order, "monte_carlo", rip_trials, seed))
    if 2 * s > n:
        notes.append(f"2s = {2 * s} exceeds N = {n}; delta_{n} used for delta_2s")
    d2s = rip[-1]

    guarantees = {}
    if s <= n - 1:
        lhs = mu1[s] + mu1[s - 1]
        guarantees["coherence_thm"] = _inequality(lhs, 1.0, bool(lhs < 1.0) if normalized else False, normalized)
    else:
        guarantees["coherence_thm"] = _inequality(None, 1.0, None, False)
    guarantees["rip_third"] = _inequality(d2s.delta, RIP_THIRD, bool(d2s.delta < RIP_THIRD), d2s.certified)
    guarantees["rip_robust"] = _inequality(d2s.delta, RIP_ROBUST, bool(d2s.delta < RIP_ROBUST), d2s.certified)
    if nsp:
        guarantees["nsp"] = _inequality(nsp[0].worst_ratio, 1.0, nsp[0].holds, True)
    return DiagnosticsReport(s, (m, n), normalized, mu, mu1, wb, wb1, frame, nsp, rip, guarantees, notes)
