"""Basis pursuit, its noise-constrained variant, and batch recovery experiments."""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ripkit.errors import ValidationError
from ripkit.numerics.lp import LpProblem, solve_lp
from ripkit.numerics.rng import RngStream, derive_seed

SUCCESS_RTOL = 1e-6
BPDN_TOL = 1e-8
BPDN_MAX_ITER = 100_000
_POLISH_EVERY = 25
_KKT_TOL = 1e-9
# relative magnitudes below which iterate entries are dropped before polishing
_PRUNE_LEVELS = (0.0, 1e-6, 1e-3, 1e-2)


@dataclass
class RecoveryResult:
    solution: np.ndarray
    objective: float
    residual: float
    status: str  # "optimal" | "infeasible" | "numerical_failure"
    iterations: int
    unique: Optional[bool] = None


def _check_real(a, y):
    a = np.asarray(a)
    if np.iscomplexobj(a) or np.iscomplexobj(y):
        raise ValidationError("recovery supports real matrices and measurements only")
    a = a.astype(float)
    y = np.asarray(y, dtype=float).ravel()
    if a.ndim != 2 or y.size != a.shape[0]:
        raise ValidationError(f"measurement length {y.size} does not match matrix rows {a.shape[0]}")
    return a, y


def basis_pursuit(a, y):
    """min ||z||_1 subject to A z = y, as an LP in z = u - w with u, w >= 0."""
    a, y = _check_real(a, y)
    n = a.shape[1]
    res = solve_lp(LpProblem(np.ones(2 * n), np.hstack([a, -a]), y))
    if res.status != "optimal":
        return RecoveryResult(np.zeros(n), math.nan, math.nan, "infeasible", res.iterations)
    z = res.x[:n] - res.x[n:]
    return RecoveryResult(z, float(np.abs(z).sum()), float(np.linalg.norm(a @ z - y)),
                          "optimal", res.iterations, res.unique)


def _spectral_norm(a, iters=500, tol=1e-12):
    """Largest singular value by power iteration on A^T A (deterministic start)."""
    v = np.ones(a.shape[1]) / math.sqrt(a.shape[1])
    est = 0.0
    for _ in range(iters):
        w = a.T @ (a @ v)
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        v = w / nrm
        if abs(nrm - est) <= tol * nrm:
            break
        est = nrm
    return math.sqrt(nrm)


def _soft(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def _project_ball(u, y, eta):
    d = u - y
    nrm = np.linalg.norm(d)
    return u if nrm <= eta else y + d * (eta / nrm)


def _solve_on_pattern(a, y, eta, support, sg):
    """Minimizer of sg @ z_T over the feasible set restricted to support T."""
    at = a[:, support]
    try:
        chol = np.linalg.cholesky(at.T @ at)
    except np.linalg.LinAlgError:
        return None, None

    def gram_solve(rhs):
        return np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))

    z_ls = gram_solve(at.T @ y)
    r_ls = np.linalg.norm(at @ z_ls - y)
    if eta == 0:
        if r_ls > 1e-10 * max(1.0, np.linalg.norm(y)):
            return None, gram_solve
        return z_ls, gram_solve
    if r_ls >= eta:
        return None, gram_solve
    h = gram_solve(sg)
    return z_ls - math.sqrt(eta ** 2 - r_ls ** 2) * h / math.sqrt(float(sg @ h)), gram_solve


def _polish(a, y, eta, z, duals, max_steps=None):
    """Active-set refinement of the support/sign pattern of ``z``, certified by KKT.

    On a fixed pattern the problem has a closed-form solution; the dual
    certificate ``q`` (``A_T^T q = sign(z_T)``, ``|A^T q| <= 1``) then either
    proves optimality or names the most violated inactive column, which joins
    the pattern. Entries whose sign flips leave it. Returns None if no
    certified pattern is reached within ``max_steps``.
    """
    m, n = a.shape
    support = [int(j) for j in np.flatnonzero(z)]
    signs = {j: float(np.sign(z[j])) for j in support}
    steps = max_steps if max_steps is not None else m + 5
    for _ in range(steps):
        if not support or len(support) > m:
            return None
        sup = np.array(sorted(support))
        sg = np.array([signs[j] for j in sup])
        zt, gram_solve = _solve_on_pattern(a, y, eta, sup, sg)
        if zt is None:
            return None
        flipped = sup[np.sign(zt) != sg]
        if flipped.size:
            for j in flipped:
                support.remove(int(j))
            continue
        at = a[:, sup]
        if eta == 0:
            cands = [q0 - at @ gram_solve(at.T @ q0 - sg) for q0 in list(duals) + [at @ gram_solve(sg)]]
        else:
            r = at @ zt - y
            g = at.T @ r
            lam = -float(sg @ g) / float(g @ g) if g @ g > 0 else 0.0
            if lam <= 0:
                return None
            cands = [-lam * r]
        best_q, best_viol = None, math.inf
        for q in cands:
            corr = a.T @ q
            if np.max(np.abs(corr[sup] - sg)) > 1e-8:
                continue
            viol = np.max(np.abs(corr), initial=0.0)
            if viol < best_viol:
                best_q, best_viol = q, viol
        if best_q is None:
            return None
        if best_viol <= 1.0 + _KKT_TOL:
            sol = np.zeros(n)
            sol[sup] = zt
            return sol
        corr = a.T @ best_q
        corr[sup] = 0.0
        j = int(np.argmax(np.abs(corr)))
        support.append(j)
        signs[j] = float(np.sign(corr[j]))
    return None


def basis_pursuit_denoise(a, y, eta, tol=BPDN_TOL, max_iter=BPDN_MAX_ITER):
    """min ||z||_1 subject to ||A z - y||_2 <= eta.

    Primal-dual (Chambolle–Pock) iterations: l1 shrinkage on the primal and
    projection onto the eta-ball around ``y`` on the dual, steps
    ``tau = sigma = 0.99 / ||A||_2`` with ``||A||_2`` from power iteration.
    Every few iterations the current support and signs are solved exactly
    and accepted once a KKT certificate checks out; otherwise the loop runs
    to a fixed-point tolerance ``tol`` or the iteration cap.
    """
    a, y = _check_real(a, y)
    if not eta >= 0:
        raise ValidationError(f"eta must be >= 0, got {eta}")
    m, n = a.shape
    if np.linalg.norm(y) <= eta:
        z = np.zeros(n)
        return RecoveryResult(z, 0.0, float(np.linalg.norm(y)), "optimal", 0)

    norm_a = _spectral_norm(a)
    step = 0.99 / norm_a
    z = np.zeros(n)
    zbar = z.copy()
    p = np.zeros(m)

    def finish(sol, status, it):
        return RecoveryResult(sol, float(np.abs(sol).sum()), float(np.linalg.norm(a @ sol - y)), status, it)

    for it in range(1, max_iter + 1):
        q = p + step * (a @ zbar)
        p_new = q - step * _project_ball(q / step, y, eta)
        z_new = _soft(z - step * (a.T @ p_new), step)
        zbar = 2.0 * z_new - z
        dz = np.linalg.norm(z_new - z)
        dp = np.linalg.norm(p_new - p)
        z, p = z_new, p_new
        if it % _POLISH_EVERY == 0:
            zmax = np.max(np.abs(z), initial=0.0)
            for cut in _PRUNE_LEVELS:
                polished = _polish(a, y, eta, np.where(np.abs(z) > cut * zmax, z, 0.0), [-p])
                if polished is not None:
                    return finish(polished, "optimal", it)
        scale = max(1.0, np.linalg.norm(z))
        if dz <= tol * scale and dp <= tol * max(1.0, np.linalg.norm(p)):
            feasible = np.linalg.norm(a @ z - y) <= eta + 1e-6 * max(1.0, np.linalg.norm(y))
            return finish(z, "optimal" if feasible else "numerical_failure", it)
    return finish(z, "numerical_failure", max_iter)


@dataclass
class TrialRecord:
    trial: int
    seed: int
    support: list
    err_l1: float
    err_l2: float
    x_norm_l2: float
    success: bool
    status: str

    def to_json(self):
        return dict(self.__dict__)


@dataclass
class BatchSummary:
    order: int
    trials: int
    eta: float
    seed: int
    success_rate: float
    max_err_l1: float
    max_err_l2: float
    max_err_ratio: Optional[float]
    records: list = field(default_factory=list)
    cross_check: Optional[dict] = None

    def to_json(self, include_records=True):
        out = {
            "order": self.order, "trials": self.trials, "eta": self.eta, "seed": self.seed,
            "success_rate": self.success_rate, "max_err_l1": self.max_err_l1,
            "max_err_l2": self.max_err_l2, "max_err_ratio": self.max_err_ratio,
            "success_rtol": SUCCESS_RTOL, "cross_check": self.cross_check,
        }
        if include_records:
            out["records"] = [r.to_json() for r in self.records]
        return out


def draw_sparse_signal(stream, n, s):
    """Gaussian amplitudes on a uniformly random ``s``-subset of ``range(n)``."""
    support = stream.subset(n, s)
    x = np.zeros(n)
    x[support] = stream.gaussian(s)
    return x, support


def _one_trial(a, s, eta, trial_seed, trial):
    m, n = a.shape
    stream = RngStream(trial_seed)
    x, support = draw_sparse_signal(stream, n, s)
    y = a @ x
    if eta > 0:
        g = stream.gaussian(m)
        y = y + eta * g / np.linalg.norm(g)
        res = basis_pursuit_denoise(a, y, eta)
    else:
        res = basis_pursuit(a, y)
    diff = x - res.solution
    err_l1 = float(np.abs(diff).sum())
    err_l2 = float(np.linalg.norm(diff))
    xn = float(np.linalg.norm(x))
    if eta > 0:
        # with noise, success means a feasible optimal point was returned
        ok = res.status == "optimal" and res.residual <= eta * (1 + 1e-6)
    else:
        ok = res.status == "optimal" and err_l2 <= SUCCESS_RTOL * xn
    return TrialRecord(trial, trial_seed, [int(i) for i in support], err_l1, err_l2, xn, bool(ok), res.status)


def _cross_check(a, s):
    """Cheap guarantee evaluation used when a noiseless batch records failures."""
    from ripkit import diagnostics

    out = {}
    an = a / np.linalg.norm(a, axis=0)
    n = a.shape[1]
    if s <= n - 1:
        lhs = diagnostics.l1_coherence(an, s) + diagnostics.l1_coherence(an, s - 1)
        out["coherence_thm"] = {"lhs": lhs, "holds": bool(lhs < 1.0),
                                "certified": diagnostics.columns_normalized(a)}
    order = min(2 * s, n)
    if math.comb(n, order) <= 10 ** 5:
        d = diagnostics.rip_constant(a, order).delta
        out["rip_third"] = {"lhs": d, "holds": bool(d < diagnostics.RIP_THIRD), "certified": True}
    out["guarantee_violated"] = any(v["holds"] and v["certified"] for v in out.values())
    return out


def batch_recovery_experiment(a, s, trials, eta=0.0, seed=0, workers=1):
    """Recover ``trials`` random ``s``-sparse signals and summarize the errors.

    Trial ``i`` draws from its own stream ``derive_seed(seed, "trial", i)``,
    so results do not depend on ``workers`` or on the number of trials.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[1]
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    if not 1 <= s <= n:
        raise ValidationError(f"sparsity s={s} outside [1, {n}]")
    if not eta >= 0:
        raise ValidationError(f"eta must be >= 0, got {eta}")
    seeds = [derive_seed(seed, "trial", i) for i in range(trials)]
    jobs = [(a, s, eta, sd, i) for i, sd in enumerate(seeds)]
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(lambda args: _one_trial(*args), jobs))
    else:
        records = [_one_trial(*job) for job in jobs]
    success = sum(r.success for r in records) / trials
    max_l1 = max(r.err_l1 for r in records)
    max_l2 = max(r.err_l2 for r in records)
    ratio = max_l2 / eta if eta > 0 else None
    cross = _cross_check(a, s) if success < 1.0 and eta == 0 else None
    return BatchSummary(s, trials, float(eta), seed, success, max_l1, max_l2, ratio, records, cross)
