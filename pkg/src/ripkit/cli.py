"""Command-line experiment runner.

    ripkit <gen-matrix|diagnose|recover|manifold|mp-check> --config cfg.json [--out DIR] [--seed U64]
    ripkit verify report.json

Exit codes: 0 success, 1 verification failed, 2 invalid input, 3 numerical failure.
"""
import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import tempfile
import time

import numpy as np

from ripkit import __version__, diagnostics, manifold, recovery
from ripkit.ensembles import EnsembleSpec, build, hierarchical_dataset
from ripkit.errors import NumericalFailure, SingularityError, ValidationError
from ripkit.numerics.linalg import symmetric_eig
from ripkit.numerics.matrix import matrix_from_json, matrix_to_json
from ripkit.numerics.rng import check_seed, derive_seed

COMMANDS = ("gen-matrix", "diagnose", "recover", "manifold", "mp-check")
EXIT_OK, EXIT_VERIFY, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2, 3

_COMMON = {"command", "seed", "out", "report", "csv"}
_KEYS = {
    "gen-matrix": {"ensemble"},
    "diagnose": {"ensemble", "matrix", "s", "rip_trials", "include_nsp"},
    "recover": {"ensemble", "matrix", "s", "trials", "eta"},
    "manifold": {"manifold"},
    "mp-check": {"mp"},
}
_MANIFOLD_DEFAULTS = {
    "mode": "shared", "kind": "gaussian", "depth": 3, "decay": 0.5,
    "R_grid": None, "distortion_factor": 1.5, "embed_pullbacks": True,
}
_MP_DEFAULTS = {"count": 1, "kind": "gaussian"}


# ---------------------------------------------------------------- config validation

def _integer(obj, key, lo=None, hi=None, where="config"):
    v = obj.get(key)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValidationError(f"{where}.{key} must be an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ValidationError(f"{where}.{key}={v} is below {lo}")
    if hi is not None and v > hi:
        raise ValidationError(f"{where}.{key}={v} exceeds {hi}")
    return v


def _real(obj, key, lo=None, where="config", strict=False):
    v = obj.get(key)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ValidationError(f"{where}.{key} must be a finite number, got {v!r}")
    if lo is not None and (v <= lo if strict else v < lo):
        raise ValidationError(f"{where}.{key}={v} must be {'>' if strict else '>='} {lo}")
    return float(v)


def _section(cfg, key, defaults, required):
    obj = cfg.get(key)
    if not isinstance(obj, dict):
        raise ValidationError(f"config.{key} must be an object")
    unknown = set(obj) - set(defaults) - set(required)
    if unknown:
        raise ValidationError(f"unknown fields in config.{key}: {sorted(unknown)}")
    missing = [k for k in required if k not in obj]
    if missing:
        raise ValidationError(f"config.{key} is missing {missing}")
    return {**defaults, **obj}


def _resolve_matrix(cfg, master):
    """Returns (echo fields, matrix) for commands that take a sensing matrix."""
    if ("ensemble" in cfg) == ("matrix" in cfg):
        raise ValidationError("config needs exactly one of 'ensemble' or 'matrix'")
    if "matrix" in cfg:
        return {"matrix": cfg["matrix"]}, matrix_from_json(cfg["matrix"])
    ens = dict(cfg["ensemble"]) if isinstance(cfg["ensemble"], dict) else cfg["ensemble"]
    if isinstance(ens, dict) and "seed" not in ens:
        ens["seed"] = derive_seed(master, "ensemble")
    spec = EnsembleSpec.from_json(ens)
    return {"ensemble": spec.to_json()}, spec


def resolve_config(raw, command, seed=None, out=None):
    """Validate ``raw`` for ``command`` and return the fully explicit config.

    Every default is filled in, so the returned dict reruns identically.
    """
    if not isinstance(raw, dict):
        raise ValidationError("config must be a JSON object")
    if raw.get("command", command) != command:
        raise ValidationError(f"config is for {raw['command']!r}, invoked as {command!r}")
    unknown = set(raw) - _COMMON - _KEYS[command]
    if unknown:
        raise ValidationError(f"unknown config fields for {command}: {sorted(unknown)}")
    cfg = dict(raw)
    cfg["command"] = command
    cfg["seed"] = check_seed(seed if seed is not None else raw.get("seed", 0))
    cfg["out"] = out if out is not None else raw.get("out", ".")
    cfg["report"] = raw.get("report", f"{command}_report.json")
    cfg["csv"] = raw.get("csv", True)
    if not isinstance(cfg["out"], str) or not isinstance(cfg["report"], str) or os.sep in cfg["report"]:
        raise ValidationError("config.out must be a directory path and config.report a file name")
    if not isinstance(cfg["csv"], bool):
        raise ValidationError("config.csv must be true or false")
    _check_writable(cfg["out"])
    master = cfg["seed"]

    if command in ("gen-matrix", "diagnose", "recover"):
        if command == "gen-matrix" and "matrix" in cfg:
            raise ValidationError("gen-matrix takes an 'ensemble', not a 'matrix'")
        echo, source = _resolve_matrix(cfg, master)
        cfg.pop("ensemble", None)
        cfg.pop("matrix", None)
        cfg.update(echo)
        n = source.N if isinstance(source, EnsembleSpec) else source.shape[1]
        if command != "gen-matrix":
            cfg["s"] = _integer(cfg, "s", 1, n)
        if command == "diagnose":
            cfg.setdefault("rip_trials", 2000)
            cfg.setdefault("include_nsp", "auto")
            _integer(cfg, "rip_trials", 1)
            if cfg["include_nsp"] not in ("auto", True, False):
                raise ValidationError("config.include_nsp must be 'auto', true or false")
        if command == "recover":
            _integer(cfg, "trials", 1)
            cfg["eta"] = _real({"eta": cfg.get("eta", 0.0)}, "eta", 0.0)
            if "matrix" in cfg and np.iscomplexobj(source):
                raise ValidationError("recover needs a real matrix")
            if isinstance(source, EnsembleSpec) and source.kind == "alltop_gabor":
                raise ValidationError("recover needs a real matrix; alltop_gabor is complex")
    elif command == "manifold":
        mf = _section(cfg, "manifold", _MANIFOLD_DEFAULTS, ("n", "N", "m"))
        where = "config.manifold"
        _integer(mf, "n", 2, where=where)
        _integer(mf, "N", 1, where=where)
        _integer(mf, "m", 1, mf["N"], where=where)
        _integer(mf, "depth", 0, 30, where=where)
        _real(mf, "decay", 0.0, where=where, strict=True)
        if mf["decay"] >= 1:
            raise ValidationError(f"{where}.decay must be < 1")
        _real(mf, "distortion_factor", 0.0, where=where, strict=True)
        if mf["mode"] not in manifold.MODES:
            raise ValidationError(f"{where}.mode must be one of {manifold.MODES}")
        if mf["kind"] not in ("gaussian", "bernoulli"):
            raise ValidationError(f"{where}.kind must be gaussian or bernoulli")
        if not isinstance(mf["embed_pullbacks"], bool):
            raise ValidationError(f"{where}.embed_pullbacks must be true or false")
        if mf["R_grid"] is not None:
            grid = mf["R_grid"]
            if not isinstance(grid, list) or not grid:
                raise ValidationError(f"{where}.R_grid must be a non-empty list or null")
            for i in range(len(grid)):
                _real(dict(enumerate(grid)), i, 0.0, where=f"{where}.R_grid", strict=True)
        cfg["manifold"] = mf
    else:
        mp = _section(cfg, "mp", _MP_DEFAULTS, ("m", "N"))
        where = "config.mp"
        _integer(mp, "N", 1, where=where)
        _integer(mp, "m", 1, mp["N"], where=where)
        _integer(mp, "count", 1, where=where)
        if mp["kind"] not in ("gaussian", "bernoulli"):
            raise ValidationError(f"{where}.kind must be gaussian or bernoulli")
        cfg["mp"] = mp
    return cfg


def _check_writable(path):
    probe = os.path.abspath(path)
    while not os.path.exists(probe):
        parent = os.path.dirname(probe)
        if parent == probe:
            break
        probe = parent
    if not os.path.isdir(probe) or not os.access(probe, os.W_OK):
        raise ValidationError(f"output location {path!r} is not a writable directory")


def thread_count():
    raw = os.environ.get("RIPKIT_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"RIPKIT_THREADS must be a non-negative integer, got {raw!r}") from None
    if n < 0:
        raise ValidationError(f"RIPKIT_THREADS must be a non-negative integer, got {raw!r}")
    return n if n > 0 else (os.cpu_count() or 1)


# ---------------------------------------------------------------- pipelines

def _matrix(cfg):
    if "matrix" in cfg:
        return matrix_from_json(cfg["matrix"])
    return build(EnsembleSpec.from_json(cfg["ensemble"]))


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _run_gen_matrix(cfg, threads):
    return {"matrix": matrix_to_json(_matrix(cfg))}, {}


def _run_diagnose(cfg, threads):
    a = _matrix(cfg)
    rep = diagnostics.guarantee_report(a, cfg["s"], cfg["rip_trials"], derive_seed(cfg["seed"], "rip"),
                                       cfg["include_nsp"])
    return {"matrix": matrix_to_json(a), "report": rep.to_json()}, {}


def _run_recover(cfg, threads):
    a = _matrix(cfg)
    summary = recovery.batch_recovery_experiment(a, cfg["s"], cfg["trials"], cfg["eta"],
                                                 derive_seed(cfg["seed"], "recover"), workers=threads)
    rows = [[r.trial, r.seed, ";".join(map(str, r.support)), repr(r.err_l1), repr(r.err_l2), int(r.success)]
            for r in summary.records]
    files = {"trials.csv": _csv_text(["trial", "seed", "support", "err_l1", "err_l2", "success"], rows)}
    return {"summary": summary.to_json()}, files


def _manifold_points(cfg):
    mf = cfg["manifold"]
    return hierarchical_dataset(mf["n"], mf["N"], mf["depth"], mf["decay"], derive_seed(cfg["seed"], "dataset"))


def _run_manifold(cfg, threads):
    mf = cfg["manifold"]
    run = manifold.compress(_manifold_points(cfg), mf["m"], mf["mode"], mf["kind"], derive_seed(cfg["seed"], "compress"))
    grid = manifold.default_grid(run) if mf["R_grid"] is None else np.asarray(mf["R_grid"], dtype=float)
    scores = manifold.radius_scores(run, grid)
    r_star, ext = manifold.fit_radius(run, grid)
    r_big = 1e6 * manifold.data_diameter(run)
    big = manifold.extend_to_sphere(run, r_big)
    factor = mf["distortion_factor"]
    payload = {
        "compression": run.to_json(include_pullbacks=mf["embed_pullbacks"]),
        "radius_scores": [{"radius": r, "delta_sphere": d} for r, d in scores],
        "extension": ext.to_json(),
        "distortion_factor": factor,
        "within_factor": bool(ext.delta_sphere <= factor * ext.delta_linear),
        "large_radius": {"radius": r_big, "delta_sphere": big.delta_sphere,
                         "gap": abs(big.delta_sphere - big.delta_linear)},
    }
    files = {"distances.csv": _csv_text(None, [[repr(v) for v in row] for row in ext.distances])}
    return payload, files


def _run_mp_check(cfg, threads):
    mp = cfg["mp"]
    seeds = [derive_seed(cfg["seed"], "mp", k) for k in range(mp["count"])]
    mats = [build(EnsembleSpec(mp["kind"], mp["m"], mp["N"], seed=sd)) for sd in seeds]
    cmp = manifold.compare_spectrum(mats, mp["kind"])
    files = {"eigenvalues.csv": _csv_text(["eigenvalue"], [[repr(v)] for v in cmp.eigenvalues])}
    return {"matrix_seeds": seeds, "comparison": cmp.to_json()}, files


_PIPELINES = {
    "gen-matrix": _run_gen_matrix, "diagnose": _run_diagnose, "recover": _run_recover,
    "manifold": _run_manifold, "mp-check": _run_mp_check,
}


def payload_digest(payload):
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def run(cfg, threads=1):
    """Execute a resolved config; returns (envelope, extra files)."""
    start = time.perf_counter()
    payload, files = _PIPELINES[cfg["command"]](cfg, threads)
    envelope = {
        "tool": "ripkit",
        "version": __version__,
        "command": cfg["command"],
        "config": cfg,
        "wall_time_s": time.perf_counter() - start,
        "payload_sha256": payload_digest(payload),
        "payload": payload,
    }
    return envelope, files


def _write_all(out_dir, files):
    os.makedirs(out_dir, exist_ok=True)
    for name, text in files.items():
        fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=".ripkit-")
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, os.path.join(out_dir, name))


# ---------------------------------------------------------------- verification

def _verify_diagnose(env):
    problems = []
    p = env["payload"]
    a = matrix_from_json(p["matrix"])
    rep = p["report"]
    an = a / np.linalg.norm(a, axis=0)
    mu = diagnostics.coherence(an)
    if abs(mu - rep["coherence"]) > 1e-12:
        problems.append(f"coherence {rep['coherence']} does not match recomputed {mu}")
    for obj in rep["nsp"]:
        problems += diagnostics.verify_nsp_witness(a, diagnostics.NspReport.from_json(obj))
    for est in rep["rip"]:
        if est["method"] != "exact":
            continue
        sub = a[:, est["extremal_support"]]
        ev = symmetric_eig(np.conj(sub.T) @ sub, want_vectors=False).eigenvalues
        attained = float(np.max(np.abs(ev - 1.0)))
        if abs(attained - est["delta"]) > 1e-10:
            problems.append(f"RIP delta_{est['order']} = {est['delta']} not attained on its extremal support ({attained})")
    return problems


def _verify_recover(env):
    problems = []
    s = env["payload"]["summary"]
    recs = s["records"]
    for i, r in enumerate(recs):
        if r["seed"] != derive_seed(s["seed"], "trial", i):
            problems.append(f"trial {i} seed does not follow from the batch seed")
        if s["eta"] == 0 and r["success"] and not r["err_l2"] <= s["success_rtol"] * r["x_norm_l2"]:
            problems.append(f"trial {i} marked successful with relative error above {s['success_rtol']}")
    if recs and abs(sum(r["success"] for r in recs) / len(recs) - s["success_rate"]) > 1e-15:
        problems.append("success_rate does not match the trial records")
    if recs and max(r["err_l2"] for r in recs) != s["max_err_l2"]:
        problems.append("max_err_l2 does not match the trial records")
    return problems


def _verify_manifold(env):
    problems = []
    cfg, p = env["config"], env["payload"]
    comp, ext = p["compression"], p["extension"]
    m, N = comp["m"], comp["N"]
    bound = manifold.PULLBACK_RTOL * math.sqrt(m)
    for k, df in enumerate(comp.get("pullbacks", [])):
        a = build(EnsembleSpec(comp["kind"], m, N, seed=comp["matrix_seeds"][k]))
        df = np.asarray(df, dtype=float)
        res = float(np.linalg.norm(a @ df - np.eye(m)))
        if res > bound:
            problems.append(f"pullback identity violated for k={k}: residual {res:.3e} > {bound:.3e}")
        g = df.T @ df
        if symmetric_eig(0.5 * (g + g.T), want_vectors=False).eigenvalues[0] <= 0:
            problems.append(f"metric G_{k} is not positive definite")
    r = ext["radius"]
    d = np.asarray(ext["distances"], dtype=float)
    if not np.array_equal(d, d.T):
        i, j = np.argwhere(d != d.T)[0]
        problems.append(f"distance matrix not symmetric at ({i}, {j})")
    if np.any(np.diag(d) != 0):
        problems.append("distance matrix has a nonzero diagonal entry")
    if np.any(d < 0) or np.any(d > math.pi * r):
        problems.append(f"distance entry outside [0, pi*R] for R = {r}")
    lifted = np.asarray(ext["lifted"], dtype=float)
    try:
        geo = manifold.geodesic_distances(lifted, r)
        if np.max(np.abs(geo - d)) > manifold.SPHERE_RTOL * r:
            i, j = np.unravel_index(np.argmax(np.abs(geo - d)), d.shape)
            problems.append(f"distance ({i}, {j}) disagrees with the lifted points")
    except ValidationError as exc:
        problems.append(f"lifted points: {exc}")
    ref = manifold.euclidean_distances(_manifold_points(cfg))
    if d.shape == ref.shape and not problems:
        delta = manifold.distortion(ref, d)
        if abs(delta - ext["delta_sphere"]) > 1e-9 * max(1.0, delta):
            problems.append(f"delta_sphere {ext['delta_sphere']} does not match recomputed {delta}")
    return problems


def _verify_mp(env):
    problems = []
    c = env["payload"]["comparison"]
    ev = np.asarray(c["eigenvalues"], dtype=float)
    ks = manifold.ks_statistic(ev, c["aspect_ratio"])
    if abs(ks - c["ks_statistic"]) > 1e-12:
        problems.append(f"ks_statistic {c['ks_statistic']} does not match recomputed {ks}")
    return problems


def _verify_gen(env):
    a = matrix_from_json(env["payload"]["matrix"])
    if "ensemble" in env["config"]:
        ref = build(EnsembleSpec.from_json(env["config"]["ensemble"]))
        if ref.shape != a.shape or not np.array_equal(ref, a):
            return ["matrix does not match its ensemble seed"]
    return []


_VERIFIERS = {
    "gen-matrix": _verify_gen, "diagnose": _verify_diagnose, "recover": _verify_recover,
    "manifold": _verify_manifold, "mp-check": _verify_mp,
}


def verify_report(env):
    """List of violated invariants in a report envelope (empty if it checks out)."""
    try:
        command = env["command"]
        payload = env["payload"]
        checker = _VERIFIERS[command]
    except (KeyError, TypeError):
        raise ValidationError("malformed report: needs 'command' and 'payload'") from None
    try:
        problems = checker(env)
    except (KeyError, TypeError, IndexError) as exc:
        raise ValidationError(f"malformed {command} report: {exc!r}") from None
    if env.get("payload_sha256") != payload_digest(payload):
        problems.append("payload hash does not match payload contents")
    return problems


# ---------------------------------------------------------------- entry point

def _parser():
    ap = argparse.ArgumentParser(prog="ripkit", description="Sparse-recovery diagnostics and manifold experiments.")
    ap.add_argument("--version", action="version", version=f"ripkit {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} pipeline")
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", help="output directory (overrides config.out)")
        p.add_argument("--seed", type=int, help="master seed (overrides config.seed)")
    p = sub.add_parser("verify", help="re-check certificates embedded in a report")
    p.add_argument("report")
    return ap


def _fail(code, msg):
    print(f"ripkit: error: {msg}", file=sys.stderr)
    return code


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.command == "verify":
        try:
            with open(args.report) as fh:
                env = json.load(fh)
            problems = verify_report(env)
        except (OSError, json.JSONDecodeError, ValidationError) as exc:
            return _fail(EXIT_INVALID, str(exc))
        for msg in problems:
            print(f"FAIL {msg}")
        if problems:
            return EXIT_VERIFY
        print(f"OK {args.report}")
        return EXIT_OK
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
        cfg = resolve_config(raw, args.command, args.seed, args.out)
        threads = thread_count()
        env, files = run(cfg, threads)
    except (OSError, json.JSONDecodeError, ValidationError) as exc:
        return _fail(EXIT_INVALID, str(exc))
    except (NumericalFailure, SingularityError) as exc:
        return _fail(EXIT_NUMERICAL, str(exc))
    files = {cfg["report"]: json.dumps(env) + "\n", **(files if cfg["csv"] else {})}
    _write_all(cfg["out"], files)
    print(os.path.join(cfg["out"], cfg["report"]))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
