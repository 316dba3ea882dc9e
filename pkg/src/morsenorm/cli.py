"""Command line interface.

::

    morsenorm analyze|normalize|conjugate|fixedpoint|verify SPEC.json
        [--order N] [--grid "lo:hi:steps[,...]"] [--method exit|fixedpoint|both]
        [--delta D] [--p P] [--k K] [--tmax T] [--seed S] [--out DIR]

Every command writes ``report.json`` (sorted keys, no timings, so identical
inputs give identical bytes in exact mode) and ``timings.json`` under
``--out``.  Grid points and maps live in the eigen coordinates of the
diagonalized field at the chosen critical point.

Exit codes: 0 success, 1 verify failure, 2 spec error, 3 degenerate or
non-Morse critical point, 4 normalization obstructions, 5 more than 1% of
grid points failed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .checks import run_checks
from .flows import IntegrationError, conjugacy_phi, conjugacy_residual, flow_F, flow_G, residual_times
from .normal_form import normalize_to_order, obstruction_ledger
from .parser import SpecError, load_problem
from .pipeline import block_linear_field, prepare
from .serialize import change_to_json, field_to_json, rational_str
from .sobolev import (
    NonContractionError,
    WeightedNormParams,
    delta_min,
    fixed_point_batch,
    graded_grid,
    lemma_integration_constant,
)
from .spectrum import SpectrumError, find_critical_points

EXIT_OK, EXIT_VERIFY, EXIT_SPEC, EXIT_DEGENERATE, EXIT_OBSTRUCTED, EXIT_POINTS = 0, 1, 2, 3, 4, 5
TRAJ_ALL_BELOW = 50
TRAJ_SAMPLE = 5


def _num(c):
    """JSON-friendly coefficient: a rational string in exact mode, else a float."""
    from .jets import is_exact

    return rational_str(c) if is_exact(c) else float(c)


def _witnesses_json(report):
    return [{"exponent": list(w.a), "component": w.i + 1} for w in report.witnesses]


def _spectrum_json(prep):
    sp = prep.spectrum
    return {
        "point": [_num(c) for c in prep.point],
        "eigenvalues": [float(l) for l in sp.eigenvalues],
        "exact_eigenvalues": None if sp.exact_eigenvalues is None else [rational_str(l) for l in sp.exact_eigenvalues],
        "morse_index": sp.morse_index,
        "unstable_dimension": sp.unstable_dim,
        "mode": "exact" if prep.exact else "float",
    }


def _resonance_json(report):
    return {"scanned_order": report.scanned_order, "satisfied": report.satisfied,
            "witnesses": _witnesses_json(report), "mode": report.mode}


def parse_grid(text, n, radius):
    """``"lo:hi:steps"`` for every axis, or one such triple per axis separated by commas."""
    if text is None:
        steps = {1: 41, 2: 11, 3: 5}.get(n, 3)
        parts = [(-radius / 2, radius / 2, steps)] * n
    else:
        raw = [p.strip() for p in text.split(",") if p.strip()]
        if len(raw) == 1:
            raw = raw * n
        if len(raw) != n:
            raise SpecError(f"grid has {len(raw)} axes, the problem has {n}")
        parts = []
        for p in raw:
            bits = p.split(":")
            if len(bits) != 3:
                raise SpecError(f"bad grid axis '{p}', expected lo:hi:steps")
            try:
                lo, hi, steps = float(bits[0]), float(bits[1]), int(bits[2])
            except ValueError as exc:
                raise SpecError(f"bad grid axis '{p}': {exc}") from None
            if steps < 1 or not hi >= lo:
                raise SpecError(f"bad grid axis '{p}'")
            parts.append((lo, hi, steps))
    axes = [np.linspace(lo, hi, s) if s > 1 else np.array([lo]) for lo, hi, s in parts]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, n)
    return X


def _workers():
    try:
        cap = int(os.environ.get("MORSENORM_THREADS", "0"))
    except ValueError:
        cap = 0
    cpu = os.cpu_count() or 1
    return max(1, min(cap, cpu) if cap > 0 else cpu)


def _chunked(fn, X, workers):
    """Apply ``fn`` to row chunks of ``X`` in a thread pool; results are concatenated in order."""
    if len(X) == 0:
        return []
    size = max(1, -(-len(X) // (4 * workers)))
    chunks = [X[i:i + size] for i in range(0, len(X), size)]
    if workers == 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, chunks))


def _exit_chunk(G, lams, tol):
    def run(X):
        n = X.shape[1]
        try:
            phi = conjugacy_phi(G, lams, X, tol=tol)
            res = conjugacy_residual(G, lams, X, tol=tol, phi=phi)
            return phi, res, np.ones(len(X), bool)
        except (IntegrationError, ValueError, OverflowError):
            if len(X) == 1:
                return np.full((1, n), np.nan), np.full(1, np.nan), np.zeros(1, bool)
            parts = [run(X[i:i + 1]) for i in range(len(X))]
            return tuple(np.concatenate(z) for z in zip(*parts))
    return run


def _fp_phi(G, lams, X, params, t):
    """Fixed-point ``Phi`` for rows of ``X``; rows that fail come back as NaN."""
    try:
        U, phi, ratios, conv = fixed_point_batch(G, lams, X, params, t)
        return U, phi, ratios, conv
    except (NonContractionError, FloatingPointError, OverflowError):
        if len(X) == 1:
            n = X.shape[1]
            return (np.full((1, len(t), n), np.nan), np.full((1, n), np.nan),
                    np.full((1, 1), np.nan), np.zeros(1, bool))
        parts = [_fp_phi(G, lams, X[i:i + 1], params, t) for i in range(len(X))]
        width = max(p[2].shape[1] for p in parts)
        ratios = np.full((len(X), width), np.nan)
        for r, p in enumerate(parts):
            ratios[r, : p[2].shape[1]] = p[2][0]
        return (np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]),
                ratios, np.concatenate([p[3] for p in parts]))


def _fp_chunk(G, lams, params, t, tol):
    s_values = residual_times(lams)

    def run(X):
        U, phi, ratios, conv = _fp_phi(G, lams, X, params, t)
        worst = np.zeros(len(X))
        for s in s_values:
            lhs = flow_G(G, np.nan_to_num(phi), s, tol=tol)
            _, rhs, _, c2 = _fp_phi(G, lams, flow_F(lams, X, s), params, t)
            conv = conv & c2
            worst = np.maximum(worst, np.linalg.norm(lhs - rhs, axis=1))
        ok = conv & np.all(np.isfinite(phi), axis=1)
        worst[~ok] = np.nan
        rho = np.array([np.nanmax(r) if np.any(np.isfinite(r)) else 0.0 for r in ratios])
        return phi, worst, ok, rho, U
    return run


def _stats(v):
    v = np.asarray(v, dtype=float)
    v = v[np.isfinite(v)]
    if not len(v):
        return {"max": None, "mean": None}
    return {"max": float(v.max()), "mean": float(v.mean())}


class Run:
    """Shared state of one CLI invocation."""

    def __init__(self, args):
        self.args = args
        self.out = Path(args.out)
        self.timings = {}
        self.t0 = time.perf_counter()
        data = Path(args.spec).read_bytes()
        self.input_hash = hashlib.sha256(data).hexdigest()
        spec = load_problem(args.spec)
        if args.order is not None:
            spec = spec.replace(order=args.order)
        self.spec = spec
        self.report = {
            "version": __version__,
            "command": args.command,
            "input_hash": self.input_hash,
            "seed": args.seed,
            "spec": spec.to_dict(),
        }

    def tick(self, name, start):
        self.timings[name] = time.perf_counter() - start

    def prepare(self):
        t = time.perf_counter()
        self.prep = prepare(self.spec)
        self.tick("prepare", t)
        self.report["spectrum"] = _spectrum_json(self.prep)
        self.report["resonance"] = _resonance_json(self.prep.resonance)
        return self.prep

    def write(self):
        self.out.mkdir(parents=True, exist_ok=True)
        with open(self.out / "report.json", "w") as fh:
            json.dump(self.report, fh, indent=2, sort_keys=True)
            fh.write("\n")
        self.timings["total"] = time.perf_counter() - self.t0
        with open(self.out / "timings.json", "w") as fh:
            json.dump(self.timings, fh, indent=2, sort_keys=True)
            fh.write("\n")


def cmd_analyze(run):
    spec = run.spec
    if spec.mode == "function":
        t = time.perf_counter()
        search = find_critical_points(spec, return_report=True)
        run.tick("critical_points", t)
        run.report["critical_points"] = {
            "nondegenerate": [[float(c) for c in p] for p in search.points],
            "degenerate": [[float(c) for c in p] for p in search.degenerate],
            "unconverged_seeds": len(search.unconverged),
        }
    prep = run.prepare()
    sp = prep.spectrum
    print(f"critical point {list(map(float, prep.point))}")
    print(f"eigenvalues {[float(l) for l in sp.eigenvalues]}  index {sp.morse_index}")
    res = prep.resonance
    if res.satisfied:
        print(f"no resonance through order {res.scanned_order}")
    else:
        print(f"resonances through order {res.scanned_order}: " + ", ".join(str(w) for w in res.witnesses))
    return EXIT_OK


def cmd_normalize(run):
    prep = run.prepare()
    L = run.spec.order
    t = time.perf_counter()
    Psi, W, steps = normalize_to_order(prep.field, prep.lams, L, run.spec.float_zero)
    run.tick("normalize", t)
    ledger = obstruction_ledger(steps)
    residual = W.residual_terms(2)
    total = prep.diagonalizer @ Psi
    run.report["normalization"] = {
        "order": L,
        "ledger": [{"exponent": list(a), "component": i + 1, "order": sum(a), "coefficient": _num(c)}
                   for a, i, c in ledger],
        "steps": [{"order": s.order, "removed": len(s.removed_terms), "obstructions": len(s.obstructions)}
                  for s in steps],
        "residual": (f"V0 through order {L}" if not residual else
                     [{"exponent": list(a), "component": i + 1, "coefficient": _num(c)} for a, i, c in residual]),
    }
    run.out.mkdir(parents=True, exist_ok=True)
    change = {"point": [_num(c) for c in prep.point], "change": change_to_json(total),
              "normalizing_change": change_to_json(Psi), "normalized_field": field_to_json(W)}
    with open(run.out / "change.json", "w") as fh:
        json.dump(change, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if ledger:
        print(f"{len(ledger)} obstruction(s):", ", ".join(f"x^{a} d{i + 1}" for a, i, _ in ledger))
        return EXIT_OBSTRUCTED
    print(f"normalized to V0 through order {L}")
    return EXIT_OK


def _write_map(path, X, columns):
    n = X.shape[1]
    header = [f"x{i + 1}" for i in range(n)]
    for name, arr in columns:
        arr = np.asarray(arr)
        header += [f"{name}{i + 1}" for i in range(arr.shape[1])] if arr.ndim == 2 else [name]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in range(len(X)):
            row = [repr(float(v)) for v in X[r]]
            for _, arr in columns:
                arr = np.asarray(arr)
                vals = arr[r] if arr.ndim == 2 else [arr[r]]
                row += [repr(float(v)) if not isinstance(v, (bool, np.bool_)) else str(int(v)) for v in vals]
            w.writerow(row)


def _write_trajectories(out, t, U, n):
    m = len(U)
    idx = range(m) if m <= TRAJ_ALL_BELOW else np.unique(np.linspace(0, m - 1, TRAJ_SAMPLE).round().astype(int))
    for k in idx:
        with open(out / f"traj_{k}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"u{i + 1}" for i in range(n)])
            for j in range(len(t)):
                w.writerow([repr(float(t[j]))] + [repr(float(v)) for v in U[k, j]])


def cmd_conjugate(run, method=None):
    args = run.args
    method = method or args.method
    prep = run.prepare()
    spec = run.spec
    n = spec.n
    got = block_linear_field(prep)
    flat = got is not None
    if flat:
        field, chart, how = got
    else:
        field, how = prep.field, "as given"
        print("warning: the field is not linear on the unstable block and no chart makes it so; "
              "the exit-time map is not a conjugacy there", file=sys.stderr)
    G = prep.truncated_field(field)
    lams = prep.float_lams
    X = parse_grid(args.grid, n, spec.bump_inner)
    if np.any(np.linalg.norm(X, axis=1) > spec.bump_inner + 1e-12):
        raise SpecError(f"grid leaves the inner bump radius {spec.bump_inner}")
    workers = _workers()
    flow = {"method": method, "grid_points": len(X), "unstable_block_linear": flat, "field": how}
    if flat and how != "as given":
        run.out.mkdir(parents=True, exist_ok=True)
        with open(run.out / "chart.json", "w") as fh:
            json.dump({"change": change_to_json(prep.diagonalizer @ chart), "field": field_to_json(field)},
                      fh, indent=2, sort_keys=True)
            fh.write("\n")
    columns = []
    failed = np.zeros(len(X), bool)
    phi_exit = None
    if method in ("exit", "both"):
        t = time.perf_counter()
        parts = _chunked(_exit_chunk(G, lams, spec.ode_tol * 0.1), X, workers)
        phi_exit, res_exit, ok = (np.concatenate(z) for z in zip(*parts))
        run.tick("conjugate_exit", t)
        failed |= ~ok
        flow["exit"] = {"residual": _stats(res_exit), "failed": int((~ok).sum())}
        columns += [("phi_exit_", phi_exit), ("residual_exit", res_exit)]
    if method in ("fixedpoint", "both"):
        t = time.perf_counter()
        dmin = delta_min(G, args.p)
        delta = args.delta if args.delta is not None else dmin
        T_max = args.tmax if args.tmax is not None else 12.0 / float(np.min(np.abs(lams)))
        params = WeightedNormParams(args.p, args.k, delta)
        tn = graded_grid(T_max)
        parts = _chunked(_fp_chunk(G, lams, params, tn, spec.ode_tol * 0.1), X, workers)
        phi_fp, res_fp, ok, rho, U = (np.concatenate(z) for z in zip(*parts))
        run.tick("conjugate_fixedpoint", t)
        failed |= ~ok
        flow["fixedpoint"] = {
            "residual": _stats(res_fp), "failed": int((~ok).sum()),
            "delta": float(delta), "delta_min": float(dmin), "p": float(args.p), "k": int(args.k),
            "t_max": float(T_max), "C0": lemma_integration_constant(args.p),
            "contraction_ratio": _stats(rho),
        }
        columns += [("phi_fp_", phi_fp), ("residual_fp", res_fp), ("rho", rho)]
        run.out.mkdir(parents=True, exist_ok=True)
        _write_trajectories(run.out, tn, U, n)
        if phi_exit is not None:
            dev = np.linalg.norm(phi_fp - phi_exit, axis=1, ord=np.inf)
            flow["cross_method_max_deviation"] = _stats(dev)["max"]
    flow["failed_points"] = int(failed.sum())
    columns.append(("ok", ~failed))
    run.report["flow"] = flow
    run.out.mkdir(parents=True, exist_ok=True)
    _write_map(run.out / "phi_map.csv", X, columns)
    for key in ("exit", "fixedpoint"):
        if key in flow:
            r = flow[key]["residual"]["max"]
            print(f"{key}: max conjugacy residual {r if r is None else f'{r:.3e}'}, {flow[key]['failed']} failed")
    if "cross_method_max_deviation" in flow:
        print(f"max |Phi_fp - Phi_exit| = {flow['cross_method_max_deviation']:.3e}")
    if failed.sum() > 0.01 * len(X):
        return EXIT_POINTS
    return EXIT_OK


def cmd_fixedpoint(run):
    return cmd_conjugate(run, method="fixedpoint")


def cmd_verify(run):
    prep = run.prepare()
    t = time.perf_counter()
    results = run_checks(prep, run.args.seed)
    run.tick("verify", t)
    run.report["checks"] = [{"name": r.name, "status": r.status, "detail": r.detail} for r in results]
    for r in results:
        print(f"{r.status:8s} {r.name}" + (f"  ({r.detail})" if r.detail else ""))
    failing = [r.name for r in results if r.status == "FAIL"]
    if failing:
        print("failing invariants: " + ", ".join(failing), file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


COMMANDS = {
    "analyze": cmd_analyze,
    "normalize": cmd_normalize,
    "conjugate": cmd_conjugate,
    "fixedpoint": cmd_fixedpoint,
    "verify": cmd_verify,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="morsenorm", description="Normal forms and conjugacies of Morse gradient flows.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("spec", help="problem spec (JSON)")
    ap.add_argument("--order", type=int, default=None, help="jet order (overrides the spec)")
    ap.add_argument("--grid", default=None, help='"lo:hi:steps" or one triple per axis, comma separated')
    ap.add_argument("--method", choices=("exit", "fixedpoint", "both"), default="exit")
    ap.add_argument("--delta", type=float, default=None, help="weight rate (default: delta_min)")
    ap.add_argument("--p", type=float, default=2.0)
    ap.add_argument("--k", type=int, default=0)
    ap.add_argument("--tmax", type=float, default=None, help="time horizon (default 12/min|lambda|)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=".", help="output directory")
    return ap


def _join_grid(argv):
    """Let ``--grid -1:1:5`` through argparse, which would read the value as an option."""
    out, it = [], iter(argv)
    for a in it:
        if a == "--grid":
            nxt = next(it, None)
            out.append(a if nxt is None else f"--grid={nxt}")
        else:
            out.append(a)
    return out


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(_join_grid(argv))
    try:
        run = Run(args)
        code = COMMANDS[args.command](run)
    except (SpecError, FileNotFoundError, IsADirectoryError, json.JSONDecodeError) as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except SpectrumError as exc:
        print(f"critical point error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    run.write()
    return code


if __name__ == "__main__":
    sys.exit(main())
