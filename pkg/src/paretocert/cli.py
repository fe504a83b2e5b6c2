"""Command-line entry point emitting JSON certificates.

Exit codes: 0 = checks passed, 2 = a check failed and the certificate says
why, 1 = usage or input error.  Certificates go to stdout (or --out) and are
byte-deterministic for fixed inputs and --seed, apart from the wall_time_s
field.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from . import certificate as cert
from .findim import (
    FinDimFormatError,
    InfeasiblePointError,
    NotCriticalError,
    load_findim_problem,
    multiplier_set_sample,
    robinson_check,
    second_order_necessary_check,
    weak_pareto_oracle,
)
from .kkt import KktWorkspace, MultiplierTriple, Tolerances
from .problem import (
    ProblemFormatError,
    UnknownBuiltinError,
    builtin,
    load_problem,
    serialize,
    validate_h2,
)
from .second_order import (
    SecondOrderWorkspace,
    random_critical_directions,
    socn_verdict,
    socs_verdict,
)
from .trajectory import (
    Direction,
    Grid,
    Trajectory,
    integrate_state,
    state_residual,
)


class _UsageError(Exception):
    pass


class _InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _parse_floats(text: str, label: str) -> np.ndarray:
    try:
        values = np.array([float(v) for v in text.split(",")], dtype=float)
    except ValueError:
        raise _UsageError(f"{label} must be a comma-separated list of numbers")
    if values.size == 0:
        raise _UsageError(f"{label} must not be empty")
    return values


def _load_problem_arg(spec: str):
    if spec.startswith("builtin:"):
        try:
            return builtin(spec.split(":", 1)[1])
        except UnknownBuiltinError as err:
            raise _InputError(str(err))
    try:
        with open(spec, "r", encoding="utf-8") as fh:
            return load_problem(fh.read())
    except OSError as err:
        raise _InputError(f"cannot read problem file: {err}")
    except ProblemFormatError as err:
        raise _InputError(f"{spec}: {err}")


def _load_trajectory(args, problem) -> Trajectory:
    if args.traj is None:
        grid = Grid(args.grid)
        u = np.zeros((args.grid + 1, problem.l))
        return integrate_state(problem, u, grid)
    try:
        with open(args.traj, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        return Trajectory.from_dict(data)
    except OSError as err:
        raise _InputError(f"cannot read trajectory file: {err}")
    except (KeyError, ValueError) as err:
        raise _InputError(f"{args.traj}: invalid trajectory document ({err})")


def _load_directions(path: str) -> list[Direction]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as err:
        raise _InputError(f"cannot read directions file: {err}")
    except json.JSONDecodeError as err:
        raise _InputError(f"{path}: invalid JSON ({err})")
    entries = data if isinstance(data, list) else [data]
    try:
        return [Direction.from_dict(entry) for entry in entries]
    except (KeyError, ValueError) as err:
        raise _InputError(f"{path}: invalid direction document ({err})")


def _lambda_arg(args, m: int) -> np.ndarray:
    if args.lam is None:
        raise _UsageError("--lambda is required for this command")
    lam = _parse_floats(args.lam, "--lambda")
    if len(lam) != m:
        raise _UsageError(f"--lambda needs {m} entries for this problem")
    if np.any(lam < 0) or not np.any(lam > 0):
        raise _UsageError("--lambda entries must be nonnegative and not all zero")
    return lam


def _emit(args, payload: str) -> None:
    if args.out is None:
        sys.stdout.write(payload)
    else:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(payload)


def _gate_fragments(problem, traj, tols, eps_act) -> dict:
    res = state_residual(problem, traj)
    # fixed wellposedness gate for theta recovery, independent of eps_act
    h2 = validate_h2(problem, traj, alpha=1e-8)
    ws = SecondOrderWorkspace(problem, traj)
    g_max = float(np.max(ws.fields.g))
    feasibility = {
        "state_residual": res,
        "constraint_residual": max(0.0, g_max),
        "passed": bool(res <= tols.state and g_max <= tols.feasibility),
    }
    return {"feasibility": feasibility, "h2": h2.to_dict()}, ws


def _finish(args, command, problem, fragments, grid_n, tols, parameters, started):
    certificate = cert.assemble(
        command=command,
        fragments=fragments,
        problem_name=problem.name,
        problem_digest=cert.problem_hash(problem),
        grid_n=grid_n,
        tolerances=tols.to_dict(),
        seed=args.seed,
        parameters=parameters,
        wall_time_s=time.perf_counter() - started,
    )
    _emit(args, cert.dumps(certificate))
    verdict = certificate["overall_verdict"]
    return 0 if verdict in ("kkt-pass", "socn-pass", "socs-pass", "findim-pass") else 2


# ---------------------------------------------------------------------------
# Command handlers


def _cmd_check_kkt(args) -> int:
    started = time.perf_counter()
    problem = _load_problem_arg(args.problem)
    lam = _lambda_arg(args, problem.m)
    traj = _load_trajectory(args, problem)
    tols = Tolerances.uniform(args.tol)
    fragments, ws = _gate_fragments(problem, traj, tols, args.eps_act)
    kws = KktWorkspace(problem, traj, fields=ws.fields)
    _, _, report = kws.solve(lam, tols)
    fragments["kkt"] = report.to_dict()
    params = {"lambda": [float(v) for v in lam]}
    return _finish(args, "check-kkt", problem, fragments,
                   traj.grid.n_intervals, tols, params, started)


def _cmd_check_socn(args) -> int:
    started = time.perf_counter()
    problem = _load_problem_arg(args.problem)
    traj = _load_trajectory(args, problem)
    tols = Tolerances.uniform(args.tol)
    fragments, ws = _gate_fragments(problem, traj, tols, args.eps_act)
    params = {"lambda_grid": args.lambda_grid}
    if fragments["feasibility"]["passed"] and fragments["h2"]["passed"]:
        if args.directions is not None:
            directions = _load_directions(args.directions)
            params["directions_path"] = args.directions
        else:
            directions = random_critical_directions(
                problem, traj, args.probes, seed=args.seed,
                eps_act=args.eps_act, tol=args.tol, workspace=ws)
            params["probes"] = args.probes
        frag = socn_verdict(
            problem, traj, directions,
            lambda_points=args.lambda_grid, tol=args.tol, eps_act=args.eps_act,
            tolerances=tols, workspace=ws)
        fragments["socn"] = frag.to_dict()
    else:
        fragments["socn"] = {"verdict": "gated", "tested": 0, "skipped": [],
                             "results": [], "weight_grid": [], "tol": args.tol,
                             "note": "gates failed; sweep not run"}
    return _finish(args, "check-socn", problem, fragments,
                   traj.grid.n_intervals, tols, params, started)


def _cmd_check_socs(args) -> int:
    started = time.perf_counter()
    problem = _load_problem_arg(args.problem)
    lam = _lambda_arg(args, problem.m)
    if args.gamma0 is None or args.gamma0 <= 0:
        raise _UsageError("--gamma0 must be a positive number")
    traj = _load_trajectory(args, problem)
    tols = Tolerances.uniform(args.tol)
    fragments, ws = _gate_fragments(problem, traj, tols, args.eps_act)
    params = {"lambda": [float(v) for v in lam], "gamma0": args.gamma0,
              "probes": args.probes}
    if fragments["feasibility"]["passed"] and fragments["h2"]["passed"]:
        kws = KktWorkspace(problem, traj, fields=ws.fields)
        p, theta, _ = kws.solve(lam, tols)
        triple = MultiplierTriple(lam, p, theta)
        frag = socs_verdict(
            problem, traj, triple, gamma0=args.gamma0, n_probes=args.probes,
            max_iters=args.max_iters, tol=args.tol, eps_act=args.eps_act,
            tolerances=tols, seed=args.seed, workspace=ws)
        fragments["socs"] = frag.to_dict()
    else:
        fragments["socs"] = {"verdict": "gated", "failed_stage": "gates",
                             "kkt": None, "coercivity": None, "search": None,
                             "caveat": "", "tol": args.tol}
    return _finish(args, "check-socs", problem, fragments,
                   traj.grid.n_intervals, tols, params, started)


def _cmd_findim(args) -> int:
    started = time.perf_counter()
    try:
        with open(args.problem, "r", encoding="utf-8") as fh:
            problem = load_findim_problem(fh.read())
    except OSError as err:
        raise _InputError(f"cannot read problem file: {err}")
    except FinDimFormatError as err:
        raise _InputError(f"{args.problem}: {err}")
    if args.zbar is None:
        raise _UsageError("--zbar is required")
    zbar = _parse_floats(args.zbar, "--zbar")
    if len(zbar) != problem.nz:
        raise _UsageError(f"--zbar needs {problem.nz} entries")
    directions = [_parse_floats(d, "--dir") for d in (args.dir or [])]
    for d in directions:
        if len(d) != problem.nz:
            raise _UsageError(f"--dir needs {problem.nz} entries")

    fragments = {}
    try:
        robinson = robinson_check(problem, zbar)
    except InfeasiblePointError as err:
        raise _InputError(str(err))
    fragments["robinson"] = robinson.to_dict()
    pairs = []
    dir_entries = []
    oracle_value = None
    if robinson.passed:
        pairs = multiplier_set_sample(problem, zbar, n_lambda=args.lambda_grid,
                                      resid_tol=args.tol)
        any_failure = False
        for i, d in enumerate(directions):
            entry = {"index": i, "direction": [float(v) for v in d]}
            try:
                curvature, verdict = second_order_necessary_check(
                    problem, zbar, d, pairs, tol=args.tol)
            except NotCriticalError as err:
                entry["critical"] = False
                entry["note"] = str(err)
            else:
                entry["critical"] = True
                entry["max_curvature"] = curvature
                entry["verdict"] = bool(verdict)
                any_failure = any_failure or not verdict
            dir_entries.append(entry)
        oracle_value = weak_pareto_oracle(problem, zbar, radius=args.radius,
                                          steps=args.steps)
        fragments["oracle"] = {"weak_pareto": bool(oracle_value),
                               "radius": args.radius, "steps": args.steps}
        # contrapositive audit: an exhaustive-sample necessary failure at a
        # regular point must coincide with a negative oracle
        fragments["consistency"] = {
            "necessary_failed": any_failure,
            "agrees_with_oracle": bool((not any_failure) or (not oracle_value)),
        }
    else:
        fragments["oracle"] = {"weak_pareto": False, "radius": args.radius,
                               "steps": args.steps, "note": "skipped: gates failed"}
        fragments["consistency"] = {"necessary_failed": None,
                                    "agrees_with_oracle": None}
    fragments["multipliers"] = {"count": len(pairs),
                                "pairs": [p.to_dict() for p in pairs]}
    fragments["directions"] = dir_entries

    certificate = cert.assemble(
        command="findim",
        fragments=fragments,
        problem_name=None,
        problem_digest="",
        grid_n=0,
        tolerances={"tol": args.tol},
        seed=args.seed,
        parameters={"zbar": [float(v) for v in zbar], "radius": args.radius,
                    "steps": args.steps, "lambda_grid": args.lambda_grid},
        wall_time_s=time.perf_counter() - started,
    )
    _emit(args, cert.dumps(certificate))
    return 0 if certificate["overall_verdict"] == "findim-pass" else 2


def _cmd_integrate(args) -> int:
    problem = _load_problem_arg(args.problem)
    grid = Grid(args.grid)
    if args.control is not None:
        try:
            with open(args.control, "r", encoding="utf-8") as fh:
                data = json.load(fh)
            u = np.asarray(data["u"], dtype=float)
        except OSError as err:
            raise _InputError(f"cannot read control file: {err}")
        except (KeyError, ValueError) as err:
            raise _InputError(f"{args.control}: invalid control document ({err})")
        if "grid_n" in data:
            grid = Grid(int(data["grid_n"]))
    else:
        u = np.zeros((grid.n_intervals + 1, problem.l))
    traj = integrate_state(problem, u, grid)
    payload = {
        **traj.to_dict(),
        "state_residual": state_residual(problem, traj),
    }
    _emit(args, json.dumps(cert.jsonable(payload), sort_keys=True, indent=2) + "\n")
    return 0


def _cmd_show_builtin(args) -> int:
    try:
        problem = builtin(args.name)
    except UnknownBuiltinError as err:
        raise _InputError(str(err))
    _emit(args, json.dumps(serialize(problem), sort_keys=True, indent=2) + "\n")
    return 0


# ---------------------------------------------------------------------------
# Parser assembly


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="paretocert",
        description="optimality certificates for multi-objective optimal "
                    "control problems with a mixed pointwise constraint",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, needs_lambda=False):
        p.add_argument("problem", help="problem file path or builtin:<name>")
        p.add_argument("--traj", help="trajectory JSON (default: zero control)")
        p.add_argument("--grid", type=int, default=1000,
                       help="grid intervals when no trajectory file is given")
        p.add_argument("--tol", type=float, default=1e-8, help="residual tolerance")
        p.add_argument("--eps-act", type=float, default=1e-8, dest="eps_act",
                       help="constraint activity threshold")
        p.add_argument("--seed", type=int, default=42)
        p.add_argument("--out", help="certificate output path (default stdout)")
        if needs_lambda:
            p.add_argument("--lambda", dest="lam",
                           help="comma-separated objective weights")

    p = sub.add_parser("check-kkt", help="first-order (KKT) residual check")
    common(p, needs_lambda=True)
    p.set_defaults(handler=_cmd_check_kkt)

    p = sub.add_parser("check-socn", help="second-order necessary condition sweep")
    common(p)
    p.add_argument("--directions", help="direction file (JSON object or list)")
    p.add_argument("--probes", type=int, default=50,
                   help="random critical probes when no direction file is given")
    p.add_argument("--lambda-grid", type=int, default=21, dest="lambda_grid",
                   help="points on the weight simplex")
    p.set_defaults(handler=_cmd_check_socn)

    p = sub.add_parser("check-socs", help="second-order sufficient condition check")
    common(p, needs_lambda=True)
    p.add_argument("--gamma0", type=float, help="control-coercivity threshold")
    p.add_argument("--probes", type=int, default=50, help="worst-direction restarts")
    p.add_argument("--max-iters", type=int, default=100, dest="max_iters",
                   help="descent iterations per restart")
    p.set_defaults(handler=_cmd_check_socs)

    p = sub.add_parser("findim", help="finite-dimensional vector-program analyzer")
    p.add_argument("problem", help="finite-dimensional problem JSON file")
    p.add_argument("--zbar", help="comma-separated candidate point")
    p.add_argument("--dir", action="append", help="critical direction (repeatable)")
    p.add_argument("--radius", type=float, default=0.25, help="oracle ball radius")
    p.add_argument("--steps", type=int, default=12, help="oracle grid steps per side")
    p.add_argument("--lambda-grid", type=int, default=21, dest="lambda_grid")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out")
    p.set_defaults(handler=_cmd_findim)

    p = sub.add_parser("integrate", help="integrate the state equation")
    p.add_argument("problem")
    p.add_argument("--control", help="control JSON file with a 'u' array")
    p.add_argument("--grid", type=int, default=1000)
    p.add_argument("--out")
    p.set_defaults(handler=_cmd_integrate)

    p = sub.add_parser("show-builtin", help="print a registry problem document")
    p.add_argument("name")
    p.add_argument("--out")
    p.set_defaults(handler=_cmd_show_builtin)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except SystemExit as err:  # --help
        return int(err.code or 0)
    try:
        return args.handler(args)
    except _UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (_InputError, OSError, ValueError) as err:
        # ValueError covers the library's typed input failures
        # (IntegrationError, GridMismatchError, dimension guards, ...)
        print(f"error: {err}", file=sys.stderr)
        return 1


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
