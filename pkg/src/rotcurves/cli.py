"""Command-line front end.

Subcommands:

- ``interp``: evaluate an interpolating rotation curve (built-in analytic
  fixture or explicit nodal data) and stream samples as CSV.
- ``minaccel``: solve a minimum-acceleration problem and stream the solution
  curve as CSV, optionally with the solver trace as JSON.
- ``converge``: dyadic refinement study against a fine reference solve,
  emitted as a CSV table.
- ``fixtures list``: print the available built-in fixtures.

Problem descriptions are single JSON documents; all floating-point output is
printed with 17 significant digits so runs are reproducible bit for bit.
Exit codes: 0 success, 2 invalid specification, 3 solver non-convergence,
4 numerical domain failure (projection or blend left its domain).
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import fixtures as fx
from . import minaccel as ma
from .errors import (
    AssemblyError,
    DegenerateAxisError,
    IllConditionedLogError,
    ProblemValidationError,
    ProjectionDomainError,
    SingularityError,
    SolverDivergedError,
    ZeroBlendError,
    ZeroQuaternionError,
)
from .interp_matrix import HermiteRotationCurve, LagrangeRotationCurve, Partition
from .interp_quat import HermiteQuatCurve, LagrangeQuatCurve
from .liegroup import quat_act, vee

EXIT_OK = 0
EXIT_SPEC = 2
EXIT_SOLVER = 3
EXIT_NUMERIC = 4

_DOMAIN_ERRORS = (
    ProjectionDomainError,
    ZeroBlendError,
    ZeroQuaternionError,
    AssemblyError,
    IllConditionedLogError,
    SingularityError,
    DegenerateAxisError,
)


def _fmt(x):
    return f"{x:.17g}"


def _require(cond, msg):
    if not cond:
        raise ProblemValidationError(msg)


def _load_spec(path):
    try:
        with open(path) as fh:
            spec = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ProblemValidationError(f"cannot read spec {path}: {exc}") from exc
    _require(isinstance(spec, dict), "spec must be a JSON object")
    return spec


def _sample_times(partition, per_element):
    knots = partition.knots
    ts = []
    for k in range(partition.n_elements):
        h = knots[k + 1] - knots[k]
        for i in range(per_element):
            ts.append(knots[k] + h * i / per_element)
    ts.append(knots[-1])
    return np.array(ts)


def _matrix_rows(ts, samples, trace_v0=None):
    header = "t,r11,r12,r13,r21,r22,r23,r31,r32,r33,wx,wy,wz,ax,ay,az"
    if trace_v0 is not None:
        header += ",px,py,pz"
    lines = [header]
    w = vee(samples.omega)
    a = vee(samples.omega_dot)
    for i, t in enumerate(ts):
        cells = [t, *samples.r[i].ravel(), *w[i], *a[i]]
        if trace_v0 is not None:
            cells.extend(samples.r[i] @ trace_v0)
        lines.append(",".join(_fmt(c) for c in cells))
    return "\n".join(lines) + "\n"


def _quat_rows(ts, samples, trace_v0=None):
    header = "t,qw,qx,qy,qz,wx,wy,wz,ax,ay,az"
    if trace_v0 is not None:
        header += ",px,py,pz"
    lines = [header]
    for i, t in enumerate(ts):
        cells = [t, *samples.u[i], *samples.omega[i], *samples.omega_dot[i]]
        if trace_v0 is not None:
            cells.extend(quat_act(samples.u[i], trace_v0))
        lines.append(",".join(_fmt(c) for c in cells))
    return "\n".join(lines) + "\n"


def _write(text, path):
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _build_interp_curve(spec, method, seed):
    mode = spec.get("mode", "hermite")
    _require(mode in ("hermite", "lagrange"), f"unknown interpolation mode {mode!r}")
    n = int(spec.get("n", 8))
    horizon = float(spec.get("horizon", 1.0))
    _require(n >= 1 and horizon > 0, "need n >= 1 and a positive horizon")
    part = Partition.uniform(horizon, n)
    degree = int(spec.get("degree", 3 if mode == "lagrange" else 0) or 3)

    if "fixture" in spec:
        name = spec["fixture"]
        _require(name in fx.INTERP_FIXTURES, f"unknown interpolation fixture {name!r}")
        rot, rot_d, quat, quat_d = fx.interp_fixture(name, seed=seed)
        if mode == "hermite":
            if method == "matrix":
                return HermiteRotationCurve.from_function(rot, rot_d, part)
            return HermiteQuatCurve.from_function(quat, quat_d, part)
        if method == "matrix":
            return LagrangeRotationCurve.from_function(rot, part, degree)
        return LagrangeQuatCurve.from_function(quat, part, degree)

    if method == "matrix":
        _require("rotations" in spec, "explicit interp specs need 'rotations'")
        rot = np.array([np.reshape(r, (3, 3)) for r in spec["rotations"]], dtype=float)
        if mode == "hermite":
            _require("body_velocities" in spec, "hermite matrix specs need 'body_velocities'")
            from .liegroup import hat

            vel = hat(np.asarray(spec["body_velocities"], dtype=float))
            return HermiteRotationCurve(part, rot, vel)
        return LagrangeRotationCurve(part, degree, rot)
    _require("quaternions" in spec, "explicit quaternion interp specs need 'quaternions'")
    quats = np.asarray(spec["quaternions"], dtype=float)
    if mode == "hermite":
        _require("rates" in spec, "hermite quaternion specs need 'rates'")
        return HermiteQuatCurve(part, quats, np.asarray(spec["rates"], dtype=float))
    return LagrangeQuatCurve(part, degree, quats)


def _cmd_interp(args):
    spec = _load_spec(args.spec)
    method = args.method or spec.get("method", "matrix")
    _require(method in ("matrix", "quaternion"), f"unknown method {method!r}")
    if args.n is not None:
        spec["n"] = args.n
    seed = args.seed if args.seed is not None else int(spec.get("seed", 0))
    curve = _build_interp_curve(spec, method, seed)
    ts = _sample_times(curve.partition, args.samples_per_element)
    if method == "matrix":
        samples = (
            curve.eval_many(ts)
            if isinstance(curve, HermiteRotationCurve)
            else curve.eval_with_derivatives(ts)
        )
        _write(_matrix_rows(ts, samples), args.out)
    else:
        samples = (
            curve.eval_many(ts)
            if isinstance(curve, HermiteQuatCurve)
            else curve.eval_with_derivatives(ts)
        )
        _write(_quat_rows(ts, samples), args.out)
    return EXIT_OK


def _problem_from_spec(spec, method, n_override=None):
    if "fixture" in spec:
        name = spec["fixture"]
        _require(name in fx.MINACCEL_FIXTURES, f"unknown fixture {name!r}")
        factory = fx.MINACCEL_FIXTURES[name]
        default = factory()
        n = int(n_override or spec.get("n", default.n_elements))
        problem = factory(
            n=n, method=method, quad_points=int(spec.get("quadrature", 4))
        )
        max_iter = fx.MINACCEL_MAX_ITER[name]
        return problem, max_iter
    for key in ("horizon", "initial_direction", "targets"):
        _require(key in spec, f"explicit minaccel specs need {key!r}")
    targets = []
    for entry in spec["targets"]:
        _require(
            isinstance(entry, dict) and "time" in entry and "direction" in entry,
            "each target needs 'time' and 'direction'",
        )
        targets.append((float(entry["time"]), np.asarray(entry["direction"], dtype=float)))
    n = int(n_override or spec.get("n", 8))
    problem = MinAccelProblemSafe(
        horizon=float(spec["horizon"]),
        initial_direction=np.asarray(spec["initial_direction"], dtype=float),
        targets=tuple(targets),
        n_elements=n,
        method=method,
        periodic=bool(spec.get("periodic", False)),
        quad_points=int(spec.get("quadrature", 4)),
    )
    return problem, 2000


def MinAccelProblemSafe(**kwargs):
    return ma.MinAccelProblem(**kwargs)


def _lm_kwargs(spec, default_max_iter):
    lm = spec.get("lm", {})
    _require(isinstance(lm, dict), "'lm' must be an object")
    out = {"max_iter": int(lm.get("max_iter", default_max_iter))}
    for key in ("lambda0", "grad_tol", "stall_tol"):
        if key in lm:
            out[key] = float(lm[key])
    if "stall_window" in lm:
        out["stall_window"] = int(lm["stall_window"])
    return out


def _trace_json(result):
    return json.dumps(
        {
            "converged": result.converged,
            "iterations": result.iterations,
            "objective": result.objective,
            "gradient_inf": result.gradient_inf,
            "steps": [
                {
                    "iteration": s.iteration,
                    "objective": s.objective,
                    "lambda": s.lam,
                    "accepted": s.accepted,
                }
                for s in result.steps
            ],
        },
        indent=2,
        sort_keys=True,
    )


def _cmd_minaccel(args):
    spec = _load_spec(args.spec)
    method = args.method or spec.get("method", "quaternion")
    _require(method in ("matrix", "quaternion"), f"unknown method {method!r}")
    problem, default_iter = _problem_from_spec(spec, method, args.n)
    sol = ma.solve_min_accel(problem, **_lm_kwargs(spec, default_iter))
    ts = _sample_times(problem.partition, args.samples_per_element)
    trace_v0 = problem.initial_direction if args.sphere_trace else None
    samples = sol.curve.eval_many(ts)
    if method == "matrix":
        _write(_matrix_rows(ts, samples, trace_v0), args.out)
    else:
        _write(_quat_rows(ts, samples, trace_v0), args.out)
    if args.trace is not None:
        _write(_trace_json(sol.lm) + "\n", args.trace)
    return EXIT_OK


def _cmd_converge(args):
    spec = _load_spec(args.spec)
    method = args.method or spec.get("method", "quaternion")
    _require(method in ("matrix", "quaternion"), f"unknown method {method!r}")
    n_list = spec.get("n_list")
    _require(
        isinstance(n_list, list) and len(n_list) >= 2 and all(isinstance(v, int) for v in n_list),
        "converge specs need an integer list 'n_list'",
    )
    n_ref = int(spec.get("n_ref", 1024))

    def make(n):
        problem, _ = _problem_from_spec(spec, method, n)
        return problem

    _, default_iter = _problem_from_spec(spec, method, n_list[0])
    header = "n,l2_error,l2_order,h1_error,h1_order"
    lines = [header]
    try:
        rows, _ = ma.convergence_study(make, n_list, n_ref, **_lm_kwargs(spec, default_iter))
    except (SolverDivergedError, AssemblyError) as exc:
        lines.append("# incomplete")
        _write("\n".join(lines) + "\n", args.out)
        raise exc
    for r in rows:
        lines.append(
            ",".join(
                [
                    str(r.n),
                    _fmt(r.l2),
                    _fmt(r.l2_order) if r.l2_order is not None else "",
                    _fmt(r.h1),
                    _fmt(r.h1_order) if r.h1_order is not None else "",
                ]
            )
        )
    _write("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def _cmd_fixtures(args):
    _require(args.action == "list", f"unknown fixtures action {args.action!r}")
    lines = ["minimum-acceleration fixtures:"]
    for name in sorted(fx.MINACCEL_FIXTURES):
        prob = fx.MINACCEL_FIXTURES[name]()
        lines.append(
            f"  {name}: {prob.n_targets} targets, default n={prob.n_elements},"
            f" periodic={prob.periodic}"
        )
    lines.append("interpolation fixtures:")
    for name in fx.INTERP_FIXTURES:
        lines.append(f"  {name}")
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


def _parser():
    p = argparse.ArgumentParser(prog="rotcurves", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--spec", required=True, help="path to the JSON problem description")
    common.add_argument("--method", choices=("matrix", "quaternion"))
    common.add_argument("--n", type=int, help="override the element count")
    common.add_argument("--out", help="output CSV path (default: stdout)")
    common.add_argument("--seed", type=int, help="seed for synthetic fixtures")

    pi = sub.add_parser("interp", parents=[common], help="evaluate an interpolating curve")
    pi.add_argument("--samples-per-element", type=int, default=8)
    pi.set_defaults(fn=_cmd_interp)

    pm = sub.add_parser("minaccel", parents=[common], help="solve a minimum-acceleration problem")
    pm.add_argument("--samples-per-element", type=int, default=8)
    pm.add_argument("--trace", help="write the solver trace JSON here")
    pm.add_argument("--sphere-trace", action="store_true", help="append R(t) v0 columns")
    pm.set_defaults(fn=_cmd_minaccel)

    pc = sub.add_parser("converge", parents=[common], help="dyadic refinement study")
    pc.set_defaults(fn=_cmd_converge)

    pf = sub.add_parser("fixtures", help="inspect built-in fixtures")
    pf.add_argument("action", choices=("list",))
    pf.set_defaults(fn=_cmd_fixtures)
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        return args.fn(args)
    except ProblemValidationError as exc:
        print(f"error: invalid specification: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except SolverDivergedError as exc:
        print(f"error: solver did not converge: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except _DOMAIN_ERRORS as exc:
        print(f"error: numerical domain failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
