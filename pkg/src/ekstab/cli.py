"""Batch command-line front end for the reduction/stabilization pipeline.

Subcommands wire generate/ingest -> reduce -> sweep -> Riccati ->
stabilize -> simulate, emitting plot-ready CSV artifacts plus a JSON run
manifest (configuration echo, package version, iteration counts,
residuals, wall times).  Numeric artifacts are deterministic for a fixed
seed and configuration; flags win over the optional key-value config
file.
"""

import argparse
import json
import os
import sys
import time

import numpy as np
import scipy.io as sio

from . import __version__, oracle
from .arnoldi import FORWARD, ekba_basis
from .closedloop import (
    ClosedLoopSystem,
    constant_input,
    read_input_csv,
    reduce_closed_loop,
    simulate_dae,
    simulate_reduced,
    step_input,
    write_trajectory_csv,
    zero_input,
)
from .errors import EkstabError, ParseError, ValidationError
from .reduction import (
    GENERALIZED,
    STATE_SPACE,
    build_reduced,
    frequency_sweep,
    write_sweep_csv,
)
from .riccati import FeedbackGain, ebara_solve, feedback_gain, write_residual_csv
from .sysmodel import (
    GridSpec,
    SyntheticSpec,
    Unstable,
    generate_synthetic,
    load_bundle,
    write_system,
)


def _read_config(path):
    values = {}
    try:
        with open(path) as f:
            for line in f:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ParseError(f"malformed config line: {line!r}")
                key, value = line.split("=", 1)
                values[key.strip().replace("-", "_")] = value.strip()
    except OSError as exc:
        raise ParseError(f"cannot read config {path}: {exc}") from exc
    return values


def _apply_config(args, parser_defaults):
    """Fill argparse namespace from the config file where flags kept defaults."""
    if not getattr(args, "config", None):
        return args
    values = _read_config(args.config)
    for key, raw in values.items():
        if not hasattr(args, key):
            continue
        if getattr(args, key) != parser_defaults.get(key):
            continue  # an explicit flag wins
        default = parser_defaults.get(key)
        if isinstance(default, bool):
            parsed = raw.lower() in ("1", "true", "yes")
        elif isinstance(default, int):
            parsed = int(raw)
        elif isinstance(default, float):
            parsed = float(raw)
        else:
            parsed = raw
        setattr(args, key, parsed)
    return args


def _write_manifest(out_dir, command, args, extra):
    payload = {
        "command": command,
        "version": __version__,
        "config": {
            k: v for k, v in sorted(vars(args).items()) if k not in ("func",)
        },
    }
    payload.update(extra)
    path = os.path.join(out_dir, "run_manifest.json")
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, default=str)
        f.write("\n")
    return path


def _load(args):
    _check_knobs(args)
    return load_bundle(args.bundle)


def _check_knobs(args):
    """Reject out-of-range numeric knobs before touching any files."""
    checks = (
        ("tol", lambda v: v > 0.0, "tol must be positive"),
        ("dtol", lambda v: v > 0.0, "dtol must be positive"),
        ("mmax", lambda v: v >= 1, "mmax must be >= 1"),
        ("m", lambda v: v >= 0, "m must be nonnegative"),
        ("check_every", lambda v: v >= 1, "check-every must be >= 1"),
        ("points", lambda v: v >= 2, "points must be >= 2"),
        ("h", lambda v: v > 0.0, "h must be positive"),
        ("horizon", lambda v: v > 0.0, "horizon must be positive"),
    )
    for name, good, message in checks:
        if hasattr(args, name) and not good(getattr(args, name)):
            raise ValidationError(f"config: {message}")
    if hasattr(args, "wlo") and not args.wlo < args.whi:
        raise ValidationError("config: need wlo < whi")


def _parse_input_spec(spec, n_b):
    """Input-signal flag: const[:v1,v2], step[:t_on[:v1,v2]], zero, csv:PATH."""
    if spec is None or spec == "const":
        return constant_input(np.ones(n_b))
    if spec.startswith("const:"):
        vals = [float(v) for v in spec.split(":", 1)[1].split(",")]
        return constant_input(np.asarray(vals))
    if spec == "zero":
        return zero_input(n_b)
    if spec.startswith("step"):
        parts = spec.split(":")
        t_on = float(parts[1]) if len(parts) > 1 else 0.0
        vals = (
            np.asarray([float(v) for v in parts[2].split(",")])
            if len(parts) > 2
            else np.ones(n_b)
        )
        return step_input(vals, t_on)
    if spec.startswith("csv:"):
        return read_input_csv(spec.split(":", 1)[1])
    raise ParseError(f"unrecognized input spec {spec!r}")


def _cmd_gen(args):
    unstable = (
        Unstable(args.unstable, args.shift) if args.unstable else None
    )
    grid = (
        GridSpec(args.grid[0], args.grid[1], args.viscosity)
        if args.grid
        else None
    )
    spec = SyntheticSpec(
        n_v=args.nv,
        n_p=args.np,
        n_b=args.nb,
        n_c=args.nc,
        seed=args.seed,
        unstable=unstable,
        grid=grid,
    )
    t0 = time.perf_counter()
    sys_ = generate_synthetic(spec)
    manifest = write_system(sys_, args.out)
    _write_manifest(
        args.out,
        "gen",
        args,
        {"system_manifest": manifest, "dims": sys_.dims,
         "wall_time_s": time.perf_counter() - t0},
    )
    print(f"wrote {manifest}")
    return 0


def _cmd_reduce(args):
    sys_ = _load(args)
    os.makedirs(args.out, exist_ok=True)
    t0 = time.perf_counter()
    basis = ekba_basis(sys_, args.m, FORWARD)
    form = GENERALIZED if args.form == "generalized" else STATE_SPACE
    model = build_reduced(basis, form)
    names = {"a": "T_m" if form == STATE_SPACE else "A_m", "b": "B_m", "c": "C_m"}
    for attr, name in names.items():
        sio.mmwrite(
            os.path.join(args.out, f"{name}.mtx"), getattr(model, attr), precision=17
        )
    if model.mass is not None:
        sio.mmwrite(os.path.join(args.out, "M_m.mtx"), model.mass, precision=17)
    _write_manifest(
        args.out,
        "reduce",
        args,
        {
            "order": model.order,
            "breakdown_at": basis.breakdown_at,
            "wall_time_s": time.perf_counter() - t0,
        },
    )
    print(f"reduced model of order {model.order} written to {args.out}")
    return 0


def _cmd_bode(args):
    sys_ = _load(args)
    os.makedirs(args.out, exist_ok=True)
    t0 = time.perf_counter()
    basis = ekba_basis(sys_, args.m, FORWARD)
    model = build_reduced(basis, STATE_SPACE)
    sweep = frequency_sweep(
        sys_, model, w_lo=args.wlo, w_hi=args.whi, n_points=args.points
    )
    csv_path = os.path.join(args.out, "sweep.csv")
    write_sweep_csv(csv_path, sweep)
    _write_manifest(
        args.out,
        "bode",
        args,
        {
            "order": model.order,
            "hinf_sample": sweep.hinf_sample,
            "skipped_points": sweep.skipped,
            "wall_time_s": time.perf_counter() - t0,
        },
    )
    print(f"sweep written to {csv_path} (hinf sample {sweep.hinf_sample:.6e})")
    return 0


def _solve_riccati(args, sys_):
    solution = ebara_solve(
        sys_,
        tol=args.tol,
        dtol=args.dtol,
        m_max=args.mmax,
        check_every=args.check_every,
    )
    gain = feedback_gain(solution.z, sys_)
    return solution, gain


def _write_gain(out_dir, solution, gain):
    if solution.z.size:
        sio.mmwrite(os.path.join(out_dir, "Z.mtx"), solution.z, precision=17)
    sio.mmwrite(os.path.join(out_dir, "K.mtx"), gain.matrix(), precision=17)
    write_residual_csv(os.path.join(out_dir, "residuals.csv"), solution)


def _cmd_riccati(args):
    sys_ = _load(args)
    os.makedirs(args.out, exist_ok=True)
    t0 = time.perf_counter()
    solution, gain = _solve_riccati(args, sys_)
    _write_gain(args.out, solution, gain)
    final = solution.residual_history[-1][1] if solution.residual_history else None
    _write_manifest(
        args.out,
        "riccati",
        args,
        {
            "iterations": solution.iterations,
            "converged": solution.converged,
            "status": solution.status,
            "rank": solution.rank,
            "final_relative_residual": final,
            "wall_time_s": time.perf_counter() - t0,
        },
    )
    print(
        f"riccati: {solution.status} after {solution.iterations} iterations, "
        f"rank {solution.rank}, final residual {final}"
    )
    return 0 if solution.converged else 3


def _cmd_stabilize(args):
    sys_ = _load(args)
    os.makedirs(args.out, exist_ok=True)
    t0 = time.perf_counter()
    solution, gain = _solve_riccati(args, sys_)
    _write_gain(args.out, solution, gain)
    cl = ClosedLoopSystem(sys_, gain)
    basis, model = reduce_closed_loop(cl, args.m)
    sweep = frequency_sweep(
        sys_, model, w_lo=args.wlo, w_hi=args.whi, n_points=args.points
    )
    write_sweep_csv(os.path.join(args.out, "closedloop_sweep.csv"), sweep)
    extra = {
        "iterations": solution.iterations,
        "converged": solution.converged,
        "rank": solution.rank,
        "reduced_order": model.order,
        "wall_time_s": time.perf_counter() - t0,
    }
    if sys_.n_v <= oracle.size_cap():
        spectrum = oracle.pencil_finite_spectrum(sys_, gain)
        extra["closed_loop_max_real"] = float(spectrum.real.max())
    _write_manifest(args.out, "stabilize", args, extra)
    print(
        f"stabilize: gain rank {gain.rank}, closed-loop reduced order "
        f"{model.order} written to {args.out}"
    )
    return 0


def _cmd_simulate(args):
    sys_ = _load(args)
    os.makedirs(args.out, exist_ok=True)
    t0 = time.perf_counter()
    target = sys_
    if args.gain:
        k = np.atleast_2d(np.asarray(sio.mmread(args.gain)))
        target = ClosedLoopSystem(
            sys_, FeedbackGain(left=np.eye(k.shape[0]), right=k)
        )
    u = _parse_input_spec(args.input, sys_.n_b)
    traj = simulate_dae(target, u, h=args.h, t_end=args.horizon)
    csv_path = os.path.join(args.out, "trajectory.csv")
    write_trajectory_csv(csv_path, traj)
    reduced_err = None
    if args.m:
        if args.gain:
            basis, model = reduce_closed_loop(target, args.m)
        else:
            basis = ekba_basis(sys_, args.m, FORWARD)
            model = build_reduced(basis, STATE_SPACE)
        red = simulate_reduced(model, u, h=args.h, t_end=args.horizon)
        write_trajectory_csv(os.path.join(args.out, "trajectory_reduced.csv"), red)
        reduced_err = float(
            np.max(np.linalg.norm(traj.outputs - red.outputs, axis=1))
        )
    _write_manifest(
        args.out,
        "simulate",
        args,
        {
            "steps": len(traj.times) - 1,
            "max_output_error": reduced_err,
            "wall_time_s": time.perf_counter() - t0,
        },
    )
    print(f"trajectory written to {csv_path}")
    return 0


def _cmd_verify(args):
    sys_ = _load(args)
    checks = []
    proj = oracle.build_projector(sys_, cap=args.cap)
    pi, tl, tr = proj.pi, proj.theta_l, proj.theta_r
    eye = np.eye(sys_.n_v - sys_.n_p)
    checks.append(("pi idempotent", np.linalg.norm(pi @ pi - pi, 2)))
    checks.append(("pi annihilates G", np.linalg.norm(pi @ sys_.G.toarray(), 2)))
    checks.append(
        (
            "pi M symmetry",
            np.linalg.norm(pi @ sys_.M.toarray() - sys_.M.toarray() @ pi.T, 2),
        )
    )
    checks.append(("theta product", np.linalg.norm(tl @ tr.T - pi, 2)))
    checks.append(("theta biorthogonal", np.linalg.norm(tl.T @ tr - eye, 2)))
    spectrum = oracle.pencil_finite_spectrum(sys_, cap=args.cap)
    checks.append(
        ("finite eigenvalue count", float(abs(spectrum.size - (sys_.n_v - sys_.n_p))))
    )
    status = 0
    for name, dev in checks:
        ok = dev <= 1e-9
        status |= 0 if ok else 1
        print(f"{name}: {'PASS' if ok else 'FAIL'} (deviation {dev:.3e})")
    print(
        f"pencil: {spectrum.size} finite eigenvalues, "
        f"max real part {spectrum.real.max():.6e}"
    )
    return status


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ekstab",
        description=(
            "Reduce index-2 descriptor systems with extended block Krylov "
            "projections and stabilize them with Riccati-based LQR feedback."
        ),
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic Matrix Market bundle")
    gen.add_argument("--nv", type=int, required=True)
    gen.add_argument("--np", type=int, required=True)
    gen.add_argument("--nb", type=int, default=2)
    gen.add_argument("--nc", type=int, default=2)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--unstable", type=int, default=0, metavar="K")
    gen.add_argument("--shift", type=float, default=0.5)
    gen.add_argument("--grid", type=int, nargs=2, metavar=("NX", "NY"))
    gen.add_argument("--viscosity", type=float, default=1.0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=_cmd_gen)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--bundle", required=True, help="system.manifest path")
    common.add_argument("--config", help="key-value config file (flags win)")

    red = sub.add_parser("reduce", parents=[common], help="build a reduced model")
    red.add_argument("--m", type=int, default=20)
    red.add_argument(
        "--form", choices=["state-space", "generalized"], default="state-space"
    )
    red.add_argument("--out", required=True)
    red.set_defaults(func=_cmd_reduce)

    bode = sub.add_parser(
        "bode", parents=[common], help="frequency sweep of full vs reduced"
    )
    bode.add_argument("--m", type=int, default=20)
    bode.add_argument("--wlo", type=float, default=1e-5)
    bode.add_argument("--whi", type=float, default=1e5)
    bode.add_argument("--points", type=int, default=200)
    bode.add_argument("--out", required=True)
    bode.set_defaults(func=_cmd_bode)

    ric = sub.add_parser(
        "riccati", parents=[common], help="solve the projected Riccati equation"
    )
    ric.add_argument("--tol", type=float, default=1e-8)
    ric.add_argument("--dtol", type=float, default=1e-12)
    ric.add_argument("--mmax", type=int, default=100)
    ric.add_argument("--check-every", type=int, default=1, dest="check_every")
    ric.add_argument("--out", required=True)
    ric.set_defaults(func=_cmd_riccati)

    stab = sub.add_parser(
        "stabilize",
        parents=[common],
        help="Riccati gain plus closed-loop reduction and sweep",
    )
    stab.add_argument("--tol", type=float, default=1e-8)
    stab.add_argument("--dtol", type=float, default=1e-12)
    stab.add_argument("--mmax", type=int, default=100)
    stab.add_argument("--check-every", type=int, default=1, dest="check_every")
    stab.add_argument("--m", type=int, default=20)
    stab.add_argument("--wlo", type=float, default=1e-5)
    stab.add_argument("--whi", type=float, default=1e5)
    stab.add_argument("--points", type=int, default=200)
    stab.add_argument("--out", required=True)
    stab.set_defaults(func=_cmd_stabilize)

    sim = sub.add_parser(
        "simulate", parents=[common], help="implicit-Euler time response"
    )
    sim.add_argument("--input", default="const", help="const[:v,..]|step[:t[:v,..]]|zero|csv:PATH")
    sim.add_argument("--h", type=float, default=0.05)
    sim.add_argument("--horizon", type=float, default=30.0, metavar="T")
    sim.add_argument("--gain", help="Matrix Market file with an n_b x n_v gain")
    sim.add_argument("--m", type=int, default=0, help="also simulate a reduced model")
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=_cmd_simulate)

    ver = sub.add_parser(
        "verify", parents=[common], help="dense oracle checks on a bundle"
    )
    ver.add_argument("--cap", type=int, default=None)
    ver.set_defaults(func=_cmd_verify)
    parser.subcommands = sub
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    command_parser = parser.subcommands.choices[args.command]
    defaults = {
        action.dest: action.default
        for action in command_parser._actions
        if action.dest not in ("help", "func")
    }
    try:
        args = _apply_config(args, defaults)
        return args.func(args)
    except EkstabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
