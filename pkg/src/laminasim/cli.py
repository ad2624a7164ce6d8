"""``laminasim`` command line: simulate, identify, hinge, fit-surface, validate."""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    BurnInFailedError,
    NumericalBlowupError,
    RankError,
    SchemaError,
    SingularMassError,
    TopologyError,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_BURN_IN = 3
EXIT_BLOWUP = 4

DEFAULT_FRAME_RATE = 30.0


class CommandError(Exception):
    def __init__(self, code: int, exc: BaseException, **extra):
        super().__init__(str(exc))
        self.code = code
        self.exc = exc
        self.extra = extra


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# -- simulate ------------------------------------------------------------------------


def _frames(tree, mech, traj, frame_rate: float) -> dict:
    from .kinematics import body_polygons

    if len(traj) == 0:
        return {"frame_rate": frame_rate, "bodies": [b.id for b in mech.bodies], "frames": []}
    dt = float(traj.t[1] - traj.t[0]) if len(traj) > 1 else 1.0
    stride = max(1, int(round(1.0 / (frame_rate * dt))))
    frames = []
    for i in range(0, len(traj), stride):
        polys = body_polygons(tree, mech, traj.q[i])
        frames.append({"t": float(traj.t[i]), "bodies": {b: polys[b].tolist() for b in polys}})
    return {"frame_rate": frame_rate, "bodies": [b.id for b in mech.bodies], "frames": frames}


def cmd_simulate(args) -> int:
    from .dynamics import SimulationConfig, simulate
    from .kinematics import build_tree
    from .mechanism import load_mechanism
    from .plotting import plot_angles, plot_velocities

    src = Path(args.mechanism)
    try:
        mech = load_mechanism(src)
        tree = build_tree(mech)
        config = SimulationConfig.from_mechanism(
            mech,
            dt=args.dt,
            alpha=args.alpha,
            beta=args.beta,
            burn_in_steps=args.burn_in_steps,
            burn_in_dt=args.burn_in_dt,
            production_duration=args.duration,
        )
    except (OSError, SchemaError, TopologyError, ReferenceError, ValueError) as exc:
        raise CommandError(EXIT_INPUT, exc) from exc
    try:
        phase1, phase2 = simulate(mech, config, tree)
    except BurnInFailedError as exc:
        raise CommandError(EXIT_BURN_IN, exc, final_error=exc.final_error, tolerance=exc.tolerance) from exc
    except (NumericalBlowupError, SingularMassError) as exc:
        raise CommandError(EXIT_BLOWUP, exc) from exc

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def emit(name, writer):
        path = out / name
        writer(path)
        written.append(path)

    emit("trajectory.csv", phase2.write_csv)
    emit("burn_in.csv", phase1.write_csv)
    emit("angles.svg", lambda p: plot_angles(phase2, p))
    emit("velocities.svg", lambda p: plot_velocities(phase2, p))
    emit("frames.json", lambda p: p.write_text(_dumps(_frames(tree, mech, phase2, args.frame_rate))))

    config_echo = {
        "dt": config.dt,
        "burn_in_dt": config.effective_burn_in_dt,
        "burn_in_steps": config.burn_in_steps,
        "production_duration": config.production_duration,
        "alpha": config.baumgarte.alpha,
        "beta": config.baumgarte.beta,
        "constraint_tolerance": config.constraint_tolerance,
        "frame_rate": args.frame_rate,
    }
    manifest = build_manifest(src, config_echo, written, out)
    (out / "manifest.json").write_text(_dumps(manifest))
    summary = {
        "burn_in_steps": len(phase1) - 1 if len(phase1) else 0,
        "burn_in_final_error": float(phase1.constraint_error[-1]) if len(phase1) else 0.0,
        "production_rows": len(phase2),
        "max_constraint_error": float(np.max(phase2.constraint_error)) if len(phase2) else 0.0,
        "final_angles": {j: float(v) for j, v in zip(phase2.joint_ids, phase2.q[-1])},
        "out_dir": str(out),
    }
    print(_dumps(summary), end="")
    return EXIT_OK


def build_manifest(src: Path, config_echo: dict, written: list, out_dir: Path) -> dict:
    """Input path, config echo, version, input hash and every output with its own hash."""
    input_hash = hashlib.sha256()
    input_hash.update(src.read_bytes())
    input_hash.update(json.dumps(config_echo, sort_keys=True).encode())
    return {
        "tool": "laminasim",
        "version": __version__,
        "input": str(src),
        "config": config_echo,
        "input_hash": input_hash.hexdigest(),
        "outputs": [{"file": p.relative_to(out_dir).as_posix(), "sha256": _sha256(p)} for p in written]
        + [{"file": "manifest.json", "sha256": None}],
    }


# -- identify ------------------------------------------------------------------------


def _model_response(t, theta0, thetadot0, k, b, props, g):
    from scipy.integrate import solve_ivp

    I = props.inertia_hinge
    mgr = props.mass * g * props.lever

    def rhs(_, y):
        return [y[1], (-k * y[0] - b * y[1] - mgr * np.sin(y[0])) / I]

    sol = solve_ivp(rhs, (t[0], t[-1]), [theta0, thetadot0], t_eval=t, rtol=1e-10, atol=1e-12, method="DOP853")
    return sol.y[0]


def cmd_identify(args) -> int:
    from .identification import (
        PendulumProperties,
        fs_derivatives,
        identify_from_recording,
        pendulum_properties,
        read_mocap_csv,
    )
    from .mechanism import load_mechanism
    from .plotting import plot_fit_overlay

    try:
        rec = read_mocap_csv(args.recording, rate=args.rate)
        if args.mechanism:
            mech = load_mechanism(args.mechanism)
            props = pendulum_properties(mech, args.joint)
            g = float(np.linalg.norm(mech.gravity))
        else:
            if None in (args.inertia, args.mass, args.lever):
                raise ValueError("give --mechanism/--joint or all of --inertia, --mass, --lever")
            props = PendulumProperties(args.inertia, args.mass, args.lever)
            g = args.g
        for body in (args.parent, args.child):
            if body not in rec.quaternions:
                raise ValueError(f"body {body!r} not in recording (have {rec.bodies})")
    except (OSError, SchemaError, TopologyError, ReferenceError, KeyError, ValueError) as exc:
        raise CommandError(EXIT_INPUT, exc) from exc

    rng = np.random.default_rng(args.seed)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            result = identify_from_recording(rec, args.parent, args.child, props, order=args.order, g=g,
                                             noise=args.noise, rng=rng)
        except ValueError as exc:  # SpectrumError, DegenerateAxisError, RankError and short series
            raise CommandError(EXIT_BURN_IN, exc) from exc
    notes = [str(w.message) for w in caught]
    n_interp = int(np.count_nonzero(result.series.interpolated))
    if n_interp:
        notes.append(f"{n_interp} samples interpolated across short dropouts")

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = result.as_dict()
    report["warnings"] = notes
    (out / "identification.json").write_text(_dumps(report))
    t = result.series.t
    th, thd, _ = fs_derivatives(result.fit, t)
    predicted = _model_response(t, th[0], thd[0], result.estimate.k, result.estimate.b, props, g)
    plot_fit_overlay(out / "fit_overlay.svg", t, result.series.theta, th, predicted)
    print(_dumps(report), end="")
    return EXIT_OK


# -- hinge / fit-surface / validate --------------------------------------------------


def cmd_hinge(args) -> int:
    from . import hinge_models as hm

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", hm.RangeWarning)
        try:
            if args.model == "comprehensive":
                _need(args, "l", "w", "a")
                props = hm._comprehensive(args.l, args.w, args.a)
            elif args.model == "width":
                _need(args, "w")
                props = hm.properties_from_width(args.w)
            elif args.model == "length":
                _need(args, "l")
                props = hm.properties_from_length(args.l)
            else:
                _need(args, "a")
                props = hm.air_damping_properties(args.a)
        except ValueError as exc:
            raise CommandError(EXIT_INPUT, exc) from exc
    report = props.as_dict()
    if args.model == "air":
        report["k"] = None
    print(_dumps(report), end="")
    return EXIT_OK


def _need(args, *names):
    missing = [f"--{n}" for n in names if getattr(args, n) is None]
    if missing:
        raise ValueError(f"model {args.model!r} needs {', '.join(missing)}")


def cmd_fit_surface(args) -> int:
    from .hinge_models import load_experiment_table, fit_quadratic_surface

    variables = tuple(v.strip() for v in args.variables.split(","))
    try:
        table = load_experiment_table(args.table)
        report = {}
        for quantity in ("k", "b"):
            fit = fit_quadratic_surface(table.samples(quantity, variables), variables)
            model = fit.as_model()
            report[quantity] = {
                "constant": model.constant,
                "terms": {v: {"linear": c1, "square": c2} for v, (c1, c2) in model.terms.items()},
                "mae": fit.mae,
                "mae_percent": fit.mae_percent,
            }
    except RankError as exc:
        raise CommandError(EXIT_BURN_IN, exc) from exc
    except (OSError, KeyError, ValueError) as exc:
        raise CommandError(EXIT_INPUT, exc) from exc
    print(_dumps(report), end="")
    return EXIT_OK


def cmd_validate(args) -> int:
    from .kinematics import build_tree
    from .mechanism import load_mechanism

    try:
        mech = load_mechanism(args.mechanism)
        tree = build_tree(mech)
    except (OSError, SchemaError, TopologyError, ReferenceError, ValueError) as exc:
        raise CommandError(EXIT_INPUT, exc) from exc
    report = {
        "valid": True,
        "bodies": [b.id for b in mech.bodies],
        "joints": [j.id for j in mech.joints],
        "newtonian": mech.newtonian.id,
        "cut_joint": tree.cut_edge.joint if tree.cut_edge else None,
        "split_body": tree.cut_edge.original if tree.cut_edge else None,
    }
    print(_dumps(report), end="")
    return EXIT_OK


# -- parser --------------------------------------------------------------------------


def _common(parser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    g = parser.add_argument_group("run options")
    g.add_argument("--dt", type=float, default=d, help="production time step (s)")
    g.add_argument("--alpha", type=float, default=d, help="Baumgarte velocity gain")
    g.add_argument("--beta", type=float, default=d, help="Baumgarte position gain")
    g.add_argument("--burn-in-steps", type=int, default=d)
    g.add_argument("--burn-in-dt", type=float, default=d, help="burn-in time step (s)")
    g.add_argument("--duration", type=float, default=d, help="production duration (s)")
    g.add_argument("--out-dir", default=d)
    g.add_argument("--seed", type=int, default=d)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="laminasim", description=__doc__)
    parser.add_argument("--version", action="version", version=f"laminasim {__version__}")
    _common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run burn-in and production, write CSV/SVG/JSON outputs")
    p.add_argument("mechanism")
    p.add_argument("--frame-rate", type=float, default=DEFAULT_FRAME_RATE, help="frames.json sample rate (Hz)")
    _common(p, suppress=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("identify", help="identify hinge k, b from a mocap CSV")
    p.add_argument("recording")
    p.add_argument("--parent", required=True)
    p.add_argument("--child", required=True)
    p.add_argument("--mechanism", help="mechanism file providing the swinging body geometry")
    p.add_argument("--joint", help="joint id in --mechanism")
    p.add_argument("--inertia", type=float, help="I_G about the COM (kg m^2)")
    p.add_argument("--mass", type=float)
    p.add_argument("--lever", type=float, help="hinge to COM distance (m)")
    p.add_argument("--g", type=float, default=9.81)
    p.add_argument("--rate", type=float, help="sample rate (Hz); inferred from t when omitted")
    p.add_argument("--order", type=int, default=8, help="trigonometric series order")
    p.add_argument("--noise", type=float, default=0.0, help="white angle noise (rad) added before fitting")
    _common(p, suppress=True)
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("hinge", help="evaluate a hinge property surface")
    p.add_argument("--model", choices=["comprehensive", "width", "length", "air"], default="comprehensive")
    p.add_argument("--l", type=float, help="hinge length (m)")
    p.add_argument("--w", type=float, help="hinge width (m)")
    p.add_argument("--a", type=float, help="body cross-sectional area (m^2)")
    _common(p, suppress=True)
    p.set_defaults(func=cmd_hinge)

    p = sub.add_parser("fit-surface", help="fit quadratic k and b surfaces to an l,w,a,k_meas,b_meas table")
    p.add_argument("table")
    p.add_argument("--variables", default="l,w,a")
    _common(p, suppress=True)
    p.set_defaults(func=cmd_fit_surface)

    p = sub.add_parser("validate", help="schema and topology check only")
    p.add_argument("mechanism")
    _common(p, suppress=True)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.out_dir is None:
        args.out_dir = "."
    if args.seed is None:
        args.seed = 0
    try:
        return args.func(args)
    except CommandError as err:
        payload = {"error": type(err.exc).__name__, "message": str(err.exc), "exit_code": err.code}
        payload.update(err.extra)
        sys.stderr.write(_dumps(payload))
        return err.code


if __name__ == "__main__":
    sys.exit(main())
