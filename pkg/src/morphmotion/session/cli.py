"""Command line front end.

    morphmotion optimize-motion <robot> <task> [-o out.csv]
    morphmotion co-optimize <robot> <task>... [--weights w1,w2] [-o prefix]
    morphmotion check-gradients <robot> <task> [--seed N]
    morphmotion serve [--port N]
    morphmotion export-plot <traj> -o <stem>

Missing or unreadable input files exit with status 2; a failed gradient
check exits with status 1.
"""
import argparse
import pathlib
import sys

import numpy as np

from .. import design_opt, gait, motion_opt
from . import files, gradcheck, service


def _fail(code, message):
    print(f"error: {message}", file=sys.stderr)
    return code


def _load_robot(path):
    try:
        return files.load_robot(path)
    except OSError as exc:
        raise _CliFileError(f"cannot read robot file {path!r}: {exc}") from exc


def _load_task(path, topology):
    try:
        return files.load_task(path, topology)
    except OSError as exc:
        raise _CliFileError(f"cannot read task file {path!r}: {exc}") from exc


class _CliFileError(Exception):
    pass


def cmd_optimize_motion(args):
    topology, s = _load_robot(args.robot)
    task, _ = _load_task(args.task, topology)
    settings = motion_opt.MotionOptSettings(max_iterations=args.max_iterations)
    traj0 = gait.init_trajectory(topology, s, task)
    traj, result = motion_opt.optimize_motion(topology, s, traj0, task, settings)
    print(
        f"F {result.f_history[-1]:.6g} after {result.iterations} iterations "
        f"({'converged' if result.converged else 'iteration cap'})"
    )
    if args.out:
        hist = [(i, f, None) for i, f in enumerate(result.f_history)]
        files.save_trajectory(args.out, traj, s.to_vector(), f_history=hist, name=task.name)
        print(f"wrote {args.out}")
    return 0


def cmd_co_optimize(args):
    topology, s = _load_robot(args.robot)
    tasks = [_load_task(p, topology)[0] for p in args.tasks]
    settings = design_opt.DesignOptSettings(
        max_design_iterations=args.max_design_iterations,
        line_search_motion_iterations=args.polish,
        adaptive_step=args.adaptive_step,
        motion=motion_opt.MotionOptSettings(max_iterations=args.motion_iterations),
    )
    if len(tasks) == 1:
        result = design_opt.co_optimize(topology, s, tasks[0], settings)
    else:
        weights = None
        if args.weights:
            weights = [float(w) for w in args.weights.split(",")]
            if len(weights) != len(tasks):
                return _fail(2, f"--weights needs {len(tasks)} comma-separated values")
        result = design_opt.co_optimize_multi(topology, s, tasks, weights=weights, settings=settings)
    print(
        f"F {result.final_value:.6g} after {result.iterations} design iterations "
        f"({result.termination})"
    )
    prefix = args.out or pathlib.Path(args.robot).stem.replace(".robot", "") + "_opt"
    robot_path = f"{prefix}.robot.json"
    files.save_robot(topology, result.s_star, robot_path)
    written = [robot_path]
    s_vec = result.s_star.to_vector()
    for task, traj in zip(tasks, result.m_star):
        traj_path = f"{prefix}.{task.name}.traj.csv"
        hist = [(it, f, g) for it, f, g in result.f_history]
        files.save_trajectory(traj_path, traj, s_vec, f_history=hist, name=task.name)
        written.append(traj_path)
    print("wrote " + ", ".join(written))
    return 0


def cmd_check_gradients(args):
    topology, s = _load_robot(args.robot)
    task, _ = _load_task(args.task, topology)
    report = gradcheck.run_check(topology, s, task, seed=args.seed)
    print(f"gradM FD max rel error        {report['gradM']:.3e}  (tol 1e-5)")
    print(f"hessMM FD max rel error       {report['hessMM']:.3e}  (tol 1e-6)")
    print(f"adjoint vs dense max rel err  {report['adjointVsDense']:.3e}  (tol {report['adjointTol']:g})")
    print(f"checked {report['coordsChecked']} of {report['nM']} motion coordinates, seed {report['seed']}")
    if not report["ok"]:
        print("FAILED", file=sys.stderr)
        return 1
    print("ok")
    return 0


def cmd_serve(args):
    service.serve(args.port)
    return 0


def cmd_export_plot(args):
    try:
        traj, s_vec, header = files.load_trajectory(args.traj)
    except OSError as exc:
        raise _CliFileError(f"cannot read trajectory file {args.traj!r}: {exc}") from exc
    stem = args.out
    if stem.endswith(".csv"):
        stem = stem[:-4]
    fh_path = f"{stem}_fhistory.csv"
    com_path = f"{stem}_com.csv"
    with open(fh_path, "w", encoding="utf-8") as fh:
        fh.write("iteration,F,gradNorm\n")
        for row in header.get("fHistory", []):
            it, f, g = row
            fh.write(f"{it},{f:.17g},{'' if g is None else format(g, '.17g')}\n")
    with open(com_path, "w", encoding="utf-8") as fh:
        fh.write("time,x,y,z\n")
        for i, frame in enumerate(traj.frames):
            x = frame.x
            fh.write(f"{i * traj.h:.17g},{x[0]:.17g},{x[1]:.17g},{x[2]:.17g}\n")
    print(f"wrote {fh_path}, {com_path}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="morphmotion", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize-motion", help="optimize a motion for a fixed structure")
    p.add_argument("robot")
    p.add_argument("task")
    p.add_argument("-o", "--out", default=None, help="trajectory CSV output path")
    p.add_argument("--max-iterations", type=int, default=500)
    p.set_defaults(func=cmd_optimize_motion)

    p = sub.add_parser("co-optimize", help="co-design structure and motion(s)")
    p.add_argument("robot")
    p.add_argument("tasks", nargs="+")
    p.add_argument("--weights", default=None, help="comma-separated task weights")
    p.add_argument("-o", "--out", default=None, help="output path prefix")
    p.add_argument("--max-design-iterations", type=int, default=60)
    p.add_argument("--motion-iterations", type=int, default=500)
    p.add_argument("--polish", type=int, default=1,
                   help="motion iterations inside the structure line search")
    p.add_argument("--adaptive-step", action="store_true")
    p.set_defaults(func=cmd_co_optimize)

    p = sub.add_parser("check-gradients", help="run the derivative verification suite")
    p.add_argument("robot")
    p.add_argument("task")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check_gradients)

    p = sub.add_parser("serve", help="start the session service")
    p.add_argument("--port", type=int, default=8732)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("export-plot", help="emit F-history and COM-trace CSV tables")
    p.add_argument("traj")
    p.add_argument("-o", "--out", required=True, help="output stem or .csv path")
    p.set_defaults(func=cmd_export_plot)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _CliFileError as exc:
        return _fail(2, str(exc))
    except files.DocumentError as exc:
        return _fail(2, str(exc))


def entry():
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
