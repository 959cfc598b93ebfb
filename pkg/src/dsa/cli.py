"""Command-line front end: ``dsa <subcommand> ...``.

Exit status is 0 on success, 2 for usage or input errors (usage text goes to
stderr) and 1 for numeric failures such as divergence.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import fem, gridio
from .errors import DSAError, NumericError
from .fitloop import FitConfig, bukin_target, fit_surface, init_surface
from .gradcheck import FAIL_THRESHOLD, SUITES, run_suite
from .nurbs import NurbsSurface, eval_surface_grid
from .pcw2d import connected_components, pcw2d_forward
from .piecewise1d import fit_kpiecewise

AXES = ("x", "y", "z")


class UsageError(Exception):
    pass


def _grid_paths(prefix):
    return [f"{prefix}.{a}.txt" for a in AXES]


def _threads(args) -> int:
    if args.threads is not None:
        n = args.threads
    else:
        raw = os.environ.get("DSA_THREADS", "1")
        try:
            n = int(raw)
        except ValueError:
            raise UsageError(f"DSA_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("thread count must be >= 1")
    return n


def cmd_fit1d(args):
    x = gridio.read_signal(args.inp)
    fit = fit_kpiecewise(x, args.k, args.d)
    out = fit.to_dict()
    out["fitted"] = fit.fitted.tolist()
    gridio.write_json(args.out, out)
    print(f"k={fit.partition.k} d={fit.degree} cost={fit.cost:.6g} breaks={list(fit.partition.breaks)}")


def cmd_pcw2d(args):
    img = gridio.read_grid(args.inp)
    labels = connected_components(img, args.threshold)
    gridio.write_grid(args.out, pcw2d_forward(img, labels))
    if args.labels_out:
        gridio.write_grid(args.labels_out, labels.labels)
    print(f"components={labels.k}")


def cmd_eval_nurbs(args):
    surf = NurbsSurface.from_json(args.surface)
    pts, _ = eval_surface_grid(surf, args.nx, args.ny, _threads(args))
    for i, path in enumerate(_grid_paths(args.out)):
        gridio.write_grid(path, pts[..., i])
    print(f"wrote {args.nx}x{args.ny} grid to {args.out}.[xyz].txt")


def _load_fit_config(args):
    data = dict(gridio.read_json(args.cfg)) if args.cfg else {}
    grid = data.pop("control_grid", [8, 8])
    degree = data.pop("degree", 3)
    if args.seed is not None:
        data["seed"] = args.seed
    data["threads"] = _threads(args)
    cfg = FitConfig.from_dict(data)
    if not (isinstance(grid, list) and len(grid) == 2):
        raise UsageError("control_grid must be a list [n_u, n_v]")
    return cfg, int(grid[0]), int(grid[1]), int(degree)


def cmd_fit_surface(args):
    if (args.target is None) == (args.bukin is None):
        raise UsageError("give exactly one of --target PREFIX or --bukin NX NY")
    if args.bukin is not None:
        target = bukin_target(*args.bukin)
    else:
        target = np.stack([gridio.read_grid(p) for p in _grid_paths(args.target)], axis=-1)
    cfg, n_u, n_v, degree = _load_fit_config(args)
    init = init_surface(target, n_u, n_v, degree, cfg.seed)
    report = fit_surface(target, init, cfg)
    out = report.to_dict(every=args.history_every, timing=args.timing)
    out["config"] = cfg.to_dict()
    gridio.write_json(args.out, out)
    print(f"final_mse={report.final_mse:.6g} iterations={cfg.iterations}")


def _parse_omega(text):
    try:
        vals = tuple(float(t) for t in text.split(","))
    except ValueError:
        raise UsageError(f"--omega expects four comma-separated numbers, got {text!r}") from None
    return fem.DiffusivityParams(vals)


def cmd_solve_poisson(args):
    cfg = {"nx": 32, "ny": 32, "degree": 1, "method": "cg", "tol": 1e-10, "max_iters": 100000, "omega": None}
    if args.config:
        extra = gridio.read_json(args.config)
        unknown = set(extra) - set(cfg)
        if unknown:
            raise UsageError(f"unknown solver config keys: {sorted(unknown)}")
        cfg.update(extra)
    for key in ("nx", "ny", "degree", "method", "tol", "max_iters"):
        if getattr(args, key) is not None:
            cfg[key] = getattr(args, key)
    if args.omega is not None:
        nu = _parse_omega(args.omega)
    elif cfg["omega"] is not None:
        nu = fem.DiffusivityParams(tuple(cfg["omega"]))
    else:
        nu = fem.DiffusivityParams()
    mesh = fem.StructuredMesh(int(cfg["nx"]), int(cfg["ny"]), int(cfg["degree"]))
    res = fem.solve_poisson(
        mesh, nu, fem.manufactured_forcing, cfg["method"], float(cfg["tol"]), int(cfg["max_iters"]),
        log_every=args.log_every if args.log else 0,
    )
    gridio.write_grid(args.out, res.field.values)
    if args.nu_out:
        X, Y = mesh.node_coords()
        gridio.write_grid(args.nu_out, nu(X, Y))
    if args.log:
        gridio.write_csv_rows(args.log, ["iteration", "J", "grad_max"], res.history)
    msg = f"iterations={res.iterations} grad_max={res.grad_norm:.3e}"
    if not any(nu.omega):
        msg += f" l2_error={fem.l2_error(res.field, fem.exact_solution):.6e}"
    print(msg)
    if res.grad_norm > float(cfg["tol"]):
        print(f"warning: tolerance not reached in {res.iterations} iterations", file=sys.stderr)


def cmd_gradcheck(args):
    errs = run_suite(args.suite, seed=args.seed or 0)
    width = max(len(k) for k in errs)
    print(f"{'block':<{width}}  max_rel_err")
    for name, err in errs.items():
        print(f"{name:<{width}}  {err:.3e}")
    bad = [k for k, e in errs.items() if not e <= FAIL_THRESHOLD]
    if bad:
        print(f"gradient check failed for: {', '.join(bad)}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help="worker threads (default: $DSA_THREADS or 1)")
    common.add_argument("--seed", type=int, default=None, help="random seed")

    p = argparse.ArgumentParser(prog="dsa", description="Differentiable spline approximation tools.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    s = sub.add_parser("fit1d", parents=[common], help="exact k-piece polynomial fit of a CSV signal")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--d", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit1d)

    s = sub.add_parser("pcw2d", parents=[common], help="replace each thresholded component by its mean")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--threshold", type=float, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--labels-out", default=None)
    s.set_defaults(func=cmd_pcw2d)

    s = sub.add_parser("eval-nurbs", parents=[common], help="evaluate a surface on a uniform grid")
    s.add_argument("--surface", required=True)
    s.add_argument("--nx", type=int, required=True)
    s.add_argument("--ny", type=int, required=True)
    s.add_argument("--out", required=True, help="output prefix; writes PREFIX.x.txt, .y.txt, .z.txt")
    s.set_defaults(func=cmd_eval_nurbs)

    s = sub.add_parser("fit-surface", parents=[common], help="fit a NURBS surface to a point grid")
    s.add_argument("--target", default=None, help="grid prefix with PREFIX.x.txt, .y.txt, .z.txt")
    s.add_argument("--bukin", type=int, nargs=2, metavar=("NX", "NY"), default=None)
    s.add_argument("--cfg", default=None, help="JSON fit configuration")
    s.add_argument("--out", required=True)
    s.add_argument("--history-every", type=int, default=1)
    s.add_argument("--timing", action="store_true", help="include wall time in the report")
    s.set_defaults(func=cmd_fit_surface)

    s = sub.add_parser("solve-poisson", parents=[common], help="FEM Poisson solve with the manufactured forcing")
    s.add_argument("--nx", type=int, default=None)
    s.add_argument("--ny", type=int, default=None)
    s.add_argument("--degree", type=int, default=None)
    s.add_argument("--method", choices=fem.SOLVERS, default=None)
    s.add_argument("--tol", type=float, default=None)
    s.add_argument("--max-iters", dest="max_iters", type=int, default=None)
    s.add_argument("--omega", default=None, help="w1,w2,w3,w4 diffusivity parameters")
    s.add_argument("--config", default=None, help="JSON solver configuration")
    s.add_argument("--out", required=True)
    s.add_argument("--nu-out", default=None, help="write the nodal diffusivity grid")
    s.add_argument("--log", default=None, help="CSV convergence log")
    s.add_argument("--log-every", type=int, default=1)
    s.set_defaults(func=cmd_solve_poisson)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suites")
    s.add_argument("--suite", choices=SUITES, required=True)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("dsa: error: a subcommand is required", file=sys.stderr)
        return 2
    if getattr(args, "history_every", 1) < 1 or getattr(args, "log_every", 1) < 1:
        parser.print_usage(sys.stderr)
        print("dsa: error: interval options must be >= 1", file=sys.stderr)
        return 2
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            return args.func(args) or 0
    except NumericError as exc:
        print(f"dsa: numeric failure: {exc}", file=sys.stderr)
        return 1
    except (UsageError, DSAError, OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        parser.print_usage(sys.stderr)
        print(f"dsa: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
