"""Command-line front end: ``rve-lab gen|mesh|solve|sweep|analyze|rod-oracle``.

Exit codes: 0 success, 1 invalid input or failed check, 2 packing jammed,
3 solver error, 4 sweep finished with failed members.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (ContributionTable, ensemble, resolve_jobs, run_rod_oracle,
                       sweep, _git_describe)
from .config import RunConfig, as_jsonable, load_config_file, microstructure_from, run_case
from .errors import InvalidSpec, JammingError, RVELabError
from .homogenize import FdCurve
from .meshing import rasterize
from .microstructure import Microstructure, dumps_canonical, generate_rsa, min_freepath

EXIT_OK, EXIT_INVALID, EXIT_JAMMED, EXIT_SOLVER, EXIT_PARTIAL = 0, 1, 2, 3, 4

log = logging.getLogger("rve_lab")


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write(out: Path, name: str, text: str) -> Path:
    target = (out / name).resolve()
    if out.resolve() not in target.parents:
        raise InvalidSpec(f"refusing to write {name!r} outside {out}")
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(text)
    return target


def cmd_gen(args) -> int:
    try:
        m = generate_rsa(args.n, args.vf, tuple(args.domain), seed=args.seed,
                         max_attempts=args.max_attempts, strategy=args.strategy)
    except JammingError as exc:
        print(f"jammed: {exc}", file=sys.stderr)
        return EXIT_JAMMED
    out = _out_dir(args.out_dir)
    path = _write(out, args.name, m.to_json())
    info = {"file": str(path), "n_fibers": m.n_fibers, "n_ghosts": len(m.ghosts),
            "radius": m.parents[0].r if m.parents else None, "achieved_vf": m.achieved_vf(),
            "strategy": m.meta.get("strategy", args.strategy)}
    if m.n_fibers >= 2:
        pair = min_freepath(m)
        info.update(min_freepath=pair.freepath, pair=[pair.i, pair.j], theta_deg=pair.theta)
    print(json.dumps(info, indent=2))
    return EXIT_OK


def cmd_mesh(args) -> int:
    m = Microstructure.from_json(Path(args.micro).read_text())
    mesh = rasterize(m, args.h)
    out = _out_dir(args.out_dir)
    _write(out, "phase.csv", mesh.phase_csv())
    info = {"nx": mesh.nx, "ny": mesh.ny, "h": mesh.h, "n_elements": mesh.n_elements,
            "fiber_fraction": mesh.fiber_fraction()}
    _write(out, "mesh.json", dumps_canonical(info))
    print(json.dumps(info, indent=2))
    return EXIT_OK


def _versions() -> dict:
    import scipy
    return {"rve_lab": __version__, "git": _git_describe(), "numpy": np.__version__, "scipy": scipy.__version__}


def cmd_solve(args) -> int:
    raw = load_config_file(args.config)
    if args.micro:
        raw["microstructure"] = {"kind": "file", "path": str(Path(args.micro).resolve())}
    if args.out_dir:
        raw["out_dir"] = args.out_dir
    try:
        cfg = RunConfig.from_dict(raw)
    except InvalidSpec as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        ms = microstructure_from(cfg.microstructure, cfg.seed, Path(args.config).parent)
    except JammingError as exc:
        print(f"jammed: {exc}", file=sys.stderr)
        return EXIT_JAMMED
    try:
        res = run_case(cfg, ms)
    except RVELabError as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    out = _out_dir(cfg.out_dir)
    _write(out, "microstructure.json", ms.to_json())
    _write(out, "trace.csv", res.trace.to_csv())
    _write(out, "curve.csv", res.curve.to_csv())
    _write(out, "metrics.json", dumps_canonical({"metrics": res.metrics.__dict__ if res.metrics else None,
                                                 "notes": res.notes}))
    for s in res.trace.snapshots:
        text = "\n".join(",".join(repr(float(v)) for v in row) for row in s.D) + "\n"
        _write(out, f"snapshots/D_{s.increment:06d}_{s.label}.csv", text)
    cfg_dict = cfg.to_dict()
    cfg_dict["microstructure"] = {"kind": "file", "path": "microstructure.json"}
    _write(out, "manifest.json", dumps_canonical({"config": as_jsonable(cfg_dict), "versions": _versions()}))
    summary = {"out_dir": str(out), "increments": res.trace.n_increments,
               "peak_force": float(res.trace.reaction_sum.max()),
               "metrics": res.metrics.__dict__ if res.metrics else None}
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_sweep(args) -> int:
    plan = load_config_file(args.plan)
    try:
        result = sweep(plan, args.out_dir, resolve_jobs(args.jobs))
    except InvalidSpec as exc:
        print(f"invalid plan: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(json.dumps({l: e.summary() for l, e in sorted(result.ensembles.items())}, indent=2))
    if result.failures:
        print(f"{len(result.failures)} member(s) failed; see failures.json", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_analyze(args) -> int:
    out = _out_dir(args.out_dir)
    if args.curves:
        curves = [FdCurve.from_csv(Path(p).read_text()) for p in args.curves]
        e = ensemble(curves, args.label)
        _write(out, "ensemble.json", dumps_canonical(e.summary()))
        _write(out, "mean_curve.csv", e.mean_curve.to_csv())
        print(json.dumps(e.summary(), indent=2))
    if args.eps0_grid:
        grid = json.loads(Path(args.eps0_grid).read_text())
        eps0 = {(float(r["d_fmin"]), float(r["theta"])): float(r["eps0"]) for r in grid["entries"]}
        table = ContributionTable.from_grid(eps0, float(grid["d_ref"]), float(grid["theta_ref"]))
        _write(out, "c_theta.json", table.to_json())
        print(table.to_json())
    if not (args.curves or args.eps0_grid):
        print("nothing to analyze: pass --curves and/or --eps0-grid", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def cmd_rod(args) -> int:
    r = run_rod_oracle(n_elements=args.n_elements, n_increments=args.increments)
    out = _out_dir(args.out_dir)
    lines = ["u,stress_fe,stress_analytic,compared"]
    lines += [f"{u!r},{a!r},{b!r},{int(c)}" for u, a, b, c in
              zip(r.u.tolist(), r.stress_fe.tolist(), r.stress_analytic.tolist(), r.compared)]
    _write(out, "rod.csv", "\n".join(lines) + "\n")
    ok = r.max_rel_error <= args.tol
    print(json.dumps({"max_rel_error": r.max_rel_error, "n_compared": int(r.compared.sum()),
                      "tolerance": args.tol, "pass": ok}, indent=2))
    return EXIT_OK if ok else EXIT_INVALID


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rve-lab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"rve-lab {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a periodic random fibre packing")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--vf", type=float, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--domain", type=float, nargs=2, default=(1.0, 1.0), metavar=("L", "B"))
    g.add_argument("--max-attempts", type=int, default=100_000)
    g.add_argument("--strategy", choices=("rsa", "rsa+compress"), default="rsa")
    g.add_argument("--out-dir", default=".")
    g.add_argument("--name", default="microstructure.json")
    g.set_defaults(func=cmd_gen)

    m = sub.add_parser("mesh", help="rasterise a microstructure file")
    m.add_argument("--micro", required=True)
    m.add_argument("--h", type=float, required=True)
    m.add_argument("--out-dir", default=".")
    m.set_defaults(func=cmd_mesh)

    s = sub.add_parser("solve", help="run one incremental damage solve")
    s.add_argument("--config", required=True, help="run configuration (JSON or TOML)")
    s.add_argument("--micro", help="microstructure file overriding the config")
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_solve)

    w = sub.add_parser("sweep", help="run a sweep plan")
    w.add_argument("--plan", required=True)
    w.add_argument("--out-dir", default="sweep_out")
    w.add_argument("--jobs", type=int, default=1)
    w.set_defaults(func=cmd_sweep)

    a = sub.add_parser("analyze", help="ensemble dispersion and angle-contribution tables")
    a.add_argument("--curves", nargs="+", help="curve CSV files (d,F) sharing the same samples")
    a.add_argument("--eps0-grid", help="JSON with d_ref, theta_ref and entries of d_fmin/theta/eps0")
    a.add_argument("--label", default="")
    a.add_argument("--out-dir", default=".")
    a.set_defaults(func=cmd_analyze)

    r = sub.add_parser("rod-oracle", help="compare a softening strip with the closed-form bar response")
    r.add_argument("--n-elements", type=int, default=100)
    r.add_argument("--increments", type=int, default=250)
    r.add_argument("--tol", type=float, default=1e-6)
    r.add_argument("--out-dir", default=".")
    r.set_defaults(func=cmd_rod)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InvalidSpec as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
