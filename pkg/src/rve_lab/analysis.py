"""Ensemble statistics, the angle/freepath contribution split, parameter sweeps and the rod check."""
from __future__ import annotations

import copy
import json
import logging
import math
import os
import platform
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import scipy

from . import __version__
from .config import RunConfig, as_jsonable, run_case
from .constraints import ConstraintSet, LoadProgram, X, Y
from .damage_material import PhaseMaterial
from .errors import DegenerateDenominator, InvalidSpec, NoIntersection, RVELabError
from .fe_solver import SnapshotPlan, solve_quasistatic
from .homogenize import FdCurve, elastic_slope, rod_stress_analytic
from .meshing import uniform_mesh
from .microstructure import dumps_canonical

log = logging.getLogger(__name__)

SLOPE_FRACTIONS = (0.25, 0.50, 0.75)
ELASTIC_WINDOW = 0.8


# ----------------------------------------------------------------------------
# dispersion
# ----------------------------------------------------------------------------

def initiation_displacement(curve: FdCurve) -> float:
    """Displacement at damage onset, or at the peak when the curve does not record it."""
    if "d_init" in curve.meta:
        return float(curve.meta["d_init"])
    return float(curve.d[curve.peak_index()])


def average_elastic_slope(curves: Sequence[FdCurve]) -> float:
    """Mean of the per-curve slopes, each fitted up to 80% of that curve's own initiation."""
    return float(np.mean([elastic_slope(c, ELASTIC_WINDOW * initiation_displacement(c)) for c in curves]))


def ray_intersection(curve: FdCurve, slope: float, d_from: float = 0.0) -> float:
    """First downward crossing of ``F = slope * d`` at or after ``d_from``, linearly interpolated."""
    g = curve.F - slope * curve.d
    start = int(np.searchsorted(curve.d, d_from))
    for k in range(max(start, 0), len(g) - 1):
        if g[k] >= 0 > g[k + 1]:
            t = g[k] / (g[k] - g[k + 1])
            return float(curve.d[k] + t * (curve.d[k + 1] - curve.d[k]))
    raise NoIntersection("curve never drops below the ray after initiation")


def intersections(curves: Sequence[FdCurve], slope_fraction: float, slope: Optional[float] = None):
    """Intersection abscissae of every curve with the reduced-slope ray, plus excluded indices."""
    s = average_elastic_slope(curves) if slope is None else slope
    xs, excluded = [], []
    for i, c in enumerate(curves):
        try:
            xs.append(ray_intersection(c, slope_fraction * s, initiation_displacement(c)))
        except NoIntersection:
            excluded.append(i)
    return np.array(xs), excluded


def dispersion_sd(curves: Sequence[FdCurve], slope_fraction: float) -> float:
    """Population standard deviation of where the curves cross a ray of reduced elastic slope."""
    if len(curves) < 2:
        raise InvalidSpec("dispersion needs at least two curves")
    if not 0 < slope_fraction < 1:
        raise InvalidSpec("slope_fraction must lie in (0, 1)")
    xs, excluded = intersections(curves, slope_fraction)
    if excluded:
        log.warning("%d of %d curves never cross the %.2f-slope ray; excluded",
                    len(excluded), len(curves), slope_fraction)
    if len(xs) == 0:
        raise NoIntersection("no curve crosses the ray")
    return float(np.std(xs))


def mean_curve(curves: Sequence[FdCurve]) -> FdCurve:
    d = curves[0].d
    for c in curves[1:]:
        if c.d.shape != d.shape or not np.array_equal(c.d, d):
            raise InvalidSpec("curves must share the displacement samples")
    return FdCurve(d.copy(), np.mean([c.F for c in curves], axis=0), dict(curves[0].meta))


_SHARED = ("Vf", "n_fibers", "h", "bc_type")


@dataclass
class EnsembleResult:
    curves: list
    mean_curve: FdCurve
    sd_at: dict
    n_excluded: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    label: str = ""

    def summary(self) -> dict:
        m = self.mean_curve.meta
        return {"label": self.label, "n_curves": len(self.curves),
                **{k: m.get(k) for k in _SHARED},
                "sd_at": {f"{k:.2f}": v for k, v in self.sd_at.items()},
                "n_excluded": {f"{k:.2f}": v for k, v in self.n_excluded.items()},
                "flags": list(self.flags)}


def ensemble(curves: Sequence[FdCurve], label: str = "",
             fractions: Sequence[float] = SLOPE_FRACTIONS) -> EnsembleResult:
    curves = list(curves)
    if not curves:
        raise InvalidSpec("empty ensemble")
    for k in _SHARED:
        vals = {repr(c.meta.get(k)) for c in curves}
        if len(vals) > 1:
            raise InvalidSpec(f"ensemble members disagree on {k}: {sorted(vals)}")
    mc = mean_curve(curves)
    sd, excl, flags = {}, {}, []
    if len(curves) < 2:
        flags.append("sd_undefined: fewer than two curves")
        sd = {f: None for f in fractions}
    else:
        slope = average_elastic_slope(curves)
        for f in fractions:
            xs, ex = intersections(curves, f, slope)
            excl[f] = len(ex)
            sd[f] = float(np.std(xs)) if len(xs) else None
            if ex:
                flags.append(f"{len(ex)} curve(s) excluded at slope fraction {f:.2f}")
    return EnsembleResult(curves, mc, sd, excl, flags, label)


# ----------------------------------------------------------------------------
# contribution of the angle change
# ----------------------------------------------------------------------------

def c_theta(eps0_ref: float, eps0_d_only: float, eps0_theta_only: float, eps0_both: float) -> float:
    """Percent of the combined initiation-strain change attributed to the angle change.

    Solves ``both = c/100 * theta_only + (1 - c/100) * d_only`` for ``c``.
    ``eps0_ref`` does not enter the value; it is accepted so the four
    analyses of one cell travel together.
    """
    den = eps0_theta_only - eps0_d_only
    if den == 0 or abs(den) <= 1e-12 * max(abs(eps0_theta_only), abs(eps0_d_only)):
        raise DegenerateDenominator("angle-only and freepath-only strains coincide")
    return 100.0 * (eps0_both - eps0_d_only) / den


@dataclass
class ContributionTable:
    reference: tuple  # (d_ref, theta_ref, eps0_ref)
    entries: dict  # (d, theta) -> (eps0, c_theta or None)

    @classmethod
    def from_grid(cls, eps0: Mapping, d_ref: float, theta_ref: float) -> "ContributionTable":
        ref = eps0[(d_ref, theta_ref)]
        entries = {}
        for (d, th), val in sorted(eps0.items()):
            try:
                c = c_theta(ref, eps0[(d, theta_ref)], eps0[(d_ref, th)], val)
            except DegenerateDenominator:
                c = None
            entries[(d, th)] = (val, c)
        return cls((d_ref, theta_ref, ref), entries)

    def to_json(self) -> str:
        rows = [{"d_fmin": d, "theta": th, "eps0": e, "c_theta": c}
                for (d, th), (e, c) in sorted(self.entries.items())]
        d_ref, th_ref, e_ref = self.reference
        return json.dumps({"reference": {"d_fmin": d_ref, "theta": th_ref, "eps0": e_ref},
                           "entries": rows}, indent=2)


# ----------------------------------------------------------------------------
# sweeps
# ----------------------------------------------------------------------------

_GROUP_KEYS = {"label", "vf", "n_fibers", "n_samples", "microstructure", "seed_base"} | set(
    RunConfig.__dataclass_fields__)


def _git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=10)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def expand_plan(plan: dict) -> list:
    """Resolve a sweep plan into ``(group_label, sample_index, RunConfig)`` triples."""
    groups = plan.get("groups")
    if not groups:
        raise InvalidSpec("plan has no groups")
    defaults = plan.get("defaults", {})
    seed_base = int(plan.get("seed_base", 0))
    members = []
    labels = set()
    for gi, g in enumerate(groups):
        extra = set(g) - _GROUP_KEYS
        if extra:
            raise InvalidSpec(f"group {gi}: unknown keys {sorted(extra)}")
        label = g.get("label") or f"g{gi:02d}"
        if label in labels:
            raise InvalidSpec(f"duplicate group label {label!r}")
        labels.add(label)
        base = copy.deepcopy(defaults)
        for k, v in g.items():
            if k in RunConfig.__dataclass_fields__:
                base[k] = copy.deepcopy(v)
        ms = copy.deepcopy(g.get("microstructure", {"kind": "rsa"}))
        if ms.get("kind", "rsa") == "rsa":
            ms.setdefault("n_fibers", g.get("n_fibers"))
            ms.setdefault("vf", g.get("vf"))
        base["microstructure"] = ms
        n = int(g.get("n_samples", 1))
        if n < 1:
            raise InvalidSpec(f"group {label}: n_samples must be >= 1")
        sb = int(g.get("seed_base", seed_base))
        for k in range(n):
            cfg = dict(base)
            cfg["seed"] = sb + k
            members.append((label, k, RunConfig.from_dict(cfg)))
    return members


def _run_member(args):
    label, k, cfg = args
    try:
        res = run_case(cfg)
    except RVELabError as exc:
        return label, k, cfg, None, f"{type(exc).__name__}: {exc}"
    return label, k, cfg, res, None


@dataclass
class SweepResult:
    ensembles: dict
    failures: list
    manifest: dict
    metrics: dict = field(default_factory=dict)  # (label, k) -> CurveMetrics or None


def sweep(plan: dict, out_dir=None, jobs: int = 1) -> SweepResult:
    """Run every sample of every group, aggregate per group and persist the outputs.

    Members that raise a library error are recorded in the failure ledger and
    the remaining members still run.
    """
    members = expand_plan(plan)
    out = Path(out_dir) if out_dir is not None else None
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_member, members))
    else:
        results = [_run_member(m) for m in members]
    results.sort(key=lambda r: ([g[0] for g in members].index(r[0]), r[1]))

    failures, curves, metrics = [], {}, {}
    for label, k, cfg, res, err in results:
        if err is not None:
            failures.append({"group": label, "sample": k, "seed": cfg.seed, "error": err})
            continue
        curves.setdefault(label, []).append(res.curve)
        metrics[(label, k)] = res.metrics
        if out is not None:
            d = out / label / f"sample_{k:03d}"
            d.mkdir(parents=True, exist_ok=True)
            (d / "microstructure.json").write_text(res.microstructure.to_json())
            (d / "curve.csv").write_text(res.curve.to_csv())
            (d / "trace.csv").write_text(res.trace.to_csv())
            m = res.metrics.__dict__ if res.metrics else None
            (d / "metrics.json").write_text(dumps_canonical({"metrics": m, "notes": res.notes}))

    ensembles = {}
    for label, cs in curves.items():
        try:
            ensembles[label] = ensemble(cs, label)
        except (InvalidSpec, NoIntersection) as exc:
            failures.append({"group": label, "sample": None, "seed": None,
                             "error": f"{type(exc).__name__}: {exc}"})

    manifest = {
        "plan": as_jsonable(plan),
        "members": [{"group": l, "sample": k, "config": as_jsonable(c.to_dict())} for l, k, c in members],
        "versions": {"rve_lab": __version__, "git": _git_describe(), "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
    }
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "manifest.json").write_text(dumps_canonical(manifest))
        (out / "summary.json").write_text(dumps_canonical({l: e.summary() for l, e in sorted(ensembles.items())}))
        for label, e in ensembles.items():
            (out / label).mkdir(parents=True, exist_ok=True)
            (out / label / "mean_curve.csv").write_text(e.mean_curve.to_csv())
        if failures:
            (out / "failures.json").write_text(dumps_canonical(failures))
    return SweepResult(ensembles, failures, manifest, metrics)


def resolve_jobs(jobs: Optional[int]) -> int:
    env = os.environ.get("RVE_LAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InvalidSpec(f"RVE_LAB_THREADS must be an integer, got {env!r}")
    return max(1, int(jobs or 1))


# ----------------------------------------------------------------------------
# bar with one weak element
# ----------------------------------------------------------------------------

@dataclass
class RodComparison:
    u: np.ndarray
    stress_fe: np.ndarray
    stress_analytic: np.ndarray
    compared: np.ndarray  # mask of post-peak samples used
    max_rel_error: float
    trace: object = None


def run_rod_oracle(n_elements: int = 100, length: float = 1.0, eps0_weak: float = 0.01, epsf_weak: float = 2.0,
                   eps0_strong: float = 0.02, E: float = 1.0, u_total: float = 0.025, n_increments: int = 250,
                   stagger_iterations: int = 500, stagger_tol: float = 1e-14,
                   min_fraction: float = 0.05) -> RodComparison:
    """Strip of ``n_elements`` square elements loaded in tension, one softer element mid-span.

    The finite-element stress ``F / b`` is compared with the analytic
    softening branch at every post-peak sample carrying at least
    ``min_fraction`` of the peak stress.
    """
    h = length / n_elements
    phase = np.zeros((1, n_elements), dtype=np.int8)
    phase[0, n_elements // 2] = 1
    mesh = uniform_mesh(length, h, h, phase)
    weak = PhaseMaterial(E, 0.0, eps0_weak, epsf_weak)
    strong = PhaseMaterial(E, 0.0, eps0_strong, 2 * epsf_weak)
    load = LoadProgram("axial_xx", u_total, n_increments)
    pres = [(int(n), X, 0.0) for n in mesh.left()] + [(int(n), X, u_total) for n in mesh.right()]
    pres.append((int(mesh.node(0, 0)), Y, 0.0))
    cs = ConstraintSet(mesh.n_nodes, (), tuple(sorted(pres)), "rod")
    trace = solve_quasistatic(mesh, {0: strong, 1: weak}, cs, load, SnapshotPlan(every_fraction=None),
                              stagger_iterations=stagger_iterations, stagger_tol=stagger_tol)
    s_fe = trace.reaction_sum / mesh.b
    s_an = np.asarray(rod_stress_analytic(trace.applied_u, length, h, E, weak.softening_modulus, eps0_weak))
    peak = int(np.argmax(s_fe))
    mask = (np.arange(len(s_fe)) > peak) & (s_an >= min_fraction * s_fe[peak])
    rel = np.abs(s_fe[mask] - s_an[mask]) / np.abs(s_an[mask])
    return RodComparison(trace.applied_u, s_fe, s_an, mask, float(rel.max()) if len(rel) else math.nan, trace)
