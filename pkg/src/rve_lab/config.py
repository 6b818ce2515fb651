"""Run configuration, default materials and the generate-mesh-solve pipeline."""
from __future__ import annotations

import copy
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .constraints import LoadProgram, build_constraints
from .damage_material import PhaseMaterial, regularize
from .errors import InvalidSpec, NeverDamaged
from .fe_solver import SnapshotPlan, SolveTrace, solve_quasistatic
from .homogenize import CurveMetrics, FdCurve, curve_metrics
from .meshing import FIBER, MATRIX, Mesh, rasterize
from .microstructure import (Microstructure, build_microstructure, generate_rsa, regular_grid,
                             with_fiber_moved)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

# fibre/matrix stiffness ratio of 4 puts the initiation strain of the
# 1.333r regular array at 0.069 with eps0 = 0.125
MATRIX_DEFAULT = {"E": 1.0, "nu": 0.3, "eps0": 0.125, "epsf": 1.5, "damageable": True}
FIBER_DEFAULT = {"E": 4.0, "nu": 0.2, "eps0": 1.0, "epsf": 2.0, "damageable": False}


def load_config_file(path) -> dict:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".toml":
        return tomllib.loads(text)
    return json.loads(text)


def materials_from(cfg: Optional[dict] = None, h: Optional[float] = None,
                   regularization: Optional[dict] = None) -> dict:
    """Phase materials keyed by phase label, with regularisation applied for element size ``h``."""
    cfg = cfg or {}
    mats = {}
    for phase, name, default in ((MATRIX, "matrix", MATRIX_DEFAULT), (FIBER, "fiber", FIBER_DEFAULT)):
        block = dict(default)
        block.update(cfg.get(name, {}))
        mats[phase] = PhaseMaterial.from_config(block)
    reg = regularization or {}
    mode = reg.get("mode", "none")
    if mode != "none":
        if h is None:
            raise InvalidSpec("regularisation needs the element size")
        lam = float(reg.get("lambda", 0.0))
        mats = {p: regularize(m, mode, lam, h) for p, m in mats.items()}
    return mats


def four_fiber_rve() -> Microstructure:
    """Unit cell with four equal fibres at a total volume fraction of 0.37."""
    r = math.sqrt(0.37 / (4 * math.pi))
    centers = [(0.25, 0.25), (0.76, 0.30), (0.28, 0.76), (0.73, 0.78)]
    return build_microstructure(centers, r, (1.0, 1.0), target_vf=0.37)


def shifted_grid(n: int = 5, radius: float = 0.06, shift: float = 0.0, index: Optional[int] = None,
                 domain=(1.0, 1.0)) -> Microstructure:
    """Square array with one fibre moved towards its left neighbour by ``shift``."""
    g = regular_grid(n, n, radius, domain)
    if shift:
        index = (n // 2) * n + n // 2 if index is None else index
        g = with_fiber_moved(g, index, -shift)
    return g


def microstructure_from(spec: dict, seed: Optional[int] = None, base_dir: Optional[Path] = None) -> Microstructure:
    kind = spec.get("kind", "rsa")
    domain = tuple(spec.get("domain", (1.0, 1.0)))
    if kind == "rsa":
        return generate_rsa(int(spec["n_fibers"]), float(spec["vf"]), domain,
                            seed=int(spec.get("seed", 0) if seed is None else seed),
                            max_attempts=int(spec.get("max_attempts", 100_000)),
                            strategy=spec.get("strategy", "rsa"))
    if kind == "grid":
        return shifted_grid(int(spec.get("n", 5)), float(spec["radius"]), float(spec.get("shift", 0.0)),
                            spec.get("index"), domain)
    if kind == "four_fiber":
        return four_fiber_rve()
    if kind == "file":
        p = Path(spec["path"])
        if base_dir is not None and not p.is_absolute():
            p = base_dir / p
        return Microstructure.from_json(p.read_text())
    if kind == "homogeneous":
        return Microstructure(domain, (), 0.0)
    raise InvalidSpec(f"unknown microstructure kind {kind!r}")


@dataclass
class RunConfig:
    microstructure: dict
    h: float
    materials: dict = field(default_factory=dict)
    regularization: dict = field(default_factory=lambda: {"mode": "none"})
    bc: str = "dpbc"
    band_width: int = 1
    antisymmetric_ties: bool = False
    load: dict = field(default_factory=dict)
    out_dir: str = "out"
    seed: int = 0
    f_fail: float = 0.01
    stagger_iterations: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise InvalidSpec(f"unknown config keys: {sorted(extra)}")
        if "microstructure" not in d or "h" not in d:
            raise InvalidSpec("config needs 'microstructure' and 'h'")
        cfg = cls(**copy.deepcopy(d))
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return copy.deepcopy(self.__dict__)

    def validate(self) -> None:
        if not self.h > 0:
            raise InvalidSpec("h must be positive")
        if self.bc not in ("dpbc", "mpbc"):
            raise InvalidSpec(f"bc must be dpbc or mpbc, got {self.bc!r}")
        if self.regularization.get("mode", "none") not in ("none", "sqrt", "brekelmans"):
            raise InvalidSpec("regularization mode must be none, sqrt or brekelmans")
        if self.regularization.get("mode", "none") != "none" and not self.regularization.get("lambda", 0) > 0:
            raise InvalidSpec("regularization needs a positive lambda")
        if not 0 < self.f_fail < 1:
            raise InvalidSpec("f_fail must lie in (0, 1)")
        self.load_program()
        self.phase_materials()

    def load_program(self) -> LoadProgram:
        return LoadProgram.from_config(self.load)

    def phase_materials(self) -> dict:
        return materials_from(self.materials, self.h, self.regularization)


@dataclass
class CaseResult:
    microstructure: Microstructure
    mesh: Mesh
    trace: SolveTrace
    curve: FdCurve
    metrics: Optional[CurveMetrics]
    notes: list = field(default_factory=list)


def run_case(cfg: RunConfig, ms: Optional[Microstructure] = None,
             snapshot_plan: Optional[SnapshotPlan] = None) -> CaseResult:
    """Generate (unless given), rasterise, constrain, solve and extract metrics."""
    ms = ms if ms is not None else microstructure_from(cfg.microstructure, cfg.seed)
    mesh = rasterize(ms, cfg.h)
    load = cfg.load_program()
    mats = cfg.phase_materials()
    cs = build_constraints(mesh, load, cfg.bc, cfg.band_width, cfg.antisymmetric_ties)
    trace = solve_quasistatic(mesh, mats, cs, load, snapshot_plan,
                              stagger_iterations=cfg.stagger_iterations)
    meta = {"Vf": ms.target_vf, "n_fibers": ms.n_fibers, "h": cfg.h, "bc_type": cfg.bc,
            "seed": cfg.seed, "l": mesh.l}
    first = np.flatnonzero(trace.n_damaged > 0)
    if len(first):
        meta["d_init"] = float(trace.applied_u[first[0]])
    curve = FdCurve(trace.applied_u, trace.reaction_sum, meta)
    notes = []
    try:
        metrics = curve_metrics(trace, curve, cfg.f_fail)
    except NeverDamaged as exc:
        metrics = None
        notes.append(str(exc))
    return CaseResult(ms, mesh, trace, curve, metrics, notes)


def as_jsonable(obj: Any):
    if isinstance(obj, dict):
        return {str(k): as_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [as_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
