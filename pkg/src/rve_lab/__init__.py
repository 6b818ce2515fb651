"""Damage simulation of fibre-reinforced RVEs with periodic and strain-periodic boundary conditions."""
from .constraints import (ConstraintSet, LinearConstraint, LoadProgram, apply_constraints, build_constraints,
                          build_dpbc, build_mpbc)
from .damage_material import D_MAX, DamageState, PhaseMaterial, damage_update, regularize
from .errors import RVELabError
from .fe_solver import SnapshotPlan, SolveTrace, assemble_global_stiffness, crack_band_width, solve_quasistatic
from .homogenize import (CurveMetrics, ElementFields, FdCurve, curve_metrics, detect_failure, detect_initiation,
                         hill_mandel_residual, rod_stress_analytic, volume_average_strain, volume_average_stress)
from .meshing import FIBER, MATRIX, Mesh, rasterize, uniform_mesh
from .microstructure import FiberPlacement, Microstructure, generate_rsa, min_freepath, regular_grid

__version__ = "0.1.0"
