"""Plane-stress Q4 assembly and the incremental, displacement-controlled damage solve.

One damage value lives in each element and is driven by the strain at the
element centroid. Each increment solves the secant problem with the damage of
the previous increment and then updates damage once (a staggered explicit
scheme). Optional fixed-point sweeps inside the increment can be switched on
when an equilibrium-converged path is wanted.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
import scipy.sparse as sp

from .constraints import ConstraintSet, LoadProgram, SPDFactor, eliminate
from .damage_material import D_MAX, DamageState, PhaseMaterial, damage_update, plane_stress_matrix
from .errors import InvalidSpec, NoCrack
from .homogenize import ElementFields
from .meshing import Mesh

log = logging.getLogger(__name__)

_GAUSS = 1.0 / np.sqrt(3.0)
_XI = np.array([-1.0, 1.0, 1.0, -1.0])
_ETA = np.array([-1.0, -1.0, 1.0, 1.0])

TRACE_HEADER = ["increment", "applied_u", "reaction_sum", "avg_sxx", "avg_syy", "avg_sxy",
                "avg_exx", "avg_eyy", "avg_gxy", "n_damaged", "max_D"]


def q4_B(xi: float, eta: float, hx: float, hy: float) -> np.ndarray:
    """Strain-displacement matrix of a rectangular Q4 element (engineering shear)."""
    dN_dx = _XI * (1 + eta * _ETA) / (2 * hx)
    dN_dy = _ETA * (1 + xi * _XI) / (2 * hy)
    B = np.zeros((3, 8))
    B[0, 0::2] = dN_dx
    B[1, 1::2] = dN_dy
    B[2, 0::2] = dN_dy
    B[2, 1::2] = dN_dx
    return B


def q4_stiffness(C: np.ndarray, hx: float, hy: Optional[float] = None, thickness: float = 1.0) -> np.ndarray:
    """8x8 stiffness of a rectangular element with 2x2 Gauss quadrature."""
    hy = hx if hy is None else hy
    detJ = hx * hy / 4
    K = np.zeros((8, 8))
    for xi in (-_GAUSS, _GAUSS):
        for eta in (-_GAUSS, _GAUSS):
            B = q4_B(xi, eta, hx, hy)
            K += B.T @ C @ B * detJ * thickness
    return K


class _Assembler:
    """Fixed sparsity pattern; each assembly is a weighted bincount into CSR data."""

    def __init__(self, mesh: Mesh, materials: Mapping[int, PhaseMaterial]):
        self.mesh = mesh
        self.dofs = mesh.element_dofs()
        self.phase = mesh.phase.astype(np.int64)
        missing = set(np.unique(self.phase)) - set(materials)
        if missing:
            raise InvalidSpec(f"no material given for phase(s) {sorted(missing)}")
        n_ph = int(self.phase.max()) + 1
        self.C = np.zeros((n_ph, 3, 3))
        self.Ke = np.zeros((n_ph, 8, 8))
        self.nu = np.zeros(n_ph)
        for p, mat in materials.items():
            if p < n_ph:
                self.C[p] = plane_stress_matrix(mat.E, mat.nu)
                self.Ke[p] = q4_stiffness(self.C[p], mesh.h)
                self.nu[p] = mat.nu
        n = mesh.n_dofs
        rows = np.repeat(self.dofs, 8, axis=1).ravel()
        cols = np.tile(self.dofs, (1, 8)).ravel()
        keys = rows * n + cols
        uniq, self.inverse = np.unique(keys, return_inverse=True)
        r, c = np.divmod(uniq, n)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, r + 1, 1)
        self.indptr = np.cumsum(indptr)
        self.indices = c
        self.nnz = len(uniq)
        self.B0 = q4_B(0.0, 0.0, mesh.h, mesh.h)
        self.volume = mesh.h * mesh.h

    def stiffness(self, scale: np.ndarray) -> sp.csr_matrix:
        vals = (scale[:, None, None] * self.Ke[self.phase]).ravel()
        data = np.bincount(self.inverse, weights=vals, minlength=self.nnz)
        n = self.mesh.n_dofs
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(n, n))

    def centroid_strains(self, u: np.ndarray) -> np.ndarray:
        return u[self.dofs] @ self.B0.T

    def element_energy(self, u: np.ndarray, scale: Optional[np.ndarray] = None) -> np.ndarray:
        ue = u[self.dofs]
        w = 0.5 * np.einsum("ei,eij,ej->e", ue, self.Ke[self.phase], ue)
        return w if scale is None else scale * w

    def fields(self, u: np.ndarray, D: np.ndarray) -> ElementFields:
        scale = 1.0 - D
        eps = self.centroid_strains(u)
        sig = scale[:, None] * np.einsum("eij,ej->ei", self.C[self.phase], eps)
        energy = self.element_energy(u, scale) / self.volume
        return ElementFields(sig, eps, energy, np.full(len(D), self.volume))


def assemble_global_stiffness(mesh: Mesh, materials: Mapping[int, PhaseMaterial],
                              states=None) -> sp.csr_matrix:
    """Global secant stiffness ``sum_e (1 - D_e) K_e``.

    ``states`` may be a :class:`DamageState`, a damage array or ``None``.
    """
    D = _damage_array(states, mesh.n_elements)
    return _Assembler(mesh, materials).stiffness(1.0 - D)


def _damage_array(states, n: int) -> np.ndarray:
    if states is None:
        return np.zeros(n)
    D = np.asarray(states.D if isinstance(states, DamageState) else states, dtype=float).reshape(-1)
    if D.shape != (n,):
        raise InvalidSpec(f"expected {n} damage values, got {D.shape[0]}")
    return D


def principal_strains(eps: np.ndarray, nu) -> np.ndarray:
    """In-plane principal strains plus the plane-stress out-of-plane strain.

    ``eps`` holds Voigt rows ``(exx, eyy, gxy)``; returns shape ``(n, 3)``.
    """
    eps = np.atleast_2d(eps)
    exx, eyy, gxy = eps[:, 0], eps[:, 1], eps[:, 2]
    mean = 0.5 * (exx + eyy)
    rad = np.hypot(0.5 * (exx - eyy), 0.5 * gxy)
    nu = np.broadcast_to(np.asarray(nu, dtype=float), mean.shape)
    ezz = -nu / (1 - nu) * (exx + eyy)
    return np.column_stack([mean + rad, mean - rad, ezz])


def _trapz(y, x) -> float:
    fn = getattr(np, "trapezoid", None) or np.trapz
    return float(fn(y, x))


@dataclass
class SnapshotPlan:
    first_damage: bool = True
    peak: bool = True
    every_fraction: Optional[float] = 0.1
    final: bool = True
    increments: tuple = ()

    def scheduled(self, n: int) -> set:
        out = {int(i) for i in self.increments if 0 <= i <= n}
        if self.every_fraction:
            step = max(1, int(round(self.every_fraction * n)))
            out |= set(range(step, n + 1, step))
        if self.final:
            out.add(n)
        return out


@dataclass(frozen=True)
class Snapshot:
    label: str
    increment: int
    D: np.ndarray  # (ny, nx)


@dataclass
class SolveTrace:
    applied_u: np.ndarray
    reaction_sum: np.ndarray
    avg_stress: np.ndarray
    avg_strain: np.ndarray
    n_damaged: np.ndarray
    max_D: np.ndarray
    step_warning: np.ndarray
    dissipated: np.ndarray  # cumulative, per increment
    strain_energy: np.ndarray
    snapshots: list = field(default_factory=list)
    final_D: Optional[np.ndarray] = None
    final_u: Optional[np.ndarray] = None
    final_kappa: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def n_increments(self) -> int:
        return len(self.applied_u) - 1

    def snapshot(self, label: str) -> Snapshot:
        for s in self.snapshots:
            if s.label == label:
                return s
        raise KeyError(label)

    def external_work(self) -> float:
        """Trapezoidal area under the reaction/displacement record."""
        return _trapz(self.reaction_sum, self.applied_u)

    def rows(self):
        for i in range(len(self.applied_u)):
            yield [i, self.applied_u[i], self.reaction_sum[i], *self.avg_stress[i],
                   *self.avg_strain[i], int(self.n_damaged[i]), self.max_D[i]]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for row in self.rows():
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
        return buf.getvalue()


def solve_quasistatic(mesh: Mesh, materials: Mapping[int, PhaseMaterial], cs: ConstraintSet,
                      load: LoadProgram, snapshot_plan: Optional[SnapshotPlan] = None, *,
                      stagger_iterations: int = 1, stagger_tol: float = 1e-12,
                      stop_after_failure: Optional[float] = None,
                      reaction_direction=None) -> SolveTrace:
    """Run the incremental solve and return the full trace.

    With ``stagger_iterations > 1`` damage and displacement are iterated to a
    fixed point (Aitken-relaxed) inside each increment, stopping when the
    largest damage change falls below ``stagger_tol``. ``stop_after_failure``
    ends the run early once the force has dropped below that fraction of the
    peak; the remaining rows are filled by continuing with zero work only if
    requested, otherwise the trace is shorter.
    """
    plan = snapshot_plan or SnapshotPlan()
    asm = _Assembler(mesh, materials)
    elim = eliminate(cs)
    Tt = elim.T.T.tocsr()
    n = load.n_increments
    n_el = mesh.n_elements
    damageable = np.array([materials[int(p)].damageable for p in asm.phase])
    dmg_idx = np.flatnonzero(damageable)
    by_phase = {}
    for p in np.unique(asm.phase[dmg_idx]):
        by_phase[int(p)] = (dmg_idx[asm.phase[dmg_idx] == p], materials[int(p)])
    nu_el = asm.nu[asm.phase]
    left_dofs = 2 * mesh.left()
    direction = load.direction if reaction_direction is None else np.asarray(reaction_direction, float)

    D = np.zeros(n_el)
    kappa = np.zeros(n_el)
    scheduled = plan.scheduled(n)

    out = {k: [] for k in ("u", "F", "sig", "eps", "nd", "maxD", "warn", "diss", "W")}
    snaps = []
    seen_damage = False
    peak_F, peak_D, peak_i = -np.inf, None, 0
    dissipated = 0.0

    def record(t, u, K, Dcur):
        f_int = K @ u
        reac = 0.0 - (f_int[left_dofs].sum() * direction[0] + f_int[left_dofs + 1].sum() * direction[1])
        flds = asm.fields(u, Dcur)
        out["u"].append(t * load.total_displacement)
        out["F"].append(reac)
        out["sig"].append(flds.stress.mean(axis=0))
        out["eps"].append(flds.strain.mean(axis=0))
        out["W"].append(float(flds.energy_density @ flds.volume))
        return reac

    K = asm.stiffness(np.ones(n_el))
    record(0.0, np.zeros(mesh.n_dofs), K, D)
    out["nd"].append(0)
    out["maxD"].append(0.0)
    out["warn"].append(False)
    out["diss"].append(0.0)

    cache_D = None
    factor = None
    Kr_rhs_base = None
    u = np.zeros(mesh.n_dofs)
    for i in range(1, n + 1):
        t = i / n
        D_trial = D
        prev_r = None
        omega = 1.0
        for it in range(max(1, stagger_iterations)):
            if cache_D is None or not np.array_equal(cache_D, D_trial):
                K = asm.stiffness(1.0 - D_trial)
                K_r = (Tt @ K @ elim.T).tocsc()
                factor = SPDFactor(K_r)
                Kr_rhs_base = -(Tt @ (K @ elim.g))
                cache_D = D_trial.copy()
            u = elim.recover(factor.solve(t * Kr_rhs_base), t)
            eps = asm.centroid_strains(u)
            pr = principal_strains(eps[dmg_idx], nu_el[dmg_idx])
            D_new = D.copy()
            kappa_new = kappa.copy()
            for p, (idx, mat) in by_phase.items():
                sel = np.searchsorted(dmg_idx, idx)
                st = damage_update(pr[sel], DamageState(D[idx], kappa[idx]), mat)
                D_new[idx] = st.D
                kappa_new[idx] = st.kappa_hist
            if stagger_iterations <= 1:
                break
            r = D_new - D_trial
            if np.max(np.abs(r), initial=0.0) <= stagger_tol:
                break
            if prev_r is not None:
                dr = r - prev_r
                den = dr @ dr
                if den > 0:
                    omega = -omega * (prev_r @ dr) / den
            prev_r = r
            D_trial = np.clip(D_trial + omega * r, D, D_MAX)
        else:
            log.debug("increment %d: stagger loop hit the iteration cap", i)

        reac = record(t, u, K, D_trial)
        dD = D_new - D
        Y = asm.element_energy(u)
        dissipated += float(Y @ dD)
        warn = bool(dD.max(initial=0.0) > 0.5)
        D, kappa = D_new, kappa_new
        nd = int(np.count_nonzero(D > 0))
        out["nd"].append(nd)
        out["maxD"].append(float(D.max(initial=0.0)))
        out["warn"].append(warn)
        out["diss"].append(dissipated)
        if warn:
            log.warning("increment %d: damage jumped by %.3f in one step", i, dD.max())

        if nd and not seen_damage:
            seen_damage = True
            if plan.first_damage:
                snaps.append(Snapshot("first_damage", i, D.reshape(mesh.ny, mesh.nx).copy()))
        if reac > peak_F:
            peak_F, peak_D, peak_i = reac, D.copy(), i
        if i in scheduled:
            label = "final" if (i == n and plan.final) else f"inc_{i}"
            snaps.append(Snapshot(label, i, D.reshape(mesh.ny, mesh.nx).copy()))
        if stop_after_failure is not None and seen_damage and peak_F > 0 \
                and reac <= stop_after_failure * peak_F and i > peak_i:
            if plan.final:
                snaps.append(Snapshot("final", i, D.reshape(mesh.ny, mesh.nx).copy()))
            break

    if plan.peak and peak_D is not None:
        snaps.append(Snapshot("peak", peak_i, peak_D.reshape(mesh.ny, mesh.nx)))
    snaps.sort(key=lambda s: (s.increment, s.label))

    return SolveTrace(
        applied_u=np.array(out["u"]),
        reaction_sum=np.array(out["F"]),
        avg_stress=np.array(out["sig"]),
        avg_strain=np.array(out["eps"]),
        n_damaged=np.array(out["nd"], dtype=np.int64),
        max_D=np.array(out["maxD"]),
        step_warning=np.array(out["warn"]),
        dissipated=np.array(out["diss"]),
        strain_energy=np.array(out["W"]),
        snapshots=snaps,
        final_D=D.reshape(mesh.ny, mesh.nx).copy(),
        final_u=u,
        final_kappa=kappa.reshape(mesh.ny, mesh.nx).copy(),
        meta={"nx": mesh.nx, "ny": mesh.ny, "h": mesh.h, "l": mesh.l, "b": mesh.b,
              "mode": load.mode, "theta": load.theta_load, "bc": cs.kind},
    )


def element_fields(mesh: Mesh, materials: Mapping[int, PhaseMaterial], u: np.ndarray,
                   states=None) -> ElementFields:
    return _Assembler(mesh, materials).fields(np.asarray(u, float), _damage_array(states, mesh.n_elements))


def crack_band_width(D, threshold: float = 0.99) -> float:
    """Median thickness, in elements, of the runs of ``D >= threshold``.

    The field is a ``(ny, nx)`` array. Runs are counted along the direction
    across the crack: along columns when the damaged set spans more columns
    than rows (a crack running in ``x``), along rows otherwise.
    """
    D = np.asarray(D, dtype=float)
    if D.ndim != 2:
        raise InvalidSpec("damage field must be a 2D (ny, nx) array")
    mask = D >= threshold
    if not mask.any():
        raise NoCrack(f"no element reaches D >= {threshold}")
    rows_hit = np.flatnonzero(mask.any(axis=1))
    cols_hit = np.flatnonzero(mask.any(axis=0))
    lines = mask.T if len(cols_hit) >= len(rows_hit) else mask
    runs = []
    for line in lines:
        if not line.any():
            continue
        padded = np.concatenate([[False], line, [False]]).astype(np.int8)
        edges = np.flatnonzero(np.diff(padded))
        runs.extend(edges[1::2] - edges[0::2])
    return float(np.median(runs))
