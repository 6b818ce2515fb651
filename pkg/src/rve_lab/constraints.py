"""Multipoint constraints for periodic and modified periodic boundary conditions.

All inhomogeneous right-hand sides are stored at full load and scale linearly
with the load factor ``t = i / n_increments``. Constraints are enforced by
master-slave elimination, so the reduced stiffness stays symmetric positive
definite and the recovered displacements satisfy every row to round-off.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidSpec, MeshTopologyError, RankDeficiency, SingularSystem
from .meshing import Mesh

X, Y = 0, 1


@dataclass(frozen=True)
class LinearConstraint:
    terms: tuple  # ((node, dof, coefficient), ...) sorted by (node, dof)
    rhs: float = 0.0
    kind: str = "tie"

    @classmethod
    def make(cls, terms: Iterable, rhs: float = 0.0, kind: str = "tie") -> "LinearConstraint":
        acc = defaultdict(float)
        for node, dof, coef in terms:
            acc[(int(node), int(dof))] += float(coef)
        clean = tuple(sorted((n, d, c) for (n, d), c in acc.items() if c != 0.0))
        if not clean:
            raise InvalidSpec("constraint has no non-zero terms")
        return cls(clean, float(rhs), kind)

    def residual(self, u: np.ndarray, t: float = 1.0) -> float:
        return sum(c * u[2 * n + d] for n, d, c in self.terms) - t * self.rhs


@dataclass(frozen=True)
class LoadProgram:
    mode: str = "axial_xx"  # or "angled"
    total_displacement: float = 0.5
    n_increments: int = 1000
    theta_load: float = 0.0  # degrees, angled mode only

    def __post_init__(self):
        if self.mode not in ("axial_xx", "angled"):
            raise InvalidSpec(f"unknown load mode {self.mode!r}")
        if self.n_increments < 1:
            raise InvalidSpec("n_increments must be at least 1")

    @property
    def direction(self) -> np.ndarray:
        if self.mode == "axial_xx":
            return np.array([1.0, 0.0])
        a = math.radians(self.theta_load)
        return np.array([math.cos(a), math.sin(a)])

    def applied(self, i: int) -> float:
        return self.total_displacement * i / self.n_increments

    @classmethod
    def from_config(cls, cfg: dict) -> "LoadProgram":
        return cls(
            mode=cfg.get("mode", "axial_xx"),
            total_displacement=float(cfg.get("u_total", cfg.get("total_displacement", 0.5))),
            n_increments=int(cfg.get("n_increments", 1000)),
            theta_load=float(cfg.get("theta", cfg.get("theta_load", 0.0))),
        )

    def to_config(self) -> dict:
        return {"mode": self.mode, "u_total": self.total_displacement,
                "n_increments": self.n_increments, "theta": self.theta_load}


@dataclass(frozen=True)
class ConstraintSet:
    n_nodes: int
    constraints: tuple = ()
    prescribed: tuple = ()  # ((node, dof, full-load value), ...)
    kind: str = "dpbc"
    n_redundant: int = 0

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes

    def tie_relations(self) -> set:
        """Canonical form of each tie: terms scaled so the leading coefficient is +1."""
        out = set()
        for c in self.constraints:
            lead = c.terms[0][2]
            out.add((tuple((n, d, round(k / lead, 12)) for n, d, k in c.terms), round(c.rhs / lead, 12)))
        return out

    def max_residual(self, u: np.ndarray, t: float = 1.0) -> float:
        res = [abs(c.residual(u, t)) for c in self.constraints]
        res += [abs(u[2 * n + d] - t * v) for n, d, v in self.prescribed]
        return max(res, default=0.0)

    def matrix(self):
        """Constraint rows as ``(C, g)`` with ``C u = t g``; prescribed rows first."""
        rows, cols, vals, rhs = [], [], [], []
        r = 0
        for n, d, v in self.prescribed:
            rows.append(r); cols.append(2 * n + d); vals.append(1.0); rhs.append(v)
            r += 1
        for c in self.constraints:
            for n, d, k in c.terms:
                rows.append(r); cols.append(2 * n + d); vals.append(k)
            rhs.append(c.rhs)
            r += 1
        C = sp.csr_matrix((vals, (rows, cols)), shape=(r, self.n_dofs))
        return C, np.array(rhs)


# ----------------------------------------------------------------------------
# builders
# ----------------------------------------------------------------------------

def _check_topology(mesh: Mesh):
    if len(mesh.left()) != len(mesh.right()) or len(mesh.top()) != len(mesh.bottom()):
        raise MeshTopologyError("opposite edges carry different node counts")
    if mesh.nx < 1 or mesh.ny < 1:
        raise MeshTopologyError("mesh has no elements")


def _dpbc_parts(mesh: Mesh, load: LoadProgram):
    _check_topology(mesh)
    U = load.total_displacement
    d = load.direction
    left, right, bottom, top = mesh.left(), mesh.right(), mesh.bottom(), mesh.top()

    prescribed = [(int(n), X, 0.0) for n in left]
    prescribed += [(int(n), X, U * d[0]) for n in right]
    ties = []
    if load.mode == "axial_xx":
        prescribed.append((int(mesh.node(0, 0)), Y, 0.0))  # rigid-body pin in y
        for a, b in zip(left, right):
            ties.append(LinearConstraint.make([(b, Y, 1.0), (a, Y, -1.0)], 0.0, "dpbc"))
    else:
        # the load has both components, so both are held on the left edge
        # and both are prescribed on the right edge
        prescribed += [(int(n), Y, 0.0) for n in left]
        prescribed += [(int(n), Y, U * d[1]) for n in right]
    for a, b in zip(bottom, top):
        ties.append(LinearConstraint.make([(b, X, 1.0), (a, X, -1.0)], 0.0, "dpbc"))
        ties.append(LinearConstraint.make([(b, Y, 1.0), (a, Y, -1.0)], 0.0, "dpbc"))
    return prescribed, ties


def build_dpbc(mesh: Mesh, load: LoadProgram) -> ConstraintSet:
    """Displacement periodic boundary conditions for the given load program.

    Both modes fix ``u_x = 0`` on the left edge and tie the top and bottom
    edges in both components. Axial mode prescribes ``u_x = U`` on the right
    edge, ties ``u_y`` pairwise left/right and pins ``u_y`` at the lower-left
    node. Angled mode holds both components at zero on the left edge and
    prescribes ``(U cos(theta), U sin(theta))`` on every right-edge node.
    """
    prescribed, ties = _dpbc_parts(mesh, load)
    return _deduplicate(mesh.n_nodes, prescribed, ties, "dpbc")


def build_mpbc(mesh: Mesh, band_width_elems: int, load: LoadProgram,
               antisymmetric_ties: bool = False) -> ConstraintSet:
    """Periodic displacements plus periodic strain in a band along every edge.

    For each of the ``band_width_elems`` element layers next to a boundary the
    strain of that layer is tied to the strain of the mirrored layer at the
    opposite boundary:

    * left/right bands: ``u_y`` differences along ``y`` (normal strain ``eps_yy``)
      on node columns ``k`` and ``nx - k``, ``k = 1..w``
    * top/bottom bands: ``u_x`` differences along ``x`` (``eps_xx``) on node rows
      ``k`` and ``ny - k``, and ``u_y`` differences across element layer ``e``
      and its mirror ``ny - 1 - e`` (``eps_yy``)

    The load-parallel normal strain on the loaded and constrained edges is
    left free. ``antisymmetric_ties`` flips the sign of the across-layer ties,
    which is the other possible reading of the swapped-side equations; it
    breaks compatibility with affine fields and is off by default.
    """
    w = int(band_width_elems)
    if not 1 <= w <= min(mesh.nx, mesh.ny) / 4:
        raise InvalidSpec(f"band width {w} must lie in [1, min(nx, ny)/4]")
    prescribed, ties = _dpbc_parts(mesh, load)
    nx, ny = mesh.nx, mesh.ny
    node = mesh.node
    for k in range(1, w + 1):
        for j in range(ny):
            # u_y(k,j) - u_y(k,j+1) = u_y(nx-k,j) - u_y(nx-k,j+1)
            ties.append(LinearConstraint.make([
                (node(k, j), Y, 1.0), (node(k, j + 1), Y, -1.0),
                (node(nx - k, j), Y, -1.0), (node(nx - k, j + 1), Y, 1.0)], 0.0, "mpbc"))
    for k in range(1, w + 1):
        for i in range(nx):
            ties.append(LinearConstraint.make([
                (node(i, k), X, 1.0), (node(i + 1, k), X, -1.0),
                (node(i, ny - k), X, -1.0), (node(i + 1, ny - k), X, 1.0)], 0.0, "mpbc"))
    s = -1.0 if antisymmetric_ties else 1.0
    for e in range(w):
        for i in range(nx + 1):
            # strain equality: u_y(i,e) - u_y(i,e+1) = u_y(i,ny-e-1) - u_y(i,ny-e)
            ties.append(LinearConstraint.make([
                (node(i, e), Y, 1.0), (node(i, e + 1), Y, -1.0),
                (node(i, ny - e - 1), Y, -s), (node(i, ny - e), Y, s)], 0.0, "mpbc"))
    return _deduplicate(mesh.n_nodes, prescribed, ties, "mpbc")


def build_constraints(mesh: Mesh, load: LoadProgram, bc: str = "dpbc", band_width: int = 1,
                      antisymmetric_ties: bool = False) -> ConstraintSet:
    if bc == "dpbc":
        return build_dpbc(mesh, load)
    if bc == "mpbc":
        return build_mpbc(mesh, band_width, load, antisymmetric_ties)
    raise InvalidSpec(f"unknown boundary condition {bc!r}")


def _deduplicate(n_nodes, prescribed, ties, kind) -> ConstraintSet:
    prescribed = tuple(sorted(set(prescribed)))
    seen = {}
    for n, d, v in prescribed:
        if (n, d) in seen and seen[(n, d)] != v:
            raise RankDeficiency(f"node {n} dof {d} prescribed twice with different values")
        seen[(n, d)] = v
    elim = _Eliminator(2 * n_nodes)
    for n, d, v in prescribed:
        elim.add([(2 * n + d, 1.0)], v)
    kept = []
    for c in ties:
        if elim.add([(2 * n + d, k) for n, d, k in c.terms], c.rhs):
            kept.append(c)
    return ConstraintSet(n_nodes, tuple(kept), prescribed, kind, len(ties) - len(kept))


# ----------------------------------------------------------------------------
# elimination
# ----------------------------------------------------------------------------

class _Eliminator:
    """Incremental master-slave elimination with fully reduced slave expressions."""

    def __init__(self, n_dofs: int, tol: float = 1e-10):
        self.n_dofs = n_dofs
        self.tol = tol
        self.expr: dict[int, dict[int, float]] = {}
        self.const: dict[int, float] = {}
        self.users: dict[int, set] = defaultdict(set)  # master -> slaves using it
        self.scale = 0.0

    def add(self, terms, rhs) -> bool:
        """Add ``sum(c * u[dof]) = rhs``; returns False when the row is redundant."""
        self.scale = max(self.scale, abs(rhs))
        row = defaultdict(float)
        const = float(rhs)
        for dof, c in terms:
            if dof in self.expr:
                for m, a in self.expr[dof].items():
                    row[m] += c * a
                const -= c * self.const[dof]
            else:
                row[dof] += c
        row = {m: a for m, a in row.items() if abs(a) > 1e-12}
        if not row:
            if abs(const) > self.tol * max(1.0, self.scale):
                raise RankDeficiency(f"conflicting constraint (residual {const:.3e})")
            return False
        big = max(abs(a) for a in row.values())
        slave = max(m for m, a in row.items() if abs(a) >= big * (1 - 1e-12))
        cs = row.pop(slave)
        new = {m: -a / cs for m, a in row.items()}
        new_const = const / cs
        # substitute the new slave into existing expressions
        for s in list(self.users.get(slave, ())):
            e = self.expr[s]
            a = e.pop(slave)
            for m, v in new.items():
                e[m] = e.get(m, 0.0) + a * v
                self.users[m].add(s)
            for m in [m for m, v in e.items() if abs(v) < 1e-14]:
                del e[m]
                self.users[m].discard(s)
            self.const[s] += a * new_const
        self.users.pop(slave, None)
        self.expr[slave] = new
        self.const[slave] = new_const
        for m in new:
            self.users[m].add(slave)
        return True


@dataclass
class Elimination:
    """Map ``u = T @ ubar + t * g`` from master dofs to all dofs."""

    T: sp.csr_matrix
    g: np.ndarray
    masters: np.ndarray
    slaves: np.ndarray

    def recover(self, ubar: np.ndarray, t: float = 1.0) -> np.ndarray:
        return self.T @ ubar + t * self.g

    def reduce(self, K: sp.spmatrix, f: Optional[np.ndarray] = None, t: float = 1.0):
        Tt = self.T.T.tocsr()
        K_r = (Tt @ K @ self.T).tocsc()
        rhs = -t * (K @ self.g)
        if f is not None:
            rhs = rhs + f
        return K_r, Tt @ rhs


def eliminate(cs: ConstraintSet) -> Elimination:
    elim = _Eliminator(cs.n_dofs)
    for n, d, v in cs.prescribed:
        elim.add([(2 * n + d, 1.0)], v)
    for c in cs.constraints:
        if not elim.add([(2 * n + d, k) for n, d, k in c.terms], c.rhs):
            raise RankDeficiency("constraint set is not of full row rank")
    slaves = np.array(sorted(elim.expr), dtype=np.int64)
    is_slave = np.zeros(cs.n_dofs, dtype=bool)
    is_slave[slaves] = True
    masters = np.flatnonzero(~is_slave)
    col = -np.ones(cs.n_dofs, dtype=np.int64)
    col[masters] = np.arange(len(masters))
    rows, cols, vals = list(masters), list(range(len(masters))), [1.0] * len(masters)
    g = np.zeros(cs.n_dofs)
    for s in slaves:
        for m, a in elim.expr[s].items():
            rows.append(s); cols.append(col[m]); vals.append(a)
        g[s] = elim.const[s]
    T = sp.csr_matrix((vals, (rows, cols)), shape=(cs.n_dofs, len(masters)))
    return Elimination(T, g, masters, slaves)


class SPDFactor:
    """Sparse LU without pivoting on a symmetric matrix, used as an SPD check and solver."""

    def __init__(self, K: sp.spmatrix, rel_tol: float = 1e-13):
        K = sp.csc_matrix(K)
        if K.shape[0] == 0:
            self._lu = None
            return
        asym = abs(K - K.T).max() if K.nnz else 0.0
        if asym > 1e-9 * max(abs(K).max(), 1e-300):
            raise SingularSystem("reduced stiffness is not symmetric")
        try:
            self._lu = spla.splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                 options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise SingularSystem(f"factorisation failed: {exc}") from exc
        piv = self._lu.U.diagonal()
        if np.any(piv <= rel_tol * np.max(np.abs(piv))):
            raise SingularSystem("reduced stiffness is not positive definite "
                                 "(missing rigid-body restraint?)")

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self._lu is None:
            return np.zeros(0)
        return self._lu.solve(b)


@dataclass
class ReducedSystem:
    K: sp.csc_matrix
    f: np.ndarray
    elimination: Elimination
    load_factor: float = 1.0
    _factor: Optional[SPDFactor] = field(default=None, repr=False)

    def factor(self) -> SPDFactor:
        if self._factor is None:
            self._factor = SPDFactor(self.K)
        return self._factor

    def solve(self) -> np.ndarray:
        ubar = self.factor().solve(self.f)
        return self.elimination.recover(ubar, self.load_factor)


def apply_constraints(K, f, cs: ConstraintSet, load_factor: float = 1.0) -> ReducedSystem:
    """Eliminate the constraints of ``cs`` from ``K u = f``.

    The reduced matrix is factorised immediately so a missing rigid-body
    restraint surfaces here as :class:`SingularSystem`.
    """
    elim = eliminate(cs)
    if f is None:
        f = np.zeros(cs.n_dofs)
    K_r, f_r = elim.reduce(sp.csr_matrix(K), np.asarray(f, dtype=float), load_factor)
    red = ReducedSystem(K_r, f_r, elim, load_factor)
    red.factor()
    return red
