"""Uniform bilinear-quad grids with per-element phase labels.

Indexing is row-major with ``x`` varying fastest:

* node ``(i, j)`` with ``0 <= i <= nx``, ``0 <= j <= ny`` has id ``j * (nx + 1) + i``
* element ``(i, j)`` with ``0 <= i < nx``, ``0 <= j < ny`` has id ``j * nx + i``
* element nodes are listed counter-clockwise from the lower-left corner
* dof ``2 * node`` is ``u_x`` and ``2 * node + 1`` is ``u_y``
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonconformingMesh
from .microstructure import Microstructure

MATRIX = 0
FIBER = 1


@dataclass(frozen=True)
class Mesh:
    h: float
    nx: int
    ny: int
    element_phase: np.ndarray  # (ny, nx) int8, MATRIX or FIBER

    @property
    def l(self) -> float:
        return self.nx * self.h

    @property
    def b(self) -> float:
        return self.ny * self.h

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes

    @property
    def phase(self) -> np.ndarray:
        """Flat per-element phase in element-id order."""
        return self.element_phase.reshape(-1)

    def node(self, i, j):
        return np.asarray(j) * (self.nx + 1) + np.asarray(i)

    def node_coords(self) -> np.ndarray:
        xs = np.arange(self.nx + 1) * self.h
        ys = np.arange(self.ny + 1) * self.h
        X, Y = np.meshgrid(xs, ys)
        return np.column_stack([X.ravel(), Y.ravel()])

    def connectivity(self) -> np.ndarray:
        i, j = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        i, j = i.ravel(), j.ravel()
        return np.column_stack([
            self.node(i, j), self.node(i + 1, j), self.node(i + 1, j + 1), self.node(i, j + 1)
        ])

    def element_dofs(self) -> np.ndarray:
        conn = self.connectivity()
        dofs = np.empty((len(conn), 8), dtype=np.int64)
        dofs[:, 0::2] = 2 * conn
        dofs[:, 1::2] = 2 * conn + 1
        return dofs

    def centroids(self) -> np.ndarray:
        xs = (np.arange(self.nx) + 0.5) * self.h
        ys = (np.arange(self.ny) + 0.5) * self.h
        X, Y = np.meshgrid(xs, ys)
        return np.column_stack([X.ravel(), Y.ravel()])

    # boundary and layer node sets, ordered along the edge
    def column(self, i: int) -> np.ndarray:
        return self.node(i, np.arange(self.ny + 1))

    def row(self, j: int) -> np.ndarray:
        return self.node(np.arange(self.nx + 1), j)

    def left(self) -> np.ndarray:
        return self.column(0)

    def right(self) -> np.ndarray:
        return self.column(self.nx)

    def bottom(self) -> np.ndarray:
        return self.row(0)

    def top(self) -> np.ndarray:
        return self.row(self.ny)

    def fiber_fraction(self) -> float:
        return float(np.mean(self.element_phase == FIBER))

    def phase_csv(self) -> str:
        return "\n".join(",".join(str(int(v)) for v in row) for row in self.element_phase) + "\n"


def _divisions(length: float, h: float) -> int:
    n = int(round(length / h))
    if n < 1 or abs(n * h - length) > 1e-12 * length:
        raise NonconformingMesh(f"element size {h} does not divide length {length}")
    return n


def uniform_mesh(l: float, b: float, h: float, phase=None) -> Mesh:
    nx, ny = _divisions(l, h), _divisions(b, h)
    if phase is None:
        phase = np.zeros((ny, nx), dtype=np.int8)
    return Mesh(float(h), nx, ny, np.asarray(phase, dtype=np.int8).reshape(ny, nx))


def rasterize(m: Microstructure, h: float) -> Mesh:
    """Label an element as fibre when its centroid lies in any circle or ghost."""
    l, b = m.domain
    mesh = uniform_mesh(l, b, h)
    cen = mesh.centroids()
    inside = np.zeros(len(cen), dtype=bool)
    for cx, cy, r in m.circles():
        # boundary-inclusive, with slack for round-off in the centroid coordinates
        d2 = (cen[:, 0] - cx) ** 2 + (cen[:, 1] - cy) ** 2
        inside |= d2 <= r * r * (1 + 1e-12)
    phase = np.where(inside, FIBER, MATRIX).astype(np.int8).reshape(mesh.ny, mesh.nx)
    return Mesh(mesh.h, mesh.nx, mesh.ny, phase)
