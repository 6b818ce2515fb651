import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from rve_lab.constraints import (
    X, Y, ConstraintSet, LinearConstraint, LoadProgram, SPDFactor, apply_constraints,
    build_constraints, build_dpbc, build_mpbc, eliminate)
from rve_lab.errors import InvalidSpec, RankDeficiency, SingularSystem
from rve_lab.meshing import uniform_mesh

AXIAL = LoadProgram("axial_xx", 0.1, 10)


def affine_field(mesh, A, c=(0.0, 0.0)):
    xy = mesh.node_coords()
    return (xy @ np.asarray(A, float).T + np.asarray(c, float)).ravel()


def test_counts_2x2_dpbc():
    # 9 nodes: left/right u_x and the corner pin are prescribed (7 rows);
    # of the 9 ties the two edge-corner u_x ties and one corner u_y tie
    # follow from the others
    cs = build_dpbc(uniform_mesh(1, 1, 0.5), AXIAL)
    assert (len(cs.prescribed), len(cs.constraints), cs.n_redundant) == (7, 6, 3)


def test_counts_4x4_band_one():
    cs = build_mpbc(uniform_mesh(1, 1, 0.25), 1, AXIAL)
    band = [c for c in cs.constraints if c.kind == "mpbc"]
    # 13 raw band ties (4 left/right, 4 top/bottom u_x, 5 across-layer u_y), 4 implied
    assert len(band) == 9
    assert cs.n_redundant == 3 + 4
    assert build_dpbc(uniform_mesh(1, 1, 0.25), AXIAL).tie_relations() <= cs.tie_relations()


def test_counts_angled():
    cs = build_dpbc(uniform_mesh(1, 1, 0.25), LoadProgram("angled", 0.1, 10, 30.0))
    assert (len(cs.prescribed), len(cs.constraints), cs.n_redundant) == (20, 6, 4)
    right = {(n, d): v for n, d, v in cs.prescribed if n == 4}
    assert right[(4, X)] == pytest.approx(0.1 * np.cos(np.radians(30)))
    assert right[(4, Y)] == pytest.approx(0.1 * np.sin(np.radians(30)))


def test_uniaxial_field_is_admissible():
    mesh = uniform_mesh(2.0, 1.0, 0.25)
    for cs in (build_dpbc(mesh, AXIAL), build_mpbc(mesh, 1, AXIAL)):
        u = affine_field(mesh, [[0.1 / 2.0, 0], [0, 0]])
        assert cs.max_residual(u) == 0.0
        C, g = cs.matrix()
        assert np.abs(C @ u - g).max() == 0.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4), st.lists(st.floats(-1, 1), min_size=2, max_size=2),
       st.integers(1, 2))
def test_band_ties_accept_any_affine_field(a, c, w):
    mesh = uniform_mesh(1.0, 1.0, 0.125)
    u = affine_field(mesh, np.reshape(a, (2, 2)), c)
    cs = build_mpbc(mesh, w, AXIAL)
    scale = max(1.0, np.abs(u).max())
    assert max(abs(k.residual(u)) for k in cs.constraints if k.kind == "mpbc") <= 1e-14 * scale


def test_antisymmetric_ties_reject_transverse_strain():
    mesh = uniform_mesh(1.0, 1.0, 0.125)
    u = affine_field(mesh, [[0, 0], [0, 0.01]])
    cs = build_mpbc(mesh, 1, AXIAL, antisymmetric_ties=True)
    assert max(abs(k.residual(u)) for k in cs.constraints if k.kind == "mpbc") > 1e-4


def test_band_width_limits():
    mesh = uniform_mesh(1, 1, 0.125)
    with pytest.raises(InvalidSpec):
        build_mpbc(mesh, 3, AXIAL)
    with pytest.raises(InvalidSpec):
        build_constraints(mesh, AXIAL, "fixed")


def kkt_solve(K, f, C, g):
    n, m = K.shape[0], C.shape[0]
    A = np.block([[K, C.T], [C, np.zeros((m, m))]])
    return np.linalg.solve(A, np.concatenate([f, g]))[:n]


def test_two_spring_chain_with_tie():
    # nodes 0-1-2 on a line, springs k1, k2 in x; node 0 fixed, u1 tied to u2 by u2 - u1 = 0
    k1, k2 = 3.0, 5.0
    K = np.zeros((6, 6))
    for (a, b), k in (((0, 2), k1), ((2, 4), k2)):
        K[np.ix_([a, b], [a, b])] += k * np.array([[1, -1], [-1, 1]])
    K[1, 1] = K[3, 3] = K[5, 5] = 1.0  # keep y dofs regular
    f = np.zeros(6)
    f[4] = 2.0
    cs = ConstraintSet(3, (LinearConstraint.make([(2, X, 1.0), (1, X, -1.0)]),), ((0, X, 0.0),))
    u = apply_constraints(sp.csr_matrix(K), f, cs).solve()
    # the tie short-circuits spring 2, so spring 1 carries the whole load
    assert u[2] == pytest.approx(2.0 / k1) and u[4] == pytest.approx(2.0 / k1)


def test_elimination_matches_lagrange(rng):
    n_nodes = 6
    M = rng.normal(size=(12, 12))
    K = M @ M.T + 12 * np.eye(12)
    f = rng.normal(size=12)
    cons = (LinearConstraint.make([(1, X, 1.0), (4, X, -1.0)], 0.0),
            LinearConstraint.make([(2, Y, 2.0), (3, X, 1.0), (5, Y, -0.5)], 0.3))
    cs = ConstraintSet(n_nodes, cons, ((0, X, 0.2), (0, Y, -0.1)))
    red = apply_constraints(sp.csr_matrix(K), f, cs, load_factor=0.7)
    C, g = cs.matrix()
    np.testing.assert_allclose(red.solve(), kkt_solve(K, f, C.toarray(), 0.7 * g), rtol=1e-10, atol=1e-12)


def test_conflicting_constraints_raise():
    cons = (LinearConstraint.make([(0, X, 1.0), (1, X, -1.0)], 0.0),)
    cs = ConstraintSet(2, cons, ((0, X, 0.0), (1, X, 1.0)))
    with pytest.raises(RankDeficiency):
        eliminate(cs)


def test_redundant_rows_rejected_by_eliminate():
    c = LinearConstraint.make([(0, X, 1.0), (1, X, -1.0)])
    with pytest.raises(RankDeficiency):
        eliminate(ConstraintSet(2, (c, c)))


def test_missing_restraint_is_singular():
    from rve_lab.damage_material import PhaseMaterial
    from rve_lab.fe_solver import assemble_global_stiffness
    mesh = uniform_mesh(1, 1, 0.25)
    K = assemble_global_stiffness(mesh, {0: PhaseMaterial(1.0, 0.3, 0.1, 1.0)})
    # no y restraint anywhere
    cs = ConstraintSet(mesh.n_nodes, (), tuple((int(n), X, 0.0) for n in mesh.left()))
    with pytest.raises(SingularSystem):
        apply_constraints(K, None, cs)
    # with the full periodic set the system is regular
    apply_constraints(K, None, build_dpbc(mesh, AXIAL))


def test_spd_factor_rejects_indefinite():
    with pytest.raises(SingularSystem):
        SPDFactor(sp.csr_matrix(np.diag([1.0, -1.0])))
    with pytest.raises(SingularSystem):
        SPDFactor(sp.csr_matrix(np.array([[1.0, 2.0], [0.0, 1.0]])))


def test_linear_constraint_merges_terms():
    c = LinearConstraint.make([(1, X, 1.0), (1, X, 2.0), (0, Y, -1.0)], 0.5)
    assert c.terms == ((0, Y, -1.0), (1, X, 3.0))
    with pytest.raises(InvalidSpec):
        LinearConstraint.make([(0, X, 1.0), (0, X, -1.0)])


def test_load_program():
    p = LoadProgram.from_config({"mode": "angled", "u_total": 0.2, "n_increments": 4, "theta": 90})
    np.testing.assert_allclose(p.direction, [0, 1], atol=1e-16)
    assert p.applied(2) == pytest.approx(0.1)
    with pytest.raises(InvalidSpec):
        LoadProgram("shear")
