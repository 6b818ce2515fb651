import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rve_lab.constraints import LoadProgram, build_constraints
from rve_lab.damage_material import PhaseMaterial
from rve_lab.errors import InvalidSpec, NoCrack
from rve_lab.fe_solver import (
    TRACE_HEADER, SnapshotPlan, assemble_global_stiffness, crack_band_width, element_fields,
    principal_strains, solve_quasistatic)
from rve_lab.homogenize import hill_mandel_residual
from rve_lab.meshing import uniform_mesh

ELASTIC = PhaseMaterial(1.0, 0.3, 10.0, 20.0)
STIFF = PhaseMaterial(5.0, 0.2, 10.0, 20.0, damageable=False)


def random_phase(rng, n=8, frac=0.4):
    return (rng.random((n, n)) < frac).astype(np.int8)


def test_homogeneous_axial_modulus():
    # u_y is tied periodic so the transverse strain is zero: slope E/(1-nu^2)
    mesh = uniform_mesh(2.0, 1.0, 0.25)
    load = LoadProgram("axial_xx", 0.02, 2)
    tr = solve_quasistatic(mesh, {0: ELASTIC}, build_constraints(mesh, load), load)
    slope = tr.reaction_sum[-1] / tr.applied_u[-1]
    assert slope == pytest.approx(1.0 / (1 - 0.09) * 1.0 / 2.0, rel=1e-12)
    np.testing.assert_allclose(tr.avg_strain[-1], [0.01, 0.0, 0.0], atol=1e-14)


def test_laminate_hill_mandel():
    # two phases in vertical strips: the solution is piecewise affine
    phase = np.zeros((4, 8), dtype=np.int8)
    phase[:, 4:] = 1
    mesh = uniform_mesh(2.0, 1.0, 0.25, phase)
    mats = {0: ELASTIC, 1: STIFF}
    load = LoadProgram("axial_xx", 0.02, 1)
    tr = solve_quasistatic(mesh, mats, build_constraints(mesh, load), load)
    f = element_fields(mesh, mats, tr.final_u)
    assert hill_mandel_residual(f) < 1e-12
    # series springs in x with eps_yy = 0 in both phases
    E1, E2 = 1 / (1 - 0.09), 5 / (1 - 0.04)
    assert tr.reaction_sum[-1] == pytest.approx(0.02 / (1 / E1 + 1 / E2), rel=1e-10)


@pytest.mark.parametrize("bc", ["dpbc", "mpbc"])
@pytest.mark.parametrize("mode,theta", [("axial_xx", 0.0), ("angled", 30.0)])
def test_duality_and_tie_residuals(rng, bc, mode, theta):
    mesh = uniform_mesh(1.0, 1.0, 0.125, random_phase(rng))
    mats = {0: PhaseMaterial(1.0, 0.3, 0.02, 0.2), 1: STIFF}
    load = LoadProgram(mode, 0.1, 20, theta)
    cs = build_constraints(mesh, load, bc)
    tr = solve_quasistatic(mesh, mats, cs, load)
    d = load.direction
    dual = mesh.b * (tr.avg_stress[:, 0] * d[0] + tr.avg_stress[:, 2] * d[1])
    np.testing.assert_allclose(tr.reaction_sum, dual, atol=1e-8 * max(1.0, np.abs(dual).max()))
    assert cs.max_residual(tr.final_u) <= 1e-10
    assert tr.max_D[-1] > 0


def test_hill_mandel_random_elastic(rng):
    mesh = uniform_mesh(1.0, 1.0, 0.125, random_phase(rng))
    mats = {0: ELASTIC, 1: STIFF}
    load = LoadProgram("axial_xx", 0.05, 1)
    tr = solve_quasistatic(mesh, mats, build_constraints(mesh, load), load)
    assert hill_mandel_residual(element_fields(mesh, mats, tr.final_u)) < 1e-10


def test_stiffness_scales_with_integrity():
    mesh = uniform_mesh(1.0, 1.0, 0.25)
    K = assemble_global_stiffness(mesh, {0: ELASTIC})
    from rve_lab.damage_material import DamageState
    Kd = assemble_global_stiffness(mesh, {0: ELASTIC}, DamageState(np.full(16, 0.5), np.zeros(16)))
    assert abs(Kd - 0.5 * K).max() < 1e-15
    assert abs(K - K.T).max() < 1e-15 * abs(K).max()


def test_principal_strains_include_thickness():
    p = principal_strains(np.array([[0.01, 0.0, 0.0]]), np.array([0.25]))
    np.testing.assert_allclose(sorted(p[0]), sorted([0.01, 0.0, -0.25 / 0.75 * 0.01]), atol=1e-16)
    q = principal_strains(np.array([[0.0, 0.0, 0.02]]), np.array([0.3]))
    np.testing.assert_allclose(sorted(q[0])[-1], 0.01)


def softening_strip(n=20, n_inc=200, u=0.06):
    phase = np.zeros((1, n), dtype=np.int8)
    phase[0, n // 2] = 1
    mesh = uniform_mesh(1.0, 1.0 / n, 1.0 / n, phase)
    mats = {0: PhaseMaterial(1.0, 0.0, 0.02, 0.3), 1: PhaseMaterial(1.0, 0.0, 0.01, 0.3)}
    load = LoadProgram("axial_xx", u, n_inc)
    return mesh, mats, solve_quasistatic(mesh, mats, build_constraints(mesh, load), load)


def test_damage_is_monotone_and_localised():
    mesh, mats, tr = softening_strip()
    assert np.all(np.diff(tr.max_D) >= 0)
    assert np.all(np.diff(tr.n_damaged) >= 0)
    assert tr.final_D[0, 10] > 0.9
    assert np.count_nonzero(tr.final_D) == 1
    assert np.all(np.diff(tr.dissipated) >= -1e-15)


def test_energy_balance_converges_in_strip():
    # W_ext = stored + dissipated holds up to a first-order increment error
    gaps, ratios = [], []
    for n_inc in (500, 2000):
        mesh, mats, tr = softening_strip(n_inc=n_inc)
        gaps.append(tr.external_work() / (tr.strain_energy[-1] + tr.dissipated[-1]) - 1)
        # one fully damaged element: width h, cross-section b
        ratios.append(tr.dissipated[-1] / (0.5 * 1.0 * mesh.h * 0.01 * 0.3 * mesh.b))
    assert abs(gaps[1]) < 0.025
    assert 3.5 < gaps[0] / gaps[1] < 4.5
    assert abs(ratios[1] - 1) < 0.025
    assert 3.5 < (ratios[0] - 1) / (ratios[1] - 1) < 4.5


def test_snapshots_and_csv():
    mesh, mats, tr = softening_strip()
    labels = [s.label for s in tr.snapshots]
    assert "first_damage" in labels and "peak" in labels and "final" in labels
    assert sum(lab.startswith("inc_") for lab in labels) == 9
    assert tr.snapshot("final").D.shape == (1, 20)
    lines = tr.to_csv().strip().split("\n")
    assert lines[0].split(",") == TRACE_HEADER
    assert len(lines) == tr.n_increments + 2
    assert SnapshotPlan(every_fraction=None, final=False, increments=(3, 99)).scheduled(10) == {3}


def test_stop_after_failure():
    mesh = uniform_mesh(1.0, 0.05, 0.05, np.zeros((1, 20), dtype=np.int8))
    mats = {0: PhaseMaterial(1.0, 0.0, 0.01, 0.1)}
    load = LoadProgram("axial_xx", 0.2, 400)
    tr = solve_quasistatic(mesh, mats, build_constraints(mesh, load), load, stop_after_failure=0.01)
    assert tr.n_increments < 400
    assert tr.reaction_sum[-1] <= 0.01 * tr.reaction_sum.max()


def test_crack_band_width_synthetic():
    D = np.zeros((10, 10))
    D[4, :] = 1.0
    assert crack_band_width(D) == 1.0
    D[5, :] = 0.995
    assert crack_band_width(D) == 2.0
    V = np.zeros((10, 10))
    V[:, 7] = 1.0
    assert crack_band_width(V) == 1.0
    Z = np.zeros((10, 10))
    Z[np.arange(10), np.arange(10)] = 1.0  # a diagonal chain is one element thick
    assert crack_band_width(Z) == 1.0
    with pytest.raises(NoCrack):
        crack_band_width(np.full((3, 3), 0.5))
    with pytest.raises(InvalidSpec):
        crack_band_width(np.ones(4))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 9), st.integers(1, 3))
def test_crack_band_width_straight_band(row, thickness):
    D = np.zeros((12, 12))
    D[row:row + thickness, :] = 1.0
    assert crack_band_width(D) == thickness
