import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rve_lab.damage_material import (
    D_MAX, DamageState, PhaseMaterial, damage_from_kappa, damage_update, dissipated_energy_per_area,
    energy_budget, failure_strain_for, plane_stress_matrix, regularize, regularize_brekelmans,
    regularize_sqrt, secant_stiffness, uniaxial_stress)
from rve_lab.errors import InvalidSpec

materials = st.builds(
    lambda E, kD, ratio: PhaseMaterial(E, 0.25, kD, kD * ratio),
    st.floats(0.1, 100.0), st.floats(1e-4, 1.0), st.floats(1.01, 50.0))


def test_onset_and_full_damage(matrix_mat):
    assert damage_from_kappa(matrix_mat.kappa_D, matrix_mat) == 0.0
    assert damage_from_kappa(matrix_mat.kappa_F, matrix_mat) == D_MAX
    assert damage_from_kappa(10 * matrix_mat.kappa_F, matrix_mat) == D_MAX
    assert damage_from_kappa(0.0, matrix_mat) == 0.0


def test_secant_stress_lies_on_softening_line(matrix_mat, rng):
    m = matrix_mat
    kappa = rng.uniform(m.kappa_D, m.kappa_F, 100)
    line = m.E * m.kappa_D * (m.kappa_F - kappa) / (m.kappa_F - m.kappa_D)
    sig = uniaxial_stress(kappa, m)
    # near kappa_F the line value goes to zero; D_MAX floors the stress at (1-D_MAX) E kappa
    floor = (1 - D_MAX) * m.E * kappa
    live = line > floor
    assert live.sum() >= 99
    np.testing.assert_allclose(sig[live], line[live], rtol=1e-12)


@given(materials, st.lists(st.floats(0.0, 1.0), min_size=2, max_size=20))
def test_damage_is_monotone_in_kappa(mat, fractions):
    kappa = np.sort(np.array(fractions)) * 2 * mat.kappa_F
    D = damage_from_kappa(kappa, mat)
    assert np.all(np.diff(D) >= -1e-15)
    assert np.all((D >= 0) & (D <= D_MAX))


@given(materials, st.lists(st.floats(-1.0, 3.0), min_size=1, max_size=30))
def test_history_never_decreases(mat, path):
    state = DamageState.virgin(1)
    for s in path:
        eps = np.array([[s * mat.kappa_F, 0.0, 0.0]])
        new = damage_update(eps, state, mat)
        assert new.D[0] >= state.D[0]
        assert new.kappa_hist[0] >= state.kappa_hist[0]
        state = new


def test_unloading_returns_along_secant(matrix_mat):
    m = matrix_mat
    k_max = 0.5 * (m.kappa_D + m.kappa_F)
    st_ = damage_update(np.array([[k_max, 0, 0]]), DamageState.virgin(1), m)
    D = st_.D[0]
    for eps in np.linspace(k_max, 0, 7):
        again = damage_update(np.array([[eps, 0, 0]]), st_, m)
        assert again.D[0] == D
        sigma = (1 - again.D[0]) * m.E * eps
        assert sigma == pytest.approx(uniaxial_stress(k_max, m) * eps / k_max, rel=1e-12)


def test_compressive_principal_strains_do_not_damage(matrix_mat):
    st_ = damage_update(np.array([[-1.0, -2.0, -0.5]]), DamageState.virgin(1), matrix_mat)
    assert st_.D[0] == 0.0 and st_.kappa_hist[0] == 0.0


@given(materials)
def test_area_under_uniaxial_curve(mat):
    # trapezoid is exact on the two linear pieces once the knot kappa_D is a node
    k = np.concatenate([np.linspace(0, mat.kappa_D, 3), np.linspace(mat.kappa_D, mat.kappa_F, 3)[1:]])
    line = np.where(k <= mat.kappa_D, mat.E * k,
                    mat.E * mat.kappa_D * (mat.kappa_F - k) / (mat.kappa_F - mat.kappa_D))
    area = float(np.sum(0.5 * (line[1:] + line[:-1]) * np.diff(k)))
    expected = 0.5 * mat.E * mat.kappa_D * mat.kappa_F
    assert area == pytest.approx(expected, rel=1e-10)
    assert dissipated_energy_per_area(mat, 1.0) == pytest.approx(expected, rel=1e-10)


def test_area_of_computed_stress_curve(matrix_mat):
    m = matrix_mat
    k = np.linspace(0, m.kappa_F, 200_001)
    sig = uniaxial_stress(k, m)
    area = float(np.sum(0.5 * (sig[1:] + sig[:-1]) * np.diff(k)))
    assert area == pytest.approx(0.5 * m.E * m.kappa_D * m.kappa_F, rel=1e-6)


def test_plane_stress_matrix_values():
    C = plane_stress_matrix(2.0, 0.25)
    c = 2.0 / (1 - 0.0625)
    np.testing.assert_allclose(C, c * np.array([[1, 0.25, 0], [0.25, 1, 0], [0, 0, 0.375]]))
    np.testing.assert_allclose(secant_stiffness(0.4, PhaseMaterial(2.0, 0.25, 0.1, 1.0)), 0.6 * C)


@pytest.mark.parametrize("kw", [dict(E=0.0), dict(nu=0.5), dict(kappa_D=0.2, kappa_F=0.1)])
def test_invalid_material(kw):
    base = dict(E=1.0, nu=0.3, kappa_D=0.1, kappa_F=1.0)
    base.update(kw)
    with pytest.raises(InvalidSpec):
        PhaseMaterial(**base)


def test_regularisation_invariants():
    lam = 0.01
    for h in (0.005, 0.01, 0.02, 0.04):
        assert math.sqrt(h) * regularize_sqrt(3.46, lam, h) == pytest.approx(math.sqrt(lam) * 3.46)
        assert h * regularize_brekelmans(3.0, lam, h) == pytest.approx(lam * 3.0)
        assert math.sqrt(h) * failure_strain_for(h, "sqrt", 0.346) == pytest.approx(0.346)
        assert h * failure_strain_for(h, "brekelmans", 0.03) == pytest.approx(0.03)
    with pytest.raises(InvalidSpec):
        failure_strain_for(0.01, "other", 1.0)


def test_regularize_skips_rigid_phase(matrix_mat, fiber_mat):
    assert regularize(fiber_mat, "sqrt", 0.01, 0.04) is fiber_mat
    r = regularize(matrix_mat, "brekelmans", 0.01, 0.02)
    assert r.kappa_F == pytest.approx(0.75) and r.kappa_D == matrix_mat.kappa_D


def test_energy_budget(matrix_mat):
    b = energy_budget(matrix_mat, 0.01, 0.02)
    assert b.U_d == pytest.approx(0.5 * 0.01 * 0.125 * 1.5)
    assert b.lambda_modified == pytest.approx(math.sqrt(0.02))
