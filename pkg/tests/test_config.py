import math

import pytest

from rve_lab.config import (FIBER_DEFAULT, MATRIX_DEFAULT, RunConfig, four_fiber_rve, materials_from,
                            microstructure_from, run_case, shifted_grid)
from rve_lab.errors import InvalidSpec
from rve_lab.meshing import FIBER, MATRIX
from rve_lab.microstructure import count_overlaps, min_freepath


def test_four_fiber_cell():
    m = four_fiber_rve()
    assert m.n_fibers == 4 and m.achieved_vf() == pytest.approx(0.37)
    assert count_overlaps(m) == 0


def test_shifted_grid_freepath():
    g = shifted_grid(5, 0.06, shift=0.02)
    assert min_freepath(g).freepath == pytest.approx(0.08 - 0.02)
    assert shifted_grid(5, 0.06).n_fibers == 25


def test_materials_with_regularisation():
    mats = materials_from({"matrix": {"epsf": 2.0}}, h=0.04, regularization={"mode": "sqrt", "lambda": 0.01})
    assert mats[MATRIX].kappa_F == pytest.approx(2.0 * math.sqrt(0.01 / 0.04))
    assert mats[MATRIX].kappa_D == MATRIX_DEFAULT["eps0"]
    assert mats[FIBER].E == FIBER_DEFAULT["E"] and not mats[FIBER].damageable


@pytest.mark.parametrize("bad", [
    {"h": 0}, {"bc": "free"}, {"regularization": {"mode": "sqrt"}}, {"f_fail": 1.5},
    {"load": {"mode": "twist"}}, {"materials": {"matrix": {"nu": 0.6}}}, {"extra": 1}])
def test_config_validation(bad):
    d = {"microstructure": {"kind": "four_fiber"}, "h": 0.05}
    d.update(bad)
    with pytest.raises(InvalidSpec):
        RunConfig.from_dict(d)


def test_microstructure_kinds(tmp_path):
    assert microstructure_from({"kind": "homogeneous"}).n_fibers == 0
    m = microstructure_from({"kind": "rsa", "n_fibers": 5, "vf": 0.2}, seed=3)
    (tmp_path / "m.json").write_text(m.to_json())
    assert microstructure_from({"kind": "file", "path": "m.json"}, base_dir=tmp_path) == m
    with pytest.raises(InvalidSpec):
        microstructure_from({"kind": "lattice"})


def test_run_case_homogeneous_initiation():
    # uniform strain: the first damaged increment is the first with strain >= eps0
    cfg = RunConfig.from_dict({"microstructure": {"kind": "homogeneous"}, "h": 0.1,
                               "load": {"u_total": 0.5, "n_increments": 100}})
    res = run_case(cfg)
    assert res.metrics.eps0_rve == pytest.approx(MATRIX_DEFAULT["eps0"], abs=0.5 / 100)
    assert res.metrics.eps0_rve >= MATRIX_DEFAULT["eps0"]
    assert res.curve.meta["n_fibers"] == 0 and res.curve.meta["bc_type"] == "dpbc"
