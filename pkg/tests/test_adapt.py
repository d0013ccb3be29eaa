import numpy as np
import pytest

from febe import material as mat, presets
from febe.adapt import AdaptiveRecord, mark, run_adaptive
from febe.driver import build_system
from febe.estimate import estimate_sp
from febe.mesh import load_mesh
from febe.vi import solve_contact_vi, solve_transmission


def test_mark_theta_one_takes_all_nonzero():
    vals = np.array([0.5, 0.0, 0.2, 0.3])
    got = mark(vals, 1.0)
    assert sorted(got) == [0, 2, 3]


def test_mark_dominant_element():
    vals = np.array([0.99, 0.0025, 0.0025, 0.0025, 0.0025])
    assert mark(vals, 0.5) == [0]


def test_mark_uniform_half():
    for N in (4, 7, 10):
        vals = np.ones(N)
        assert len(mark(vals, 0.5)) == int(np.ceil(N / 2))


def test_mark_validates_theta():
    with pytest.raises(ValueError):
        mark(np.ones(3), 0.0)
    with pytest.raises(ValueError):
        mark(np.ones(3), 1.5)


def _loop(max_dofs, theta=0.5, max_levels=6):
    law = mat.MaterialLaw(p=2.0)
    mesh = load_mesh(presets.square_text(2), scale=False)

    def data_factory(m):
        return presets.scalar_quadratic(law).data

    def build_fn(m, data):
        return build_system(m, law, data)

    return run_adaptive(mesh, data_factory, solve_transmission,
                        estimate_sp, theta=theta, max_dofs=max_dofs,
                        max_levels=max_levels, build_fn=build_fn)


def test_zero_dof_budget_single_record():
    records, _ = _loop(max_dofs=0)
    assert len(records) == 1
    assert records[0].level == 0


def test_adaptive_estimator_decreases():
    records, _ = _loop(max_dofs=800, max_levels=8)
    totals = [r.estimator_total for r in records]
    assert len(records) >= 4
    assert totals[-1] < totals[0]
    dofs = [r.dofs_interior for r in records]
    assert all(b >= a for a, b in zip(dofs, dofs[1:]))
    levels = [r.level for r in records]
    assert levels == sorted(set(levels))


def test_adaptive_deterministic():
    rec_a, _ = _loop(max_dofs=300, max_levels=5)
    rec_b, _ = _loop(max_dofs=300, max_levels=5)
    assert len(rec_a) == len(rec_b)
    for a, b in zip(rec_a, rec_b):
        assert a.n_triangles == b.n_triangles
        assert a.estimator_total == pytest.approx(b.estimator_total, rel=1e-12)


def test_adaptive_writes_level_outputs(tmp_path):
    law = mat.MaterialLaw(p=2.0)
    mesh = load_mesh(presets.square_text(2), scale=False)

    def data_factory(m):
        return presets.scalar_quadratic(law).data

    def build_fn(m, data):
        return build_system(m, law, data)

    records, _ = run_adaptive(mesh, data_factory, solve_transmission,
                              estimate_sp, theta=0.5, max_dofs=100,
                              max_levels=3, out_dir=str(tmp_path),
                              build_fn=build_fn)
    for rec in records:
        d = tmp_path / ("level_%d" % rec.level)
        assert (d / "mesh.txt").exists()
        assert (d / "solution.csv").exists()
        assert (d / "indicators.csv").exists()


def test_adaptive_loop_with_contact():
    law = mat.MaterialLaw(p=2.0)
    mesh = load_mesh(presets.square_text(4, slip=("b",)), scale=False)

    def data_factory(m):
        return presets.scalar_transition(law).data

    def build_fn(m, data):
        return build_system(m, law, data)

    records, sols = run_adaptive(mesh, data_factory, solve_contact_vi,
                                 estimate_sp, theta=0.5, max_dofs=400,
                                 max_levels=8, build_fn=build_fn)
    assert len(records) >= 3
    assert records[-1].estimator_total < records[0].estimator_total
    # per-level outputs carry friction terms
    assert "friction_sigma_t_excess" in records[0].estimator_parts


def test_target_eta_stops_early():
    records, _ = _loop(max_dofs=10**6, max_levels=8)
    big_eta = records[0].estimator_total * 2
    law = mat.MaterialLaw(p=2.0)
    mesh = load_mesh(presets.square_text(2), scale=False)

    def data_factory(m):
        return presets.scalar_quadratic(law).data

    def build_fn(m, data):
        return build_system(m, law, data)

    recs, _ = run_adaptive(mesh, data_factory, solve_transmission, estimate_sp,
                           theta=0.5, max_dofs=10**6, target_eta=big_eta,
                           max_levels=8, build_fn=build_fn)
    assert len(recs) == 1
