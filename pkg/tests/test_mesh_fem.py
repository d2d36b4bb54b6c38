import numpy as np
import pytest

from hyplab import fem
from hyplab import metric_family as mf
from hyplab.errors import DegenerateMetric, RefinementTooDeep
from hyplab.fem import (assemble_mass, assemble_stiffness, integrate,
                        smallest_nonzero_eigenvalue, solve_spd, SparseOperator)
from hyplab.mesh import build_octagon_mesh, wrap_point


def test_refinement_guard():
    with pytest.raises(RefinementTooDeep):
        build_octagon_mesh(9)


def test_euler_characteristic_all_levels(group):
    for r in (0, 1, 2, 3):
        m = build_octagon_mesh(r, group=group)
        assert m.euler_characteristic() == -2
        assert len(m.triangles) == 8 * 4 ** r


def test_min_angle(mesh3):
    assert np.degrees(mesh3.min_angle) >= 15.0


def test_gluing_transitions_match(mesh3):
    for i, t in enumerate(mesh3.transition):
        if t is None:
            continue
        img = t.apply(mesh3.vertices[i])
        assert abs(img - mesh3.vertices[mesh3.master[i]]) < 1e-9


def test_area_gauss_bonnet(mesh4):
    g = mf.base_metric_field(mesh4)
    assert abs(g.area(mesh4) - 4 * np.pi) / (4 * np.pi) < 0.04


def test_area_refinement_ratio(group):
    errs = []
    for r in (2, 3, 4):
        m = build_octagon_mesh(r, group=group)
        g = mf.base_metric_field(m)
        errs.append(abs(g.area(m) - 4 * np.pi) / (4 * np.pi))
    assert errs[1] <= 0.35 * errs[0]
    assert errs[2] <= 0.35 * errs[1]


def test_stiffness_conformal_invariance(mesh3):
    Kb = assemble_stiffness(mesh3, mf.base_metric_field(mesh3))
    Ke = assemble_stiffness(mesh3, mf.euclidean_metric_field(mesh3))
    assert abs(Kb - Ke).max() < 1e-12


def test_constants_in_kernel(mesh3):
    K = assemble_stiffness(mesh3, mf.base_metric_field(mesh3))
    assert np.max(np.abs(K @ np.ones(mesh3.n_dofs))) < 1e-12


def test_mass_spd_and_total(mesh3):
    g = mf.base_metric_field(mesh3)
    M = assemble_mass(mesh3, g)
    assert abs(M.sum() - g.area(mesh3)) < 1e-10
    x = np.random.default_rng(0).normal(size=mesh3.n_dofs)
    assert x @ (M @ x) > 0


def test_degenerate_metric_rejected(mesh3):
    shape = mesh3.quad_points.shape
    with pytest.raises(DegenerateMetric):
        fem.MetricField(np.zeros(shape), np.zeros(shape), np.ones(shape))


def test_eigenvalue_stability(group):
    vals = []
    for r in (2, 3):
        m = build_octagon_mesh(r, group=group)
        g = mf.base_metric_field(m)
        vals.append(smallest_nonzero_eigenvalue(
            assemble_stiffness(m, g), assemble_mass(m, g)))
    assert abs(vals[1] - vals[0]) / vals[1] < 0.05


def test_solve_spd_roundtrip(mesh3, rng):
    g = mf.base_metric_field(mesh3)
    op = SparseOperator(stiffness=assemble_stiffness(mesh3, g),
                        mass=assemble_mass(mesh3, g))
    rhs = rng.normal(size=mesh3.n_dofs)
    x = solve_spd(op, 2.0, rhs)
    A = op.stiffness + 2.0 * op.mass
    res = np.linalg.norm(A @ x - op.mass @ rhs) / np.linalg.norm(op.mass @ rhs)
    assert res <= 1e-10
    # constants are box-harmonic: (box + 1) 1 = 1
    u = solve_spd(op, 1.0, np.ones(mesh3.n_dofs))
    assert np.max(np.abs(u - 1.0)) < 1e-10


def test_integrate_linearity_and_area(mesh3, rng):
    g = mf.base_metric_field(mesh3)
    f = rng.normal(size=mesh3.quad_points.shape)
    assert abs(integrate(mesh3, g, 2 * f) - 2 * integrate(mesh3, g, f)) < 1e-12
    one = np.ones_like(f)
    assert abs(integrate(mesh3, g, one) - 4 * np.pi) / (4 * np.pi) < 0.02
    assert integrate(mesh3, g, 0.0 * one) == 0.0


def test_point_location_and_wrap(mesh3, group, rng):
    for _ in range(20):
        p = 0.5 * (rng.uniform(-1, 1) + 1j * rng.uniform(-1, 1))
        loc = mesh3.locate(complex(p))
        assert loc is not None
        t_idx, lam = loc
        assert np.all(lam >= -1e-11)
        assert abs(np.sum(lam) - 1.0) < 1e-12
    # a point outside the octagon wraps back in
    p_out = 0.95 * np.exp(1j * np.pi / 8)
    p_in, gamma = wrap_point(p_out, group)
    assert mesh3.locate(complex(p_in)) is not None
    assert abs(gamma.apply(p_out) - p_in) < 1e-12


def test_glued_solution_continuity(ctx3, rng):
    mesh = ctx3.mesh
    g = ctx3.base_metric
    op = SparseOperator(stiffness=assemble_stiffness(mesh, g),
                        mass=assemble_mass(mesh, g))
    u = solve_spd(op, 1.0, rng.normal(size=mesh.n_dofs))
    disk = mesh.P_scalar @ u
    # identified vertices carry a single DOF: the nodal jump vanishes
    for i, t in enumerate(mesh.transition):
        if t is not None:
            assert disk[i] == disk[mesh.master[i]]
    # interior points near a glued side agree with their deck images to
    # interpolation accuracy
    gens = ctx3.group.generators
    sup = np.max(np.abs(disk))
    import numpy as _np
    from hyplab.fuchsian import OCTAGON_APOTHEM
    r_arc = _np.tanh(OCTAGON_APOTHEM / 2.0)
    delta = 0.01
    for k in range(4):
        mid = r_arc * _np.exp(1j * (2 * (k + 4) + 1) * _np.pi / 8)
        p1 = (1.0 - delta) * mid              # just inside side k+4
        p2 = gens[k].apply((1.0 + delta) * mid)   # just inside side k
        t_idx, lam = mesh.locate(complex(p1))
        v1 = float(lam @ disk[mesh.triangles[t_idx]])
        t2, lam2 = mesh.locate(complex(p2))
        v2 = float(lam2 @ disk[mesh.triangles[t2]])
        assert abs(v1 - v2) <= 5e-2 * sup
