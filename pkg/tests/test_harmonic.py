import numpy as np
import pytest

from hyplab import harmonic as hm
from hyplab import metric_family as mf
from hyplab import fuchsian as fg


def test_identity_energy_is_area(ctx3):
    st = hm.solve_harmonic_identity(ctx3, mf.BaseHyperbolic())
    assert abs(st.energy - 4 * np.pi) / (4 * np.pi) < 0.02
    assert st.residual <= 1e-6 * st.energy
    assert st.displacement_sup() < 0.02
    # energy decreased monotonically
    assert all(b <= a + 1e-12 for a, b in
               zip(st.energy_history, st.energy_history[1:]))


def test_scaled_target_energy(ctx3):
    s = 0.15
    st0 = hm.solve_harmonic_identity(ctx3, mf.BaseHyperbolic())
    st1 = hm.solve_harmonic_identity(ctx3, mf.BaseHyperbolic(log_scale=s))
    assert abs(st1.energy / st0.energy - np.exp(2 * s)) < 1e-10
    assert st1.residual <= 1e-6 * st1.energy


def test_domain_conformal_invariance(ctx3):
    st0 = hm.solve_harmonic_identity(ctx3, mf.BaseHyperbolic())
    doubled = mf.base_metric_field(ctx3.mesh, log_scale=0.5 * np.log(2.0))
    st1 = hm.solve_harmonic_identity(ctx3, mf.BaseHyperbolic(),
                                     domain_metric=doubled)
    assert abs(st1.energy - st0.energy) / st0.energy < 1e-12


def test_deformed_solve_and_linear_response(ctx3):
    st0 = hm.solve_harmonic_identity(ctx3, mf.BaseHyperbolic())
    sups = []
    for zf in (0.01, 0.02, 0.04):
        target, w, _ = ctx3.liouville_target(zf / ctx3.sup_nu)
        st = hm.solve_harmonic_identity(ctx3, target, w_nodal=w)
        assert st.energy >= st0.energy - 1e-6
        sups.append(st.displacement_sup() - st0.displacement_sup())
    assert 1.2 <= sups[1] / sups[0] <= 3.2
    assert 1.2 <= sups[2] / sups[1] <= 3.2


def test_schedule_independence(ctx3):
    target, w, _ = ctx3.liouville_target(0.04 / ctx3.sup_nu)
    a = hm.solve_harmonic_identity(ctx3, target, w_nodal=w)
    b = hm.solve_harmonic_identity(ctx3, target, w_nodal=w, descent_first=12)
    assert abs(a.energy - b.energy) / a.energy <= 1e-8


def test_geodesic_representative(group):
    cls = group.geodesic_class((0,))
    loop = hm.geodesic_representative(group, cls, samples=512)
    ell = fg.translation_length(group.word_to_map((0,)))
    assert abs(loop.ell0 - ell) < 1e-10
    assert abs(hm.exact_polyline_length(loop) - ell) < 1e-6
    # doubled-density convention: E = l^2/l0 = l at the base point
    assert abs(hm.exact_polyline_length(loop) ** 2 / loop.ell0 - ell) < 1e-6


def test_geodesic_representative_wrapped(group, mesh3):
    cls = group.geodesic_class((0, 1))
    loop = hm.geodesic_representative(group, cls, samples=512)
    assert np.max(np.abs(loop.points)) < 0.842
    assert abs(hm.exact_polyline_length(loop) - cls.length) < 1e-6


def test_shorten_base_noop(ctx3, group):
    cls = group.geodesic_class((0,))
    loop = hm.geodesic_representative(group, cls, samples=512)
    lp, L, E = hm.shorten_curve(ctx3, loop, mf.BaseHyperbolic(),
                                exact_base=True)
    assert abs(L - cls.length) < 1e-8
    assert np.array_equal(lp.points, loop.points)


def test_shorten_scaled_metric(ctx3, group):
    s = 0.1
    cls = group.geodesic_class((0,))
    loop = hm.geodesic_representative(group, cls, samples=256)
    _, L, _ = hm.shorten_curve(ctx3, loop, mf.BaseHyperbolic(log_scale=s))
    assert abs(L - np.exp(s) * cls.length) / cls.length < 1e-4


def test_shorten_deformed_consistency(ctx3, group):
    cls = group.geodesic_class((0,))
    loop = hm.geodesic_representative(group, cls, samples=512)
    target, w, _ = ctx3.liouville_target(0.05 / ctx3.sup_nu + 0.02j)
    lp, L, E = hm.shorten_curve(ctx3, loop, target, w_nodal=w)
    assert abs(E - L ** 2 / loop.ell0) < 1e-10
    assert hm.normal_length_variation(ctx3, lp, target, w_nodal=w) < 1e-6
    assert abs(hm.loop_gauss_length(ctx3, lp, target, w_nodal=w) - L) < 1e-6


def test_fd_richardson_on_circle_trace(ctx3, group):
    from hyplab.suites import circle_z_trace
    cls = group.geodesic_class((0,))
    loop = hm.geodesic_representative(group, cls, samples=256)
    h = 0.02 / ctx3.sup_nu
    tr, _ = circle_z_trace(ctx3, loop, h)
    d1 = tr.dz(h)
    d2 = tr.dz(h / 2)
    assert abs(d1 - d2) / abs(d2) < 0.05
    # second differences bounded under halving (smoothness)
    s1 = tr.dzzb(h)
    s2 = tr.dzzb(h / 2)
    assert abs(s1 - s2) / abs(s2) < 0.2


def test_constant_family_trace():
    tr = hm.EnergyTrace("z", 0.1)
    for z in (0, 0.1, -0.1, 0.1j, -0.1j, 0.05, -0.05, 0.05j, -0.05j):
        tr.add(complex(z), 7.25)
    assert tr.dz() == 0
    assert tr.dzzb() == 0


def test_t_grid_stencils():
    tr = hm.EnergyTrace("t", 0.1)
    for t in hm.t_grid(0.1, 9):
        tr.add(t, 1.0 + 3.0 * t + 2.5 * t * t)
    assert abs(tr.dt() - 3.0) < 1e-12
    assert abs(tr.dtt5() - 5.0) < 1e-10
    assert abs(tr.dttt()) < 1e-10
