import numpy as np
import pytest

from hyplab import harmonic as hm
from hyplab import metric_family as mf
from hyplab import variation as va
from hyplab.errors import NonHarmonicState
from hyplab.suites import circle_z_trace, surface_z_trace


@pytest.fixture(scope="module")
def surface_battery(ctx3):
    h = 0.02 / ctx3.sup_nu
    trace, state0 = surface_z_trace(ctx3, h)
    ks = va.kodaira_spencer_base(ctx3, state0)
    c = va.c_phi_solve(ctx3)
    wres = va.solve_W(ctx3, ks, state0)
    return {"h": h, "trace": trace, "state": state0, "ks": ks, "c": c,
            "wres": wres}


@pytest.fixture(scope="module")
def circle_battery(ctx3, group):
    cls = group.geodesic_class((0,))
    loop = hm.geodesic_representative(group, cls, samples=512)
    h = 0.02 / ctx3.sup_nu
    trace, loop0 = circle_z_trace(ctx3, loop, h)
    cv = va.CircleVariation(ctx3, loop)
    return {"h": h, "trace": trace, "loop": loop, "loop0": loop0, "cv": cv}


def test_harmonic_gate(ctx3, surface_battery):
    bad = surface_battery["state"]
    saved = bad.residual
    try:
        bad.residual = 1.0
        with pytest.raises(NonHarmonicState):
            va.first_variation_analytic(ctx3, surface_battery["ks"], bad)
    finally:
        bad.residual = saved


def test_antiholomorphy_and_curl_free(ctx3, surface_battery):
    ks, state = surface_battery["ks"], surface_battery["state"]
    assert ks.antiholomorphy_residual() <= 1e-6
    assert va.nabla_A_antisymmetry(ctx3, ks, state) <= 1e-4


def test_first_variation_surface(ctx3, surface_battery):
    b = surface_battery
    fv = va.first_variation_analytic(ctx3, b["ks"], b["state"])
    fd = b["trace"].dz(b["h"] / 2)
    E0 = b["trace"].E[0j]
    assert abs(fv - fd) <= max(0.01 * abs(fv), 1e-5 * E0)


def test_pairing_two_routes(ctx3, surface_battery):
    b = surface_battery
    a1 = va.energy_pairing_AA(ctx3, b["ks"], b["state"])
    a2 = va.energy_pairing_AA_fiber(ctx3, b["ks"], b["state"])
    assert abs(a1 - a2) / a1 <= 1e-6


def test_c_field_properties(ctx3, surface_battery):
    c = surface_battery["c"]
    supA2 = float(np.max(np.abs(surface_battery["ks"].av_quad()) ** 2))
    assert c.min_value() >= -1e-10
    assert c.max_value() <= supA2 + 1e-8
    assert c.roundtrip_residual <= 1e-9


def test_c_zero_for_zero_seed(ctx3):
    import copy
    # a zero differential gives c = 0 through the same solve
    mesh = ctx3.mesh
    from hyplab.fem import assemble_stiffness, lumped_mass_vector
    from scipy import sparse
    from scipy.sparse.linalg import splu
    K = assemble_stiffness(mesh, ctx3.base_metric)
    ml = lumped_mass_vector(mesh, ctx3.base_metric)
    c = splu((K + 2 * sparse.diags(ml)).tocsc()).solve(
        2.0 * ml * np.zeros(mesh.n_dofs))
    assert np.max(np.abs(c)) == 0.0


def test_w_solve_invariants(ctx3, surface_battery):
    b = surface_battery
    wres = b["wres"]
    assert wres.block_residual <= 1e-9
    assert wres.second_row_residual <= 1e-9
    assert va.block_symmetry_audit(ctx3, b["ks"], b["state"]) <= 1e-10
    # identity-class deformation response stays small
    assert np.max(np.abs(wres.W)) < 1e-2


def test_schur_and_multiplier_positivity(ctx3, surface_battery):
    ops = surface_battery["wres"].operators
    for e in va.random_sections(ctx3, 10):
        assert va.schur_quadratic_form(ctx3, ops, e) >= -1e-9
        assert va.lemma6_quadratic_form(ctx3, ops, e) >= -1e-9
    W = surface_battery["wres"].W
    assert va.schur_quadratic_form(ctx3, ops, W) >= -1e-9


def test_second_variation_surface(ctx3, surface_battery):
    b = surface_battery
    sv, parts = va.second_variation_analytic(ctx3, b["ks"], b["state"],
                                             b["c"], b["wres"])
    fd = b["trace"].dzzb(b["h"] / 2)
    assert abs(sv - fd) / abs(fd) <= 0.03
    assert sv - parts["half_int_c_du2"] >= -1e-8


def test_psh_certificate_surface(ctx3, surface_battery):
    b = surface_battery
    cert = va.psh_certificate(b["trace"], ctx3, b["c"], state=b["state"])
    assert cert["passed"] and not cert["degenerate"]
    assert cert["m2"] > 0


def test_circle_first_variation(ctx3, circle_battery):
    b = circle_battery
    fv = b["cv"].first_variation_length()
    fd = b["trace"].dz(b["h"] / 2, table=b["trace"].ell)
    assert abs(fv - fd) / abs(fd) <= 0.01
    assert b["cv"].arc_gate() <= 1e-8
    # half the doubled-convention pairing
    assert abs(fv - 0.5 * b["cv"].pairing_A_du()) <= 1e-12 * abs(fv)


def test_circle_second_variation(ctx3, circle_battery):
    b = circle_battery
    c = va.c_phi_solve(ctx3)
    sv, parts = b["cv"].second_variation_length(c)
    fd = b["trace"].dzzb(b["h"] / 2, table=b["trace"].ell)
    assert abs(sv - fd) / abs(fd) <= 0.02
    assert parts["fiber"] >= 0.0
    assert parts["ode"] >= 0.0


def test_circle_energy_length_identity(circle_battery):
    tr = circle_battery["trace"]
    l0 = circle_battery["loop"].ell0
    for z in tr.E:
        assert abs(tr.E[z] - tr.ell[z] ** 2 / l0) <= 1e-8 * tr.E[z]


def test_hodge_identity(ctx3, circle_battery):
    b = circle_battery
    tr = b["trace"]
    h = b["h"]
    E_p = tr.E[0j] / np.sqrt(2.0)
    dE = (4.0 * tr.dz(h / 2) - tr.dz(h)) / 3.0 / np.sqrt(2.0)
    hd = b["cv"].hodge_checks(E_p, dE)
    assert hd["identity_residual_rel"] <= 1e-6
    assert hd["projection_residual_rel"] <= 1e-6
    assert abs(hd["norm_HA2"] - hd["dE_formula"]) \
        <= max(1e-4 * hd["dE_formula"], 1e-10)


def test_hodge_with_du_itself(ctx3, circle_battery):
    cv = circle_battery["cv"]
    saved = cv.A_coeff
    try:
        cv.A_coeff = cv.vel_p
        data = cv.harmonic_projection_data()
        # du is harmonic: H(du) = du and Delta^+ Delta du ~ 0
        diff = data["H_A"] - cv.vel_p
        assert np.sqrt(cv.norm2(diff)) <= 1e-6 * np.sqrt(cv.norm2(cv.vel_p))
        assert data["identity_residual"] <= 1e-6
    finally:
        cv.A_coeff = saved


def test_projection_difference_positivity(ctx3, circle_battery, rng):
    cv = circle_battery["cv"]
    N = circle_battery["loop"].samples
    for _ in range(5):
        s = rng.normal(size=N) + 1j * rng.normal(size=N)
        assert cv.lemma9_form(s) >= -1e-9


def test_remark_correction(circle_battery):
    rc = va.remark_correction_check(circle_battery["trace"])
    assert rc["passed"]
    assert rc["discriminating"]
    assert rc["rel_err_wrong"] > 0.03


def test_psh_circle_and_logsum(ctx3, circle_battery, group):
    b = circle_battery
    c = va.c_phi_solve(ctx3)
    cert = va.psh_certificate(b["trace"], ctx3, c, loop=b["loop0"])
    assert cert["passed"] and cert["m2"] > 0
    # log of a sum of two energies stays subharmonic
    cls2 = group.geodesic_class((0, 1))
    loop2 = hm.geodesic_representative(group, cls2, samples=256)
    tr2, _ = circle_z_trace(ctx3, loop2, b["h"])
    logsum = {z: float(np.log(b["trace"].E[z] + tr2.E[z]))
              for z in b["trace"].E}
    val = b["trace"].dzzb(table=logsum)
    noise = b["trace"].dzzb_noise(table=logsum)
    assert val >= -max(noise, 1e-10)
