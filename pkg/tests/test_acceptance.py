"""Acceptance battery: every criterion at its stated tolerance, r = 5.

Shared artifacts (contexts, traces, solves) are built once per session; each
criterion prints one pass/fail line.
"""

import json
import subprocess
import sys
import time

import numpy as np
import pytest

from hyplab import fuchsian as fg
from hyplab import harmonic as hm
from hyplab import metric_family as mf
from hyplab import qdiff
from hyplab import variation as va
from hyplab import wp
from hyplab.config import ExperimentConfig
from hyplab.context import LabContext
from hyplab.mesh import build_octagon_mesh
from hyplab.suites import circle_z_trace, surface_z_trace, _select_circle_class

REFINE = 5
DEPTH = 6
SEEDS = [(1.0,), (0.0, 0.0, 1.0), (1.0, 0.0, 0.5)]


def _line(num, ok, text):
    tag = "PASS" if ok else "FAIL"
    print(f"[{tag}] criterion {num}: {text}")
    assert ok, f"criterion {num}: {text}"


@pytest.fixture(scope="module")
def battery():
    t_start = time.perf_counter()
    group = fg.octagon_group()
    mesh = build_octagon_mesh(REFINE, group=group)
    cfg = ExperimentConfig(refine=REFINE, qd_depth=DEPTH)
    data = {"group": group, "mesh": mesh, "cfg": cfg, "seeds": []}
    for si, seed in enumerate(SEEDS):
        qd = qdiff.poincare_series_qd(group, seed, DEPTH)
        ctx = LabContext(mesh, qd)
        h = 0.02 / ctx.sup_nu
        tr_s, state0 = surface_z_trace(ctx, h, full=(si == 0),
                                       cross_only=(si != 0))
        ks = va.kodaira_spencer_base(ctx, state0)
        c = va.c_phi_solve(ctx)
        wres = va.solve_W(ctx, ks, state0)
        cls, loop, cv = _select_circle_class(ctx, group, cfg)
        tr_c, loop0 = circle_z_trace(ctx, loop, h)
        data["seeds"].append({
            "seed": seed, "ctx": ctx, "h": h, "trace_s": tr_s,
            "state": state0, "ks": ks, "c": c, "wres": wres,
            "cls": cls, "loop": loop, "cv": cv, "trace_c": tr_c,
            "loop0": loop0,
        })
    # ray experiments on the first seed
    ctx0 = data["seeds"][0]["ctx"]
    step = 0.02 * ctx0.wolf_threshold()
    data["ray_surface"] = wp.wp_energy_curve(ctx0, hm.t_grid(step, 9),
                                             domain="surface")
    data["ray_circle"] = wp.wp_energy_curve(
        ctx0, hm.t_grid(step, 9), domain="circle",
        geo_class=data["seeds"][0]["cls"])
    data["build_seconds"] = time.perf_counter() - t_start
    return data


def test_criterion_1_geometry(battery):
    errs = []
    for r in (3, 4, 5):
        m = build_octagon_mesh(r, group=battery["group"])
        g = mf.base_metric_field(m)
        errs.append(abs(g.area(m) - 4 * np.pi) / (4 * np.pi))
    ratios = [errs[i + 1] / errs[i] for i in range(2)]
    ok = errs[-1] <= 0.01 and all(r <= 0.35 for r in ratios)
    _line(1, ok, f"area rel err {errs[-1]:.2e} (<=1%), "
          f"refinement ratios {ratios[0]:.3f}, {ratios[1]:.3f} (<=0.35)")


def test_criterion_2_liouville(battery):
    s0 = battery["seeds"][0]
    ctx = s0["ctx"]
    mesh = ctx.mesh
    Kq = -np.ones_like(mesh.quad_points, dtype=float)
    w0, _ = mf.solve_liouville(mesh, ctx.base_metric, Kq)
    z = 0.05 / ctx.sup_nu
    fam = mf.BeltramiFamily(z, ctx.sup_nu)
    gz = ctx.metric_field(fam)
    Kzq = np.real(ctx.curvature_at_anchors(fam)).reshape(
        mesh.quad_points.shape)
    target, wz, _ = ctx.liouville_target(z)
    audit = mf.liouville_curvature_audit(mesh, gz, Kzq, wz)
    dev = float(np.max(np.abs(audit + 1.0)))
    ok = np.max(np.abs(w0)) <= 1e-8 and dev <= 2e-2
    _line(2, ok, f"base sup|w| {np.max(np.abs(w0)):.2e} (<=1e-8), "
          f"deformed curvature dev {dev:.2e} (<=2e-2)")


def test_criterion_3_automorphy(battery):
    ctx = battery["seeds"][0]["ctx"]
    d6 = ctx.qd.defect_report["defect"]
    defects = []
    for L in range(2, 9):
        qd = qdiff.QuadraticDifferential(battery["group"], (1.0,), L)
        defects.append(qd.automorphy_defect())
    mono = all(b <= 1.10 * a for a, b in zip(defects, defects[1:]))
    ok = d6 <= 1e-2 and mono
    _line(3, ok, f"defect at depth {DEPTH}: {d6:.2e} (<=1e-2), "
          f"sweep {['%.1e' % d for d in defects]} non-increasing (10%)")


def test_criterion_4_first_variation(battery):
    details = []
    ok = True
    ratios = []
    for s in battery["seeds"]:
        ctx, h = s["ctx"], s["h"]
        fv_s = va.first_variation_analytic(ctx, s["ks"], s["state"])
        fd_s = s["trace_s"].dz(h / 2)
        E0 = s["trace_s"].E[0j]
        tol_s = max(0.01 * abs(fv_s), 1e-5 * E0)
        ok &= abs(fv_s - fd_s) <= tol_s
        fv_c = s["cv"].first_variation_length()
        fd_c = s["trace_c"].dz(h / 2, table=s["trace_c"].ell)
        E0c = s["trace_c"].E[0j]
        tol_c = max(0.01 * abs(fv_c), 1e-5 * E0c)
        ok &= abs(fv_c - fd_c) <= tol_c
        if abs(fv_c) > 1e-5 * E0c:
            ratios.append(fd_c / fv_c)
        details.append(f"surf {abs(fv_s - fd_s):.1e}<= {tol_s:.1e}, "
                       f"circ {abs(fv_c - fd_c):.1e}<= {tol_c:.1e}")
    spread = max(abs(r - ratios[0]) for r in ratios) if ratios else 1.0
    ok &= len(ratios) >= 2 and spread <= 0.01
    _line(4, ok, f"{len(battery['seeds'])} seeds, both domains, "
          f"shared constant spread {spread:.1e}; " + "; ".join(details))


def test_criterion_5_second_variation(battery):
    ok = True
    details = []
    for s in battery["seeds"]:
        ctx, h = s["ctx"], s["h"]
        sv, parts = va.second_variation_analytic(ctx, s["ks"], s["state"],
                                                 s["c"], s["wres"])
        fd = s["trace_s"].dzzb(h / 2)
        rel = abs(sv - fd) / abs(fd)
        margin = sv - parts["half_int_c_du2"]
        ok &= rel <= 0.03 and margin >= -1e-8
        details.append(f"rel {rel:.2%}, bound margin {margin:.2e}")
    _line(5, ok, "; ".join(details))


def test_criterion_6_circle_formulas(battery):
    ok = True
    details = []
    for s in battery["seeds"][:1]:
        ctx, h, cv = s["ctx"], s["h"], s["cv"]
        tr = s["trace_c"]
        fv = cv.first_variation_length()
        fd1 = tr.dz(h / 2, table=tr.ell)
        rel1 = abs(fv - fd1) / abs(fd1)
        sv, parts = cv.second_variation_length(s["c"])
        fd2 = tr.dzzb(h / 2, table=tr.ell)
        rel2 = abs(sv - fd2) / abs(fd2)
        E_p = tr.E[0j] / np.sqrt(2.0)
        dE = (4.0 * tr.dz(h / 2) - tr.dz(h)) / 3.0 / np.sqrt(2.0)
        hd = cv.hodge_checks(E_p, dE)
        rc = va.remark_correction_check(tr)
        ok &= rel1 <= 0.01 and rel2 <= 0.02
        ok &= parts["fiber"] >= 0.0 and parts["ode"] >= 0.0
        ok &= hd["identity_residual_rel"] <= 1e-6
        ok &= hd["projection_residual_rel"] <= 1e-6
        ok &= rc["passed"] and rc["wrong_fails"] and rc["discriminating"]
        details.append(
            f"fv rel {rel1:.2%} (<=1%), sv rel {rel2:.2%} (<=2%), summands "
            f"({parts['fiber']:.3e}, {parts['ode']:.3e}) >= 0, hodge "
            f"{hd['identity_residual_rel']:.1e}/{hd['projection_residual_rel']:.1e}"
            f" (<=1e-6), correction rel {rc['rel_err']:.2%} vs wrong "
            f"{rc['rel_err_wrong']:.2%}")
    _line(6, ok, "; ".join(details))


def test_criterion_7_psh(battery):
    ok = True
    details = []
    for s in battery["seeds"]:
        cert = va.psh_certificate(s["trace_s"], s["ctx"], s["c"],
                                  state=s["state"])
        ok &= cert["passed"] and cert["m2"] > 0 and not cert["degenerate"]
        details.append(f"m1 {cert['m1']:.3e} >= m2 {cert['m2']:.3e} - 3%")
    s0 = battery["seeds"][0]
    cls2 = battery["group"].geodesic_class((0, 1))
    loop2 = hm.geodesic_representative(battery["group"], cls2, samples=512)
    tr2, _ = circle_z_trace(s0["ctx"], loop2, s0["h"])
    tr_c = s0["trace_c"]
    logsum = {z: float(np.log(tr_c.E[z] + tr2.E[z])) for z in tr_c.E}
    val = tr_c.dzzb(table=logsum)
    noise = tr_c.dzzb_noise(table=logsum)
    ok &= val >= -max(noise, 1e-10)
    details.append(f"log-sum dzzb {val:.3e} >= -noise {noise:.1e}")
    _line(7, ok, "; ".join(details))


def test_criterion_8_c_properties(battery):
    ok = True
    details = []
    for s in battery["seeds"]:
        c = s["c"]
        supA2 = float(np.max(np.abs(s["ks"].av_quad()) ** 2))
        ok &= c.min_value() >= -1e-10
        ok &= c.max_value() <= supA2 + 1e-8
        ok &= c.roundtrip_residual <= 1e-9
        details.append(f"min {c.min_value():.1e}, max {c.max_value():.3e} "
                       f"<= sup|A|^2 {supA2:.3e}, rt {c.roundtrip_residual:.1e}")
    _line(8, ok, "; ".join(details))


def test_criterion_9_wolf_ray(battery):
    exp = battery["ray_surface"]
    bound = wp.alpha_bound_report(exp.ctx)
    cc = wp.convexity_check(exp)
    cs = wp.cauchy_schwarz_check(exp)
    fd1 = wp.first_derivative_check(exp)
    ok = (bound["passed"] and cc["passed"] and cc["d2E_dt2"] > 0
          and cs["passed"] and fd1["passed"])
    _line(9, ok,
          f"alpha margin {bound['nodal_margin']:.2e} (>=-1e-8), "
          f"d2E/dt2 {cc['d2E_dt2']:.4f} >= bound {cc['alpha_bound']:.4f} - 3%,"
          f" CS ok {cs['passed']}, dE/dt err {fd1['abs_err']:.2e} <= "
          f"{fd1['tolerance']:.2e}")


def test_criterion_10_power_convexity(battery):
    ps = wp.power_convexity_sweep(battery["ray_surface"],
                                  (5.0 / 6.0, 0.9, 1.0))
    m = ps["margins"]
    ok = ps["passed"] and m[0.9] > 0 and m[1.0] > 0
    _line(10, ok, f"d2(E^c)/dt2: 5/6 -> {m[5.0 / 6.0]:.3e} (>= -noise), "
          f"0.9 -> {m[0.9]:.3e} > 0, 1.0 -> {m[1.0]:.3e} > 0")


def test_criterion_11_operator_structure(battery):
    ok = True
    details = []
    for s in battery["seeds"][:1]:
        ctx = s["ctx"]
        sym = va.block_symmetry_audit(ctx, s["ks"], s["state"])
        ops = s["wres"].operators
        schur_min = min(va.schur_quadratic_form(ctx, ops, e)
                        for e in va.random_sections(ctx, 10))
        asym = va.nabla_A_antisymmetry(ctx, s["ks"], s["state"])
        ok &= sym <= 1e-10 and schur_min >= -1e-9 and asym <= 1e-4
        details.append(f"symmetry {sym:.1e} (<=1e-10), schur min "
                       f"{schur_min:.2e} (>=-1e-9), curl residual "
                       f"{asym:.1e} (<=1e-4)")
    _line(11, ok, "; ".join(details))


def test_criterion_12_determinism_and_runtime(battery, tmp_path):
    outputs = []
    times = []
    for i in range(2):
        rep = tmp_path / f"rep{i}.json"
        t0 = time.perf_counter()
        proc = subprocess.run(
            [sys.executable, "-m", "hyplab.cli", "verify", "--suite", "all",
             "--refine", "4", "--report", str(rep)],
            capture_output=True, text=True, timeout=330)
        times.append(time.perf_counter() - t0)
        assert proc.returncode == 0, proc.stdout + proc.stderr
        outputs.append(rep.read_bytes())
    identical = outputs[0] == outputs[1]
    in_budget = max(times) <= 300.0
    battery_minutes = battery["build_seconds"] / 60.0
    r5_ok = battery_minutes <= 20.0
    ok = identical and in_budget and r5_ok
    _line(12, ok,
          f"verify-all r=4 runs {times[0]:.0f}s/{times[1]:.0f}s (<=300s), "
          f"byte-identical {identical}; r=5 battery {battery_minutes:.1f} min"
          f" (<=20)")
