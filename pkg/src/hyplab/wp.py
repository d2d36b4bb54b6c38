"""Energy along second-order hyperbolic rays and convexity checks.

The ray through a quadratic differential q is the metric family with
components Phi_vv = t q and Phi_vvb = (phi_0/2)(1 + t^2(|q|^2/phi_0^2 +
alpha)); alpha solves the shifted Laplace problem and carries the pointwise
lower bound |q|^2/(3 phi_0^2).

Energy conventions: surfaces use the fiber-weight density (identity energy
= area); circles use the classical-length convention E = l^2/l0.  In both,
E(t) = (1/2) int Tr_g(u* Phi_t) dmu with the matching trace, so the
derivative identities below hold with the same constants.
"""

from dataclasses import dataclass, field

import numpy as np

from . import harmonic as hm
from . import metric_family as mf
from .errors import DeformationTooLarge
from .fem import integrate


@dataclass
class WpRayExperiment:
    """Sampled E(t) along the ray, with the data the checks need."""

    ctx: object
    domain: str                   # "surface" | "circle"
    trace: object                 # EnergyTrace (t-mode)
    threshold: float
    state0: object = None         # surface state at t = 0
    loop0: object = None          # circle loop at t = 0
    geo_class: object = None


def wp_energy_curve(ctx, t_values, domain="surface", geo_class=None,
                    samples=512, solver_kwargs=None):
    """Converged E(t) per grid point along the Wolf ray."""
    threshold = ctx.wolf_threshold()
    t_values = list(t_values)
    if max(abs(t) for t in t_values) >= threshold:
        raise DeformationTooLarge(
            f"t grid reaches {max(map(abs, t_values)):.3f} >= positivity "
            f"threshold {threshold:.3f}")
    step = sorted({abs(t) for t in t_values if t != 0})[0] if len(
        t_values) > 1 else 1.0
    trace = hm.EnergyTrace("t", step)
    kw = solver_kwargs or {}
    state0 = None
    loop0 = None
    if domain == "surface":
        for t in t_values:
            st = hm.solve_harmonic_identity(ctx, mf.WolfFamily(t), **kw)
            trace.add(t, st.energy, residual=st.residual,
                      iterations=st.iterations)
            if t == 0:
                state0 = st
    else:
        base_loop = hm.geodesic_representative(ctx.group, geo_class,
                                               samples=samples)
        for t in t_values:
            loop, ell, E = hm.shorten_curve(ctx, base_loop,
                                            mf.WolfFamily(t))
            trace.add(t, E, ell=ell)
            if t == 0:
                loop0 = loop
    return WpRayExperiment(ctx=ctx, domain=domain, trace=trace,
                           threshold=threshold, state0=state0, loop0=loop0,
                           geo_class=geo_class)


# ---------------------------------------------------------------------------
# analytic integrands at the base point
# ---------------------------------------------------------------------------

def _surface_trace_q(ctx, state):
    """int g^{ij} u_i u_j q dmu (the first-derivative integrand)."""
    dm = ctx.base_metric
    Jx = state.Jx[:, None]
    Jy = state.Jy[:, None]
    S = (dm.inv11 * Jx * Jx + 2.0 * dm.inv12 * Jx * Jy
         + dm.inv22 * Jy * Jy)
    qp = ctx.qd.q(state.p_quad).reshape(S.shape)
    return complex(integrate(ctx.mesh, dm, S * qp))


def first_derivative_check(exp, tol_rel=0.02):
    """FD dE/dt at 0 against Re int g^{ij} u_i u_j q dmu."""
    ctx = exp.ctx
    tr = exp.trace
    fd = tr.dt()
    if exp.domain == "surface":
        analytic = float(np.real(_surface_trace_q(ctx, exp.state0)))
        E0 = tr.E[0.0]
    else:
        loop = exp.loop0
        ds = loop.ell0 / loop.samples
        qu = ctx.qd.q(loop.points)
        analytic = float(np.real(2.0 * np.sum(qu * loop.base_velocity ** 2)
                                 * ds))
        E0 = tr.E[0.0]
    err = abs(fd - analytic)
    tol = max(tol_rel * abs(analytic), 1e-5 * E0)
    return {"fd": float(fd), "analytic": analytic, "abs_err": float(err),
            "tolerance": float(tol), "passed": bool(err <= tol)}


def _alpha_trace_integral(exp):
    """int alpha Tr_g(u0* Phi_0) dmu (= 2 int alpha for both domains)."""
    ctx = exp.ctx
    if exp.domain == "surface":
        state = exp.state0
        dm = ctx.base_metric
        Jx = state.Jx[:, None]
        Jy = state.Jy[:, None]
        T = np.real(dm.inv11 * Jx * np.conj(Jx)
                    + dm.inv12 * (Jx * np.conj(Jy) + Jy * np.conj(Jx))
                    + dm.inv22 * Jy * np.conj(Jy))
        phw = mf.phi_weight(state.p_quad).reshape(T.shape)
        tr_phi0 = 2.0 * T * phw
        alpha_quad = ctx.mesh.scalar_at_quad(ctx.alpha)
        return float(integrate(ctx.mesh, dm, alpha_quad * tr_phi0))
    loop = exp.loop0
    mesh = ctx.mesh
    a_disk = mesh.P_scalar @ ctx.alpha
    vals = np.empty(loop.samples)
    for i, pt in enumerate(loop.points):
        p_in, _ = mesh.wrap(complex(pt))
        t_idx, lam = mesh.locate(p_in)
        vals[i] = float(np.dot(lam, a_disk[mesh.triangles[t_idx]]))
    ds = loop.ell0 / loop.samples
    return float(2.0 * np.sum(vals) * ds)


def alpha_bound_report(ctx):
    """Pointwise audit of alpha >= |q|^2/(3 phi_0^2) (nodes and quadrature)."""
    mesh = ctx.mesh
    alpha = ctx.alpha
    Q_node = np.abs(ctx.q_vertex) ** 2 / mf.phi0(mesh.vertices) ** 2
    masters = mesh.master == np.arange(len(mesh.vertices))
    Q_dof = np.zeros(mesh.n_dofs)
    Q_dof[mesh.dof[masters]] = Q_node[masters]
    nodal_margin = float(np.min(alpha - Q_dof / 3.0))
    a_quad = mesh.scalar_at_quad(alpha)
    q_quad = mesh.scalar_at_quad(Q_dof)
    quad_margin = float(np.min(a_quad - q_quad / 3.0))
    positive = float(np.min(alpha[Q_dof > 1e-12]))
    return {"nodal_margin": nodal_margin, "quad_margin": quad_margin,
            "min_alpha_on_support": positive,
            "passed": bool(nodal_margin >= -1e-8 and quad_margin >= -1e-8)}


def convexity_check(exp, slack=0.03):
    """FD d2E/dt2 > 0 and >= int alpha Tr dmu - slack."""
    tr = exp.trace
    dd = tr.dtt5()
    noise = tr.dtt_noise()
    bound = _alpha_trace_integral(exp)
    degenerate = abs(bound) <= 1e-14 and abs(dd) <= max(10 * noise, 1e-12)
    margin = dd - bound
    passed = degenerate or (dd > 0 and margin >= -slack * abs(bound) - noise)
    return {"d2E_dt2": float(dd), "alpha_bound": float(bound),
            "margin": float(margin), "noise": float(noise),
            "degenerate": bool(degenerate), "passed": bool(passed)}


def chained_lower_bound(exp):
    """int alpha Tr dmu >= (2/3) int (|q|^2/phi_0^2) dmu (surface chain)."""
    ctx = exp.ctx
    bound = _alpha_trace_integral(exp)
    Q_quad = (np.abs(ctx.q_quad[0]) ** 2
              / mf.phi0(ctx.quad_anchors) ** 2).reshape(
        ctx.mesh.quad_points.shape)
    if exp.domain == "surface":
        rhs = (2.0 / 3.0) * integrate(ctx.mesh, ctx.base_metric, Q_quad)
    else:
        loop = exp.loop0
        qv = np.abs(ctx.qd.q(loop.points)) ** 2 / mf.phi0(loop.points) ** 2
        ds = loop.ell0 / loop.samples
        rhs = (2.0 / 3.0) * float(np.sum(qv) * ds)
    return {"alpha_integral": float(bound), "q_integral_bound": float(rhs),
            "passed": bool(bound >= rhs * (1.0 - 0.03))}


def cauchy_schwarz_check(exp, slack=0.05):
    """(dE/dt)^2 <= 6 E d2E/dt2 with slack on FD values."""
    tr = exp.trace
    lhs = tr.dt() ** 2
    rhs = 6.0 * tr.E[0.0] * tr.dtt5()
    passed = lhs <= rhs * (1.0 + slack) + tr.dtt_noise()
    return {"lhs": float(lhs), "rhs": float(rhs), "passed": bool(passed)}


def power_convexity_sweep(exp, c_values=(5.0 / 6.0, 0.9, 1.0)):
    """FD d2(E^c)/dt2 at 0 per power; >= -noise at 5/6, > 0 above."""
    tr = exp.trace
    rows = []
    for c in c_values:
        val, noise = tr.power_dtt(c)
        if abs(c - 5.0 / 6.0) < 1e-12:
            passed = val >= -max(noise, 1e-12)
            kind = "boundary"
        elif c > 5.0 / 6.0:
            passed = val > 0.0
            kind = "strict"
        else:
            passed = True
            kind = "exploratory"
        rows.append({"c": float(c), "d2_Ec": float(val),
                     "noise": float(noise), "kind": kind,
                     "passed": bool(passed)})
    margins = {r["c"]: r["d2_Ec"] for r in rows}
    return {"rows": rows, "passed": bool(all(r["passed"] for r in rows)),
            "margins": margins}


# ---------------------------------------------------------------------------
# curve-system energy (demo)
# ---------------------------------------------------------------------------

@dataclass
class CurveSystemEnergy:
    """E(.) = sum_i l_i(.)^2 / l_i(0) for a fixed system of classes."""

    ctx: object
    classes: list
    loops: list = field(default_factory=list)
    base_lengths: list = field(default_factory=list)

    def __post_init__(self):
        for cls in self.classes:
            loop = hm.geodesic_representative(self.ctx.group, cls)
            self.loops.append(loop)
            self.base_lengths.append(loop.ell0)

    def energy_at_z(self, z, target=None, w_nodal=None):
        ctx = self.ctx
        if target is None:
            target, w_nodal, _ = ctx.liouville_target(complex(z))
        total = 0.0
        lengths = []
        for loop, l0 in zip(self.loops, self.base_lengths):
            _, ell, _ = hm.shorten_curve(ctx, loop, target, w_nodal=w_nodal)
            lengths.append(ell)
            total += ell ** 2 / l0
        return total, lengths

    def energy_at_t(self, t):
        total = 0.0
        for loop, l0 in zip(self.loops, self.base_lengths):
            _, ell, _ = hm.shorten_curve(self.ctx, loop, mf.WolfFamily(t))
            total += ell ** 2 / l0
        return total


def grid_minimize(system, radius, n=5):
    """Evaluate the system energy on an n x n z-grid and locate the argmin.

    Returns the grid table, the argmin, and a discrete convexity audit along
    the two grid lines through it.
    """
    ctx = system.ctx
    axis_pts = np.linspace(-radius, radius, n)
    table = {}
    for y in axis_pts:
        for x in axis_pts:
            z = complex(x, y)
            target, w_nodal, _ = ctx.liouville_target(z)
            E, _ = system.energy_at_z(z, target=target, w_nodal=w_nodal)
            table[z] = E
    zmin = min(table, key=lambda z: table[z])
    i = int(np.argmin(np.abs(axis_pts - zmin.real)))
    j = int(np.argmin(np.abs(axis_pts - zmin.imag)))
    def second_diffs(values):
        return [values[k + 1] - 2 * values[k] + values[k - 1]
                for k in range(1, len(values) - 1)]
    row = [table[complex(x, axis_pts[j])] for x in axis_pts]
    col = [table[complex(axis_pts[i], y)] for y in axis_pts]
    audit = {"row_second_diffs": second_diffs(row),
             "col_second_diffs": second_diffs(col)}
    interior = 0 < i < n - 1 and 0 < j < n - 1
    return {"table": table, "argmin": zmin, "interior": bool(interior),
            "audit": audit}
