"""Hyperbolic base metric, deformation families, Liouville solves.

Weight conventions (fixed throughout):

    phi_w  = phi_{v vbar} = 2/(1-|v|^2)^2      fiber Kahler weight,
                                                d_v d_vbar log phi_w = phi_w
    phi_0  = 2 phi_w    = 4/(1-|v|^2)^2        Riemannian density, metric
                                                phi_0 (dx^2 + dy^2), K = -1

Deformation families are stored through their complex components
(Phi_vv, Phi_vvb) with respect to dv^2 and dv dvbar:

    g = Phi_vv dv^2 + conj(Phi_vv) dvbar^2 + Phi_vvb (dv x dvbar + dvbar x dv)

    g11 = 2 Phi_vvb + 2 Re Phi_vv,  g22 = 2 Phi_vvb - 2 Re Phi_vv,
    g12 = -2 Im Phi_vv.
"""

import numpy as np

from .errors import DeformationTooLarge, NewtonDiverged
from .fem import (MetricField, assemble_load, assemble_mass,
                  assemble_stiffness, lumped_mass_vector)
from .jets import Jet2


# -- base weights ----------------------------------------------------------

def phi0(v):
    """Riemannian density 4/(1-|v|^2)^2."""
    v = np.asarray(v, dtype=complex)
    return 4.0 / (1.0 - np.abs(v) ** 2) ** 2


def phi_weight(v):
    """Fiber weight 2/(1-|v|^2)^2."""
    return 0.5 * phi0(v)


def phi_v(v):
    """d_v log phi_w = 2 conj(v)/(1-|v|^2) (also d_v log phi_0)."""
    v = np.asarray(v, dtype=complex)
    return 2.0 * np.conj(v) / (1.0 - np.abs(v) ** 2)


def s_jet(v):
    """Jet of 1 - |v|^2."""
    v = np.asarray(v, dtype=complex)
    z = np.zeros_like(v)
    return Jet2(1.0 - np.abs(v) ** 2, -np.conj(v), -v, z, z - 1.0, z)


def phi0_jet(v):
    s = s_jet(v)
    return (s * s).reciprocal() * 4.0


class MetricWeight:
    """Closed-form evaluators of the base hyperbolic weights."""

    def weight(self, v):
        return phi_weight(v)

    def density(self, v):
        return phi0(v)

    def d_log_weight(self, v):
        return phi_v(v)

    def curvature_identity_residual(self, v):
        """|d_v d_vbar log phi_w - phi_w| at points v."""
        j = phi0_jet(v) * 0.5
        log_vb = j.fvb / j.f - j.fv * j.fb / (j.f * j.f)
        return np.abs(log_vb - j.f)


# -- deformation families ---------------------------------------------------

class BeltramiField:
    """Harmonic-representative Beltrami field nu = conj(q)/phi_0."""

    def __init__(self, qd, sup_norm):
        self.qd = qd
        self.sup_norm = float(sup_norm)

    def nu(self, v):
        return np.conj(self.qd.q(v)) / phi0(v)

    def automorphy_defect(self, v):
        """Transformation defect of nu as a (-1,1)-tensor over the pairings."""
        worst = 0.0
        nv = self.nu(v)
        for g in self.qd.group.generators:
            gp = g.deriv(v)
            lhs = self.nu(g.apply(v)) * np.conj(gp) / gp
            worst = max(worst, float(np.max(np.abs(lhs - nv))))
        return worst


class TargetMetric:
    """Common interface: complex component jets (vv, vvb) at chart points.

    `q_jet` is a holomorphic Jet2 of the quadratic differential at the
    points; `field_jets` maps names of mesh-backed scalars (w, alpha) to
    real-valued Jet2 models at the same points.
    """

    uses_fields = ()

    def component_jets(self, p, q_jet, field_jets):
        raise NotImplementedError

    def components(self, p, qd=None, field_jets=None):
        """Exact evaluation at arbitrary points (audit path)."""
        q_jet = qd.jet(p) if qd is not None else None
        return self.component_jets(np.asarray(p, dtype=complex), q_jet,
                                   field_jets or {})


class BaseHyperbolic(TargetMetric):
    """e^{2s} times the base hyperbolic metric (s = 0: the base itself)."""

    def __init__(self, log_scale=0.0):
        self.log_scale = float(log_scale)

    def component_jets(self, p, q_jet, field_jets):
        vvb = phi0_jet(p) * (0.5 * np.exp(2.0 * self.log_scale))
        vv = Jet2.constant(0.0, like=p)
        return vv, vvb


class EuclideanChart(TargetMetric):
    """Flat chart metric dx^2 + dy^2."""

    def component_jets(self, p, q_jet, field_jets):
        return Jet2.constant(0.0, like=p), Jet2.constant(0.5, like=p)


class BeltramiFamily(TargetMetric):
    """g_z = phi_0 |dv + z nu dvbar|^2 with nu = conj(q)/phi_0.

    Components: Phi_vv = conj(z) q,  Phi_vvb = (phi_0/2)(1 + |z nu|^2).
    """

    def __init__(self, z, sup_nu):
        self.z = complex(z)
        self.sup_nu = float(sup_nu)
        if abs(self.z) * self.sup_nu > 0.5:
            raise DeformationTooLarge(
                f"|z| sup|nu| = {abs(self.z) * self.sup_nu:.3f} > 0.5")

    def component_jets(self, p, q_jet, field_jets):
        ph = phi0_jet(p)
        vv = q_jet * np.conj(self.z)
        nu = q_jet.conj() * ph.reciprocal()
        vvb = (1.0 + (nu * nu.conj()) * abs(self.z) ** 2) * ph * 0.5
        return vv, (vvb + vvb.conj()) * 0.5


class LiouvilleTarget(TargetMetric):
    """e^{2w} g_z: a Beltrami slice corrected to curvature -1."""

    uses_fields = ("w",)

    def __init__(self, z, sup_nu):
        self.inner = BeltramiFamily(z, sup_nu)
        self.z = self.inner.z

    def component_jets(self, p, q_jet, field_jets):
        vv, vvb = self.inner.component_jets(p, q_jet, field_jets)
        w = field_jets["w"]
        factor = (w * 2.0).exp()
        factor = (factor + factor.conj()) * 0.5
        return vv * factor, vvb * factor


class WolfFamily(TargetMetric):
    """Second-order hyperbolic-family expansion along a quadratic differential.

    Phi_vv = t q,  Phi_vvb = (phi_0/2)(1 + t^2(|q|^2/phi_0^2 + alpha)).
    """

    uses_fields = ("alpha",)

    def __init__(self, t):
        self.t = float(t)

    def component_jets(self, p, q_jet, field_jets):
        ph = phi0_jet(p)
        vv = q_jet * self.t
        Q = q_jet * q_jet.conj() * (ph * ph).reciprocal()
        alpha = field_jets["alpha"]
        vvb = ph * 0.5 * (1.0 + (Q + alpha) * self.t ** 2)
        return vv, (vvb + vvb.conj()) * 0.5


def components_to_real(vv, vvb):
    """(g11, g12, g22) arrays from complex component jets (values only)."""
    re_vv = np.real(vv.f)
    im_vv = np.imag(vv.f)
    p = np.real(vvb.f)
    return 2.0 * p + 2.0 * re_vv, -2.0 * im_vv, 2.0 * p - 2.0 * re_vv


def metric_field_from_target(mesh, target, q_jet=None, field_jets=None,
                             name=""):
    """Sample a target family at the mesh quadrature points."""
    p = mesh.quad_points.ravel()
    vv, vvb = target.component_jets(p, q_jet, field_jets or {})
    g11, g12, g22 = components_to_real(vv, vvb)
    shape = mesh.quad_points.shape
    return MetricField(g11.reshape(shape), g12.reshape(shape),
                       g22.reshape(shape), evaluator=None, name=name)


def base_metric_field(mesh, log_scale=0.0):
    return metric_field_from_target(mesh, BaseHyperbolic(log_scale),
                                    name="base")


def euclidean_metric_field(mesh):
    p = mesh.quad_points
    one = np.ones_like(p, dtype=float)
    return MetricField(one, 0.0 * one, one, name="euclidean")


# -- curvature ---------------------------------------------------------------

def gauss_curvature_from_jets(vv, vvb):
    """Pointwise Gauss curvature by the Brioschi formula from component jets."""
    E = vvb * 2.0 + vv + vv.conj()
    G = vvb * 2.0 - vv - vv.conj()
    F = (vv - vv.conj()) * 1j
    e, ex, ey, exx, exy, eyy = E.real_parts()
    g, gx, gy, gxx, gxy, gyy = G.real_parts()
    f, fx, fy, fxx, fxy, fyy = F.real_parts()
    det = e * g - f * f
    a11 = -0.5 * eyy + fxy - 0.5 * gxx
    a12 = 0.5 * ex
    a13 = fx - 0.5 * ey
    a21 = fy - 0.5 * gx
    a31 = 0.5 * gy
    det1 = (a11 * det - a12 * (a21 * g - f * a31)
            + a13 * (a21 * f - e * a31))
    b12 = 0.5 * ey
    b13 = 0.5 * gx
    det2 = -b12 * (b12 * g - f * b13) + b13 * (b12 * f - e * b13)
    return (det1 - det2) / det ** 2


def gauss_curvature(target, p, qd=None, field_jets=None):
    """Curvature of a closed-form family at chart points p."""
    q_jet = qd.jet(np.asarray(p, dtype=complex)) if qd is not None else None
    vv, vvb = target.component_jets(np.asarray(p, dtype=complex), q_jet,
                                    field_jets or {})
    return gauss_curvature_from_jets(vv, vvb)


# -- Liouville solve ---------------------------------------------------------

def solve_liouville(mesh, metric, curvature_quad, tol=1e-10, max_iter=50,
                    max_halvings=25):
    """Newton solve of Delta_g w = K_g + e^{2w} on the glued surface.

    metric: MetricField of g at quadrature points.
    curvature_quad: K_g sampled at quadrature points.
    Returns (w_nodal, residual_history).
    """
    K = assemble_stiffness(mesh, metric)
    nd = mesh.n_dofs
    w = np.zeros(nd)
    history = []

    def residual(wv):
        e2w = np.exp(2.0 * mesh.scalar_at_quad(wv))
        return K @ wv + assemble_load(mesh, metric, curvature_quad + e2w)

    r = residual(w)
    rn = float(np.linalg.norm(r))
    history.append(rn)
    from scipy.sparse.linalg import splu
    for _ in range(max_iter):
        if rn <= tol:
            break
        e2w = np.exp(2.0 * mesh.scalar_at_quad(w))
        J = K + assemble_mass(mesh, metric, fiber_weight=2.0 * e2w)
        step = splu(J.tocsc()).solve(r)
        lam = 1.0
        for _ in range(max_halvings):
            w_try = w - lam * step
            r_try = residual(w_try)
            rn_try = float(np.linalg.norm(r_try))
            if rn_try < rn:
                break
            lam *= 0.5
        else:
            raise NewtonDiverged(
                f"Liouville damping exhausted at residual {rn:.3e}")
        w, r, rn = w_try, r_try, rn_try
        history.append(rn)
    if rn > tol:
        raise NewtonDiverged(
            f"Liouville Newton stalled at residual {rn:.3e} after "
            f"{len(history) - 1} steps")
    return w, history


def liouville_curvature_audit(mesh, metric, curvature_quad, w):
    """Curvature of e^{2w} g at quadrature points: e^{-2w}(K_g - Delta_g w)."""
    K = assemble_stiffness(mesh, metric)
    ml = lumped_mass_vector(mesh, metric)
    lap_w = -(K @ w) / ml
    lap_quad = mesh.scalar_at_quad(lap_w)
    w_quad = mesh.scalar_at_quad(w)
    return np.exp(-2.0 * w_quad) * (curvature_quad - lap_quad)


# -- Wolf expansion ----------------------------------------------------------

def wolf_alpha(mesh, q_vertex, base_metric=None):
    """Solve (Delta + 2) alpha = 2|q|^2/phi_0^2 with the nonneg Laplacian.

    Lumped mass keeps the discrete solve monotone, so alpha inherits the
    pointwise lower bound |q|^2/(3 phi_0^2) of the continuum solution.
    """
    if base_metric is None:
        base_metric = base_metric_field(mesh)
    K = assemble_stiffness(mesh, base_metric)
    ml = lumped_mass_vector(mesh, base_metric)
    # nodal rhs sampled at master vertex positions
    Q_node = np.abs(q_vertex) ** 2 / phi0(mesh.vertices) ** 2
    masters = mesh.master == np.arange(len(mesh.vertices))
    Q_dof = np.zeros(mesh.n_dofs)
    Q_dof[mesh.dof[masters]] = Q_node[masters]
    from scipy.sparse.linalg import splu
    from scipy import sparse as sp
    A = (K + 2.0 * sp.diags(ml)).tocsc()
    alpha = splu(A).solve(ml * 2.0 * Q_dof)
    return alpha, Q_dof


def wolf_positivity_threshold(mesh, q_quad):
    """Largest |t| with Phi_t positive definite, ignoring the helpful t^2 term."""
    ph = phi0(mesh.quad_points.ravel())
    qq = np.abs(np.asarray(q_quad).ravel())
    mask = qq > 1e-14
    return float(np.min(ph[mask] / (2.0 * qq[mask])))
