"""Harmonic maps into deformed hyperbolic structures.

Surface domain: discrete energy minimizers homotopic to the identity,
parametrized by nodal image points in the disk chart with deck-equivariant
slave transport.  Circle domain: discrete geodesics of the deformed metric
in a fixed free-homotopy class.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .context import LinearScalar
from .errors import LineSearchFailed, NoConvergence
from .fuchsian import axis, hyperbolic_distance, translation_length
from .jets import Jet2
from .mesh import _QP_BARY

_GAUSS3 = (np.array([0.5 - np.sqrt(0.15), 0.5, 0.5 + np.sqrt(0.15)]),
           np.array([5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0]))


# ---------------------------------------------------------------------------
# domain specs and states
# ---------------------------------------------------------------------------

@dataclass
class SurfaceDomain:
    mesh: object
    metric: object          # MetricField of the domain metric


@dataclass
class CircleDomain:
    geo_class: object       # GeodesicClass
    samples: int = 512


@dataclass
class HarmonicMapState:
    """Converged discrete harmonic map and its derivative samples."""

    mesh: object
    target: object
    U: np.ndarray            # merged-DOF image points
    energy: float
    residual: float
    iterations: int
    energy_history: list
    Jx: np.ndarray           # per-triangle du/dx (complex)
    Jy: np.ndarray
    p_quad: np.ndarray       # image points at quadrature nodes (flat)
    domain: object = None

    def displacement_sup(self):
        masters = self.mesh.master == np.arange(len(self.mesh.vertices))
        ident = self.mesh.vertices[masters]
        return float(np.max(np.abs(self.U - ident)))


# ---------------------------------------------------------------------------
# surface solver
# ---------------------------------------------------------------------------

class SurfaceEnergy:
    """Discrete map energy, gradient and Newton matrix for a target family."""

    def __init__(self, ctx, target, w_nodal=None, domain_metric=None):
        self.ctx = ctx
        self.mesh = ctx.mesh
        self.target = target
        self.models = ctx.field_models(target, w_nodal)
        dm = domain_metric if domain_metric is not None else ctx.base_metric
        self.wq = self.mesh.quad_weight * dm.sqrt_det          # (nt, 3)
        self.g11 = dm.inv11
        self.g12 = dm.inv12
        self.g22 = dm.inv22
        self._slave_setup()

    def _slave_setup(self):
        mesh = self.mesh
        nv = len(mesh.vertices)
        self.is_master = mesh.master == np.arange(nv)
        inv_a = np.ones(nv, dtype=complex)
        inv_b = np.zeros(nv, dtype=complex)
        for i in range(nv):
            t = mesh.transition[i]
            if t is not None:
                ti = t.inverse()
                inv_a[i] = ti.a
                inv_b[i] = ti.b
        self.inv_a = inv_a
        self.inv_b = inv_b
        # masters sorted by dof id -> identity map DOF vector
        order = np.argsort(mesh.dof[self.is_master])
        self.identity_U = mesh.vertices[self.is_master][order]

    def disk_values(self, U):
        """Nodal image at every disk vertex, plus d(value)/d(master DOF)."""
        mesh = self.mesh
        Ud = U[mesh.dof]
        den = np.conj(self.inv_b) * Ud + np.conj(self.inv_a)
        u = (self.inv_a * Ud + self.inv_b) / den
        c = 1.0 / den ** 2
        return u, c

    def components_at(self, p_flat, order=2):
        q_jet = self.ctx.taylor.jet(p_flat)
        fj = {k: m.jet(p_flat) for k, m in self.models.items()}
        return self.target.component_jets(p_flat, q_jet, fj)

    def evaluate(self, U, order=1):
        """Energy; order>=1 adds the gradient; order>=2 the Newton matrix."""
        mesh = self.mesh
        tri = mesh.triangles
        u, c = self.disk_values(U)
        ut = u[tri]                       # (nt, 3)
        ct = c[tri]
        B = _QP_BARY                      # (3q, 3n)
        p = np.einsum("qm,tm->tq", B, ut)
        Dx = mesh.grad_basis[:, :, 0]
        Dy = mesh.grad_basis[:, :, 1]
        Jx = np.sum(Dx * ut, axis=1)      # (nt,)
        Jy = np.sum(Dy * ut, axis=1)
        p_flat = p.ravel()
        vv, vvb = self.components_at(p_flat, order=order)

        shape = p.shape
        Vv = vv.f.reshape(shape)
        Vb = np.real(vvb.f).reshape(shape)
        g11, g12, g22 = self.g11, self.g12, self.g22
        JxQ = Jx[:, None]
        JyQ = Jy[:, None]
        GJx = g11 * JxQ + g12 * JyQ
        GJy = g12 * JxQ + g22 * JyQ
        S = JxQ * GJx + JyQ * GJy
        T = np.real(JxQ * np.conj(GJx) + JyQ * np.conj(GJy))
        F = np.real(Vv * S) + Vb * T
        E = float(np.sum(self.wq * F))
        if order == 0:
            return E, None, None, (p_flat, Jx, Jy)

        vv_v = vv.fv.reshape(shape)
        vv_b = vv.fb.reshape(shape)
        vb_v = vvb.fv.reshape(shape)
        F_Jx = Vv * GJx + Vb * np.conj(GJx)
        F_Jy = Vv * GJy + Vb * np.conj(GJy)
        F_p = 0.5 * (vv_v * S + np.conj(vv_b) * np.conj(S)) + vb_v * T

        w = self.wq
        # dE/du_n per triangle node (before slave transport)
        dE_raw = (np.einsum("tq,qn->tn", w * F_p, B)
                  + np.sum(w * F_Jx, axis=1)[:, None] * Dx
                  + np.sum(w * F_Jy, axis=1)[:, None] * Dy)
        dE = dE_raw * ct
        grad = np.zeros(mesh.n_dofs, dtype=complex)
        np.add.at(grad, mesh.dof[tri].ravel(), 2.0 * np.conj(dE).ravel())
        if order == 1:
            return E, grad, None, (p_flat, Jx, Jy)

        vv_vv = vv.fvv.reshape(shape)
        vv_vb = vv.fvb.reshape(shape)
        vv_bb = vv.fbb.reshape(shape)
        vb_vv = vvb.fvv.reshape(shape)
        vb_vb = np.real(vvb.fvb).reshape(shape)

        A_pp = 0.5 * (vv_vv * S + np.conj(vv_bb) * np.conj(S)) + vb_vv * T
        A_pJx = vv_v * GJx + vb_v * np.conj(GJx)
        A_pJy = vv_v * GJy + vb_v * np.conj(GJy)
        B_pp = np.real(vv_vb * S) + vb_vb * T
        B_pJx = np.conj(vv_b) * np.conj(GJx) + vb_v * GJx
        B_pJy = np.conj(vv_b) * np.conj(GJy) + vb_v * GJy

        wB = w[:, :, None] * B[None, :, :]                  # (nt, q, n)
        # A-blocks (symmetric part)
        A_loc = np.einsum("tqn,tq,tqm->tnm", wB, A_pp, B[None, :, :])
        tmpx = np.einsum("tqn,tq->tn", wB, A_pJx)
        tmpy = np.einsum("tqn,tq->tn", wB, A_pJy)
        A_loc += tmpx[:, :, None] * Dx[:, None, :] + Dx[:, :, None] * tmpx[:, None, :]
        A_loc += tmpy[:, :, None] * Dy[:, None, :] + Dy[:, :, None] * tmpy[:, None, :]
        wVv = np.sum(w * Vv, axis=1)
        wVv11 = np.sum(w * Vv * g11, axis=1)
        wVv12 = np.sum(w * Vv * g12, axis=1)
        wVv22 = np.sum(w * Vv * g22, axis=1)
        A_loc += (wVv11[:, None, None] * Dx[:, :, None] * Dx[:, None, :]
                  + wVv12[:, None, None] * (Dx[:, :, None] * Dy[:, None, :]
                                            + Dy[:, :, None] * Dx[:, None, :])
                  + wVv22[:, None, None] * Dy[:, :, None] * Dy[:, None, :])
        A_loc = A_loc * ct[:, :, None] * ct[:, None, :]

        # B-blocks (Hermitian part): row index not conjugated, column conjugated
        B_loc = np.einsum("tqn,tq,tqm->tnm", wB, B_pp, B[None, :, :]).astype(complex)
        tpx = np.einsum("tqn,tq->tn", wB, B_pJx)
        tpy = np.einsum("tqn,tq->tn", wB, B_pJy)
        # a = p, b = J: L_p-row times conj(L_J-col)
        B_loc += tpx[:, :, None] * Dx[:, None, :] + np.conj(tpx)[:, None, :] * Dx[:, :, None]
        B_loc += tpy[:, :, None] * Dy[:, None, :] + np.conj(tpy)[:, None, :] * Dy[:, :, None]
        wVb11 = np.sum(w * Vb * g11, axis=1)
        wVb12 = np.sum(w * Vb * g12, axis=1)
        wVb22 = np.sum(w * Vb * g22, axis=1)
        B_loc += (wVb11[:, None, None] * Dx[:, :, None] * Dx[:, None, :]
                  + wVb12[:, None, None] * (Dx[:, :, None] * Dy[:, None, :]
                                            + Dy[:, :, None] * Dx[:, None, :])
                  + wVb22[:, None, None] * Dy[:, :, None] * Dy[:, None, :])
        B_loc = B_loc * ct[:, :, None] * np.conj(ct)[:, None, :]

        # curvature of the slave transports: u_i = gamma(U_m) contributes
        # dF/du_i * gamma'' to the holomorphic-holomorphic diagonal
        nodal_dE = np.zeros(len(mesh.vertices), dtype=complex)
        np.add.at(nodal_dE, tri.ravel(), dE_raw.ravel())
        Ud = U[mesh.dof]
        den = np.conj(self.inv_b) * Ud + np.conj(self.inv_a)
        gamma2 = -2.0 * np.conj(self.inv_b) / den ** 3
        A_diag = np.zeros(mesh.n_dofs, dtype=complex)
        np.add.at(A_diag, mesh.dof, nodal_dE * gamma2)

        H = self._assemble_real_hessian(A_loc, B_loc, A_diag)
        return E, grad, H, (p_flat, Jx, Jy)

    def _assemble_real_hessian(self, A_loc, B_loc, A_diag=None):
        """2N x 2N real Newton matrix from complex A (sym) and B (herm) blocks."""
        mesh = self.mesh
        tri = mesh.triangles
        nt, _, _ = A_loc.shape
        dof = mesh.dof[tri]                                 # (nt, 3)
        blocks = np.empty((nt, 3, 3, 2, 2))
        ReA, ImA = A_loc.real, A_loc.imag
        ReB, ImB = B_loc.real, B_loc.imag
        blocks[..., 0, 0] = ReA + ReB
        blocks[..., 0, 1] = -ImA + ImB
        blocks[..., 1, 0] = -ImA - ImB
        blocks[..., 1, 1] = -ReA + ReB
        rows = np.empty((nt, 3, 3, 2, 2), dtype=np.int64)
        cols = np.empty_like(rows)
        r2 = 2 * dof
        rows[..., 0, 0] = r2[:, :, None]
        rows[..., 0, 1] = r2[:, :, None]
        rows[..., 1, 0] = r2[:, :, None] + 1
        rows[..., 1, 1] = r2[:, :, None] + 1
        cols[..., 0, 0] = r2[:, None, :]
        cols[..., 1, 0] = r2[:, None, :]
        cols[..., 0, 1] = r2[:, None, :] + 1
        cols[..., 1, 1] = r2[:, None, :] + 1
        n2 = 2 * mesh.n_dofs
        H = sparse.csr_matrix(
            (2.0 * blocks.ravel(), (rows.ravel(), cols.ravel())),
            shape=(n2, n2))
        if A_diag is not None and np.any(A_diag != 0.0):
            idx = np.arange(mesh.n_dofs)
            dr = np.concatenate([2 * idx, 2 * idx, 2 * idx + 1, 2 * idx + 1])
            dc = np.concatenate([2 * idx, 2 * idx + 1, 2 * idx, 2 * idx + 1])
            dv = np.concatenate([A_diag.real, -A_diag.imag,
                                 -A_diag.imag, -A_diag.real])
            H = H + sparse.csr_matrix((2.0 * dv, (dr, dc)), shape=(n2, n2))
        return H

    def residual_norm(self, grad, ml):
        return float(np.sqrt(np.sum(np.abs(grad) ** 2 / ml)))


def solve_harmonic_identity(ctx, target, w_nodal=None, domain_metric=None,
                            tol_factor=1e-9, max_iter=60, descent_first=0,
                            U0=None):
    """Energy minimizer homotopic to the identity (Newton with line search).

    tol_factor gates the dual-norm residual at tol_factor * E; the state
    records the solve history (energy strictly decreasing).
    """
    fe = SurfaceEnergy(ctx, target, w_nodal=w_nodal, domain_metric=domain_metric)
    mesh = ctx.mesh
    from .fem import lumped_mass_vector
    ml = lumped_mass_vector(mesh, ctx.base_metric)
    U = fe.identity_U.copy() if U0 is None else U0.copy()
    E, grad, _, _ = fe.evaluate(U, order=1)
    history = [E]
    res = fe.residual_norm(grad, ml)
    lam_reg = 0.0

    # optional preconditioned-descent warm-up (alternate schedule)
    if descent_first > 0:
        from .fem import assemble_stiffness
        Kpre = assemble_stiffness(mesh, ctx.base_metric)
        P = splu((Kpre + sparse.diags(ml)).tocsc())
        for _ in range(descent_first):
            step = P.solve(grad.real) + 1j * P.solve(grad.imag)
            U_try, E_try = _armijo(fe, U, E, grad, -step)
            U, E = U_try, E_try
            _, grad, _, _ = fe.evaluate(U, order=1)
            history.append(E)
            res = fe.residual_norm(grad, ml)

    it = 0
    while res > tol_factor * max(E, 1.0) and it < max_iter:
        E, grad, H, _ = fe.evaluate(U, order=2)
        g_real = np.empty(2 * mesh.n_dofs)
        g_real[0::2] = grad.real
        g_real[1::2] = grad.imag
        ml2 = np.repeat(ml, 2)
        for _ in range(30):
            try:
                A = H + lam_reg * sparse.diags(ml2) if lam_reg > 0 else H
                d = splu(A.tocsc()).solve(-g_real)
            except RuntimeError:
                lam_reg = max(2.0 * lam_reg, 1e-8)
                continue
            if np.dot(d, g_real) < 0:
                break
            lam_reg = max(2.0 * lam_reg, 1e-8)
        else:
            raise NoConvergence("could not form a descent direction")
        step = d[0::2] + 1j * d[1::2]
        U, E = _armijo(fe, U, E, grad, step)
        history.append(E)
        _, grad, _, _ = fe.evaluate(U, order=1)
        res = fe.residual_norm(grad, ml)
        lam_reg *= 0.25
        if lam_reg < 1e-14:
            lam_reg = 0.0
        it += 1
    if res > tol_factor * max(E, 1.0):
        raise NoConvergence(
            f"harmonic solve stalled: residual {res:.3e} > "
            f"{tol_factor:.1e} * E after {it} iterations")
    E, grad, _, data = fe.evaluate(U, order=1)
    p_flat, Jx, Jy = data
    return HarmonicMapState(
        mesh=mesh, target=target, U=U, energy=E,
        residual=fe.residual_norm(grad, ml), iterations=it,
        energy_history=history, Jx=Jx, Jy=Jy, p_quad=p_flat)


def _armijo(fe, U, E, grad, step, c1=1e-4, max_halvings=40):
    slope = np.sum(grad.real * step.real + grad.imag * step.imag)
    lam = 1.0
    for _ in range(max_halvings):
        U_try = U + lam * step
        E_try, _, _, _ = fe.evaluate(U_try, order=0)
        if E_try <= E + c1 * lam * slope and E_try < E + 1e-15 * abs(E):
            return U_try, E_try
        lam *= 0.5
    raise LineSearchFailed(f"no decrease along step (slope {slope:.3e})")


# ---------------------------------------------------------------------------
# circle machinery
# ---------------------------------------------------------------------------

@dataclass
class CircleLoop:
    """Closed geodesic loop stored in fundamental-octagon charts.

    Node j lives in its own chart copy; segment j runs from points[j] to
    transitions[j](points[(j+1) % N]).  The composed transitions realize the
    deck element of the class.
    """

    geo_class: object
    deck: object                 # class deck element (holonomy)
    points: np.ndarray           # (N,) chart points inside the octagon
    ell0: float                  # reference (base geodesic) length
    base_velocity: np.ndarray    # unit-speed chart velocity at base points
    transitions: list            # per-segment MoebiusMap into chart j

    @property
    def samples(self):
        return len(self.points)

    def segment_ends(self, P):
        N = len(P)
        ends = np.empty(N, dtype=complex)
        for j in range(N):
            ends[j] = self.transitions[j].apply(P[(j + 1) % N])
        return ends


def geodesic_representative(group, geo_class, samples=512):
    """Exact arclength-sampled closed geodesic, wrapped into the octagon."""
    from .mesh import wrap_point
    m = group.word_to_map(geo_class.word)
    ell = translation_length(m)
    geo = axis(m)
    s = ell * np.arange(samples) / samples
    raw = geo.point(s)
    vel = geo.velocity(s)
    pts = np.empty(samples, dtype=complex)
    wraps = []
    for j in range(samples):
        q, gamma = wrap_point(complex(raw[j]), group)
        pts[j] = q
        wraps.append(gamma)
        vel[j] = gamma.deriv(complex(raw[j])) * vel[j]
    transitions = []
    for j in range(samples):
        if j < samples - 1:
            T = wraps[j].compose(wraps[j + 1].inverse())
        else:
            T = wraps[samples - 1].compose(m).compose(wraps[0].inverse())
        transitions.append(T)
    return CircleLoop(geo_class, m, pts, ell, vel, transitions)


def exact_polyline_length(loop, points=None):
    p = loop.points if points is None else points
    ends = loop.segment_ends(p)
    return float(np.sum(hyperbolic_distance(p, ends)))


class CurveMetric:
    """Target metric components along a loop, anchored at base-loop points."""

    def __init__(self, ctx, target, base_points, w_nodal=None):
        self.ctx = ctx
        self.target = target
        anchors = np.asarray(base_points, dtype=complex)
        self.anchors = anchors
        self.taylor, cells = ctx.curve_geometry(base_points)
        self.models = {}
        names = target.uses_fields
        if names:
            # anchors may leave the fundamental octagon; automorphic scalars
            # are read at the wrapped point, gradients pulled back by gamma'
            for name in names:
                nodal = w_nodal if name == "w" else ctx.alpha
                if nodal is None:
                    self.models[name] = LinearScalar.zero(anchors)
                    continue
                disk = ctx.mesh.P_scalar @ nodal
                vals = np.empty(len(anchors))
                gx = np.empty(len(anchors))
                gy = np.empty(len(anchors))
                for i, (t_idx, lam, gp) in enumerate(cells):
                    tri = ctx.mesh.triangles[t_idx]
                    vals[i] = float(np.dot(lam, disk[tri]))
                    gb = ctx.mesh.grad_basis[t_idx]
                    fv_in = 0.5 * (float(np.dot(disk[tri], gb[:, 0]))
                                   - 1j * float(np.dot(disk[tri], gb[:, 1])))
                    fv = fv_in * gp
                    gx[i] = 2.0 * fv.real
                    gy[i] = -2.0 * fv.imag
                self.models[name] = LinearScalar(anchors, vals, gx, gy)

    def seg_jets(self, c_points, seg_index):
        """Component jets at points c (one per segment Gauss node set)."""
        anchors_idx = seg_index
        q_jet = _taylor_at(self.taylor, c_points, anchors_idx)
        fj = {}
        for name, model in self.models.items():
            fj[name] = _linear_at(model, c_points, anchors_idx)
        return self.target.component_jets(c_points, q_jet, fj)


def _taylor_at(taylor, p, idx):
    d = p - taylor.anchors[idx]
    q0, q1, q2, q3 = (taylor.q0[idx], taylor.q1[idx], taylor.q2[idx],
                      taylor.q3[idx])
    q = q0 + d * (q1 + d * (0.5 * q2 + d * (q3 / 6.0)))
    qp = q1 + d * (q2 + d * (0.5 * q3))
    qpp = q2 + d * q3
    return Jet2.holomorphic(q, qp, qpp)


def _linear_at(model, p, idx):
    d = p - model.anchors[idx]
    val = model.value[idx] + model.gx[idx] * d.real + model.gy[idx] * d.imag
    fv = 0.5 * (model.gx[idx] - 1j * model.gy[idx]) + 0.0 * d
    z = np.zeros_like(fv)
    return Jet2(val.astype(complex), fv, np.conj(fv), z, z, z)


class LoopEnergy:
    """Gauss-quadrature map energy of a chart-wrapped loop.

    E(P) = (N/ell0) * sum_j <h(c)(D_j, D_j)>_gauss with segment j running
    from P_j to T_j(P_{j+1}).  Its minimizer is the discrete geodesic with
    metric-equal spacing, so the Hessian is nondegenerate (the length
    functional has soft sliding modes instead).
    """

    def __init__(self, curve_metric, loop):
        self.cm = curve_metric
        self.loop = loop
        self.N = loop.samples
        self.ell0 = float(loop.ell0)
        tau, wg = _GAUSS3
        self.tau = tau
        self.wg = wg
        self.seg_idx = np.repeat(np.arange(self.N), len(tau))

    def _segments(self, P):
        ends = self.loop.segment_ends(P)
        return ends - P, ends

    def _transition_factors(self, P):
        N = self.N
        c1 = np.empty(N, dtype=complex)
        c2 = np.empty(N, dtype=complex)
        for j in range(N):
            T = self.loop.transitions[j]
            pn = P[(j + 1) % N]
            c1[j] = T.deriv(pn)
            c2[j] = _moebius_second_deriv(T, pn)
        return c1, c2

    def seg_speeds(self, P):
        """Gauss-averaged h(D, D) per segment."""
        N = self.N
        D, _ = self._segments(P)
        c = (P[:, None] + self.tau[None, :] * D[:, None]).ravel()
        vv, vvb = self.cm.seg_jets(c, self.seg_idx)
        Dg = np.repeat(D, len(self.tau))
        S = 2.0 * np.real(vv.f * Dg ** 2) \
            + 2.0 * np.real(vvb.f) * np.abs(Dg) ** 2
        wgt = np.tile(self.wg, N)
        return np.sum((wgt * S).reshape(N, -1), axis=1)

    def length_from_energy(self, E):
        return float(np.sqrt(E * self.ell0))

    def value_grad(self, P, with_grad=True, with_hess=False):
        N = self.N
        tau, wg = self.tau, self.wg
        ng = len(tau)
        scale = N / self.ell0
        D, Pn = self._segments(P)
        c = (P[:, None] + tau[None, :] * D[:, None]).ravel()
        vv, vvb = self.cm.seg_jets(c, self.seg_idx)
        Dg = np.repeat(D, ng)
        Vb = np.real(vvb.f)
        S = 2.0 * np.real(vv.f * Dg ** 2) + 2.0 * Vb * np.abs(Dg) ** 2
        wgt = np.tile(wg, N) * scale
        E = float(np.sum(wgt * S))
        if not with_grad:
            return E, None, None
        # Wirtinger derivatives of S = vv D^2 + conj(vv D^2) + 2 vvb |D|^2
        S_D = 2.0 * vv.f * Dg + 2.0 * Vb * np.conj(Dg)
        S_c = (vv.fv * Dg ** 2 + np.conj(vv.fb) * np.conj(Dg) ** 2
               + 2.0 * vvb.fv * np.abs(Dg) ** 2)
        gD_flat = wgt * S_D
        gc_flat = wgt * S_c
        gD = np.sum(gD_flat.reshape(N, ng), axis=1)
        gc_tau = gc_flat.reshape(N, ng)
        gP_from_c = np.sum(gc_tau * (1.0 - tau)[None, :], axis=1)
        gPn_from_c = np.sum(gc_tau * tau[None, :], axis=1)
        c1, c2 = self._transition_factors(P)
        dE = -gD + gP_from_c
        end_contrib = gD + gPn_from_c
        dE += np.roll(end_contrib * c1, 1)
        grad = 2.0 * np.conj(dE)
        if not with_hess:
            return E, grad, None
        S_cc = (vv.fvv * Dg ** 2 + np.conj(vv.fbb) * np.conj(Dg) ** 2
                + 2.0 * vvb.fvv * np.abs(Dg) ** 2)
        S_ccb = (vv.fvb * Dg ** 2 + np.conj(vv.fvb) * np.conj(Dg) ** 2
                 + 2.0 * np.real(vvb.fvb) * np.abs(Dg) ** 2)
        S_cD = 2.0 * vv.fv * Dg + 2.0 * vvb.fv * np.conj(Dg)
        S_Dcb = 2.0 * vv.fb * Dg + 2.0 * np.conj(vvb.fv) * np.conj(Dg)
        A_cc = wgt * S_cc
        A_cD = wgt * S_cD
        A_DD = wgt * 2.0 * vv.f
        B_cc = wgt * S_ccb
        B_cD = wgt * np.conj(S_Dcb)
        B_Dc = wgt * S_Dcb
        B_DD = wgt * 2.0 * Vb

        lam_c = np.stack([1.0 - tau, tau], axis=1)     # (ng, 2)
        lam_D = np.array([-1.0, 1.0])
        A_blk = np.zeros((N, 2, 2), dtype=complex)
        B_blk = np.zeros((N, 2, 2), dtype=complex)
        Acc = A_cc.reshape(N, ng)
        AcD = A_cD.reshape(N, ng)
        ADD = np.sum(A_DD.reshape(N, ng), axis=1)
        Bcc = B_cc.reshape(N, ng)
        BcD = B_cD.reshape(N, ng)
        BDc = B_Dc.reshape(N, ng)
        BDD = np.sum(B_DD.reshape(N, ng), axis=1)
        for n in range(2):
            ln = lam_c[:, n]
            for mm in range(2):
                lm = lam_c[:, mm]
                A_blk[:, n, mm] = (Acc @ (ln * lm)
                                   + (AcD @ ln) * lam_D[mm]
                                   + (AcD @ lm) * lam_D[n]
                                   + ADD * lam_D[n] * lam_D[mm])
                B_blk[:, n, mm] = (Bcc @ (ln * lm)
                                   + (BcD @ ln) * lam_D[mm]
                                   + (BDc @ lm) * lam_D[n]
                                   + BDD * lam_D[n] * lam_D[mm])
        # local node 1 of segment j is node j+1 seen through T_j
        A_blk[:, :, 1] *= c1[:, None]
        A_blk[:, 1, :] *= c1[:, None]
        B_blk[:, :, 1] *= np.conj(c1)[:, None]
        B_blk[:, 1, :] *= c1[:, None]
        H = _chain_hessian(N, A_blk, B_blk)
        # transport curvature of the transitions (nonzero at hop segments)
        corr = end_contrib * c2
        nz = np.nonzero(corr)[0]
        if len(nz):
            rows, cols, vals = [], [], []
            for j in nz:
                node = (j + 1) % N
                blk = 2.0 * _real_block(corr[j], 0.0j)
                for i in range(2):
                    for k in range(2):
                        rows.append(2 * node + i)
                        cols.append(2 * node + k)
                        vals.append(blk[i, k])
            H = H + sparse.csr_matrix((vals, (rows, cols)),
                                      shape=(2 * N, 2 * N))
        return E, grad, H


def _moebius_second_deriv(m, w):
    den = np.conj(m.b) * w + np.conj(m.a)
    return -2.0 * np.conj(m.b) / den ** 3


def _real_block(A, B):
    """2x2 real block from symmetric-part A and Hermitian-part B scalars."""
    return np.array([[A.real + B.real, -A.imag + B.imag],
                     [-A.imag - B.imag, -A.real + B.real]])


def _chain_hessian(N, A_blk, B_blk):
    rows, cols, vals = [], [], []
    for j in range(N):
        nodes = (j, (j + 1) % N)
        for n in range(2):
            for mm in range(2):
                blk = 2.0 * _real_block(A_blk[j, n, mm], B_blk[j, n, mm])
                rn, cn = 2 * nodes[n], 2 * nodes[mm]
                for i in range(2):
                    for k in range(2):
                        rows.append(rn + i)
                        cols.append(cn + k)
                        vals.append(blk[i, k])
    return sparse.csr_matrix((vals, (rows, cols)), shape=(2 * N, 2 * N))


def _single_A_block(N, node, A):
    blk = 2.0 * _real_block(A, 0.0j)
    rows = [2 * node, 2 * node, 2 * node + 1, 2 * node + 1]
    cols = [2 * node, 2 * node + 1, 2 * node, 2 * node + 1]
    return sparse.csr_matrix((blk.ravel(), (rows, cols)), shape=(2 * N, 2 * N))


def _single_B_block(N, node, B):
    blk = 2.0 * _real_block(0.0j, B)
    rows = [2 * node, 2 * node, 2 * node + 1, 2 * node + 1]
    cols = [2 * node, 2 * node + 1, 2 * node, 2 * node + 1]
    return sparse.csr_matrix((blk.ravel(), (rows, cols)), shape=(2 * N, 2 * N))


def shorten_curve(ctx, loop, target, w_nodal=None, gtol_factor=1e-10,
                  max_iter=60, exact_base=False):
    """Discrete geodesic of the target metric in the loop's class.

    Minimizes the loop energy by damped Newton (the length functional has
    soft chord-sliding modes; the energy minimizer is the same geodesic with
    metric-equal spacing and a nondegenerate Hessian).  Returns
    (loop, length, energy) with length = sqrt(energy * ell0).

    With exact_base the hyperbolic polyline length of the base metric is
    used directly (the axis samples are already critical for it).
    """
    if exact_base:
        L = exact_polyline_length(loop)
        return loop, L, L ** 2 / loop.ell0
    cm = CurveMetric(ctx, target, loop.points, w_nodal=w_nodal)
    le = LoopEnergy(cm, loop)
    N = loop.samples
    # pin the tangential slide mode of node 0 (deck translation symmetry)
    a0 = loop.points[0]
    t0 = loop.base_velocity[0]
    t0 = t0 / abs(t0)
    mu = 10.0 * N / loop.ell0
    pin_A = mu * np.conj(t0) ** 2 / 4.0
    pin_B = mu / 4.0

    def full(P):
        E, g, H = le.value_grad(P, with_hess=True)
        s = np.real(np.conj(t0) * (P[0] - a0))
        Ep = E + 0.5 * mu * s * s
        g = g.copy()
        g[0] += mu * s * t0
        H = H + _single_A_block(N, 0, pin_A) + _single_B_block(N, 0, pin_B)
        return Ep, g, H

    def value_only(P):
        E, _, _ = le.value_grad(P, with_grad=False)
        s = np.real(np.conj(t0) * (P[0] - a0))
        return E + 0.5 * mu * s * s

    P = loop.points.copy()
    E, g, H = full(P)
    lam_reg = 0.0
    clamp = 0.05
    gtol = gtol_factor * max(E, 1.0)
    for it in range(max_iter):
        sup_g = float(np.max(np.abs(g)))
        if sup_g <= gtol:
            break
        g_real = np.empty(2 * N)
        g_real[0::2] = g.real
        g_real[1::2] = g.imag
        for _ in range(30):
            A = H + lam_reg * sparse.identity(2 * N) if lam_reg > 0 else H
            try:
                d = splu(A.tocsc()).solve(-g_real)
            except RuntimeError:
                lam_reg = max(4.0 * lam_reg, 1e-10)
                continue
            if np.dot(d, g_real) < 0:
                break
            lam_reg = max(4.0 * lam_reg, 1e-10)
        else:
            raise NoConvergence("curve shortening: no descent direction")
        step = d[0::2] + 1j * d[1::2]
        sup_step = float(np.max(np.abs(step)))
        if sup_step > clamp:
            # local metric models are only trusted near the anchors
            step *= clamp / sup_step
        lam = 1.0
        slope = float(np.sum(g.real * step.real + g.imag * step.imag))
        stalled = False
        for _ in range(40):
            P_try = P + lam * step
            E_try = value_only(P_try)
            if E_try <= E + 1e-4 * lam * slope:
                break
            lam *= 0.5
        else:
            # compute-limited stall: accept if the gradient is already tiny
            if sup_g <= 1e-7 * max(E, 1.0):
                stalled = True
            else:
                raise LineSearchFailed("curve shortening line search failed")
        if stalled:
            break
        P = P_try
        E, g, H = full(P)
        lam_reg *= 0.25
        if lam_reg < 1e-14:
            lam_reg = 0.0
    sup_g = float(np.max(np.abs(g)))
    if sup_g > 1e-7 * max(E, 1.0):
        raise NoConvergence(
            f"curve shortening gradient {sup_g:.2e} above tolerance")
    E_pure, _, _ = le.value_grad(P, with_grad=False)
    new_loop = CircleLoop(loop.geo_class, loop.deck, P, loop.ell0,
                          loop.base_velocity, loop.transitions)
    return new_loop, le.length_from_energy(E_pure), E_pure


def loop_gauss_length(ctx, loop, target, w_nodal=None):
    """Gauss-quadrature metric length of a polyline (independent of energy)."""
    cm = CurveMetric(ctx, target, loop.points, w_nodal=w_nodal)
    le = LoopEnergy(cm, loop)
    speeds = le.seg_speeds(loop.points)
    return float(np.sum(np.sqrt(np.maximum(speeds, 0.0))))


def normal_length_variation(ctx, loop, target, w_nodal=None):
    """Sup of the length first variation over metric-normal node moves.

    Tangential node slides only reparametrize the polyline; the geometric
    first variation of a discrete geodesic lives in the normal directions.
    """
    cm = CurveMetric(ctx, target, loop.points, w_nodal=w_nodal)
    le = LoopEnergy(cm, loop)
    P = loop.points
    N = loop.samples
    D, _ = le._segments(P)
    tang = D / np.abs(D)
    # length variation dL = dE / (2 * parametric speed) at equalized speeds
    E, g, _ = le.value_grad(P)
    speeds = np.sqrt(np.maximum(le.seg_speeds(P), 0.0)) * N / loop.ell0
    gl = g / (2.0 * np.maximum(speeds, 1e-300))
    normal_comp = gl - tang * np.real(np.conj(tang) * gl)
    return float(np.max(np.abs(normal_comp)))


# ---------------------------------------------------------------------------
# energy traces
# ---------------------------------------------------------------------------

class EnergyTrace:
    """Sampled E over a z- or t-grid with FD derivative helpers."""

    def __init__(self, mode, step):
        self.mode = mode
        self.step = float(step)
        self.E = {}
        self.ell = {}
        self.residual = {}
        self.iterations = {}

    def params(self):
        if self.mode == "z":
            return sorted(self.E, key=lambda z: (z.real, z.imag))
        return sorted(self.E)

    def add(self, p, E, ell=None, residual=0.0, iterations=0):
        key = complex(p) if self.mode == "z" else float(p)
        self.E[key] = float(E)
        if ell is not None:
            self.ell[key] = float(ell)
        self.residual[key] = float(residual)
        self.iterations[key] = int(iterations)

    # -- complex-grid stencils ----------------------------------------------

    def _f(self, z, table=None):
        table = self.E if table is None else table
        return table[complex(z)]

    def dz(self, h=None, table=None):
        h = h or self.step
        fx = (self._f(h, table) - self._f(-h, table)) / (2.0 * h)
        fy = (self._f(1j * h, table) - self._f(-1j * h, table)) / (2.0 * h)
        return 0.5 * (fx - 1j * fy)

    def dzzb(self, h=None, table=None):
        h = h or self.step
        s = (self._f(h, table) + self._f(-h, table)
             + self._f(1j * h, table) + self._f(-1j * h, table)
             - 4.0 * self._f(0.0, table))
        return s / (4.0 * h * h)

    def dz_noise(self, table=None):
        if not self._has_half():
            return 0.0
        return abs(self.dz(self.step, table) - self.dz(self.step / 2, table)) / 3.0

    def dzzb_noise(self, table=None):
        if not self._has_half():
            return 0.0
        return abs(self.dzzb(self.step, table)
                   - self.dzzb(self.step / 2, table)) / 3.0

    def mixed_xy(self, h=None, table=None):
        h = h or self.step
        s = (self._f(h + 1j * h, table) - self._f(-h + 1j * h, table)
             - self._f(h - 1j * h, table) + self._f(-h - 1j * h, table))
        return s / (4.0 * h * h)

    def _has_half(self):
        return complex(self.step / 2) in self.E

    # -- real-grid stencils ---------------------------------------------------

    def _g(self, t, table=None):
        table = self.E if table is None else table
        return table[float(t)]

    def dt(self, h=None, table=None):
        h = h or self.step
        return (self._g(h, table) - self._g(-h, table)) / (2.0 * h)

    def dtt(self, h=None, table=None):
        h = h or self.step
        return (self._g(h, table) - 2.0 * self._g(0.0, table)
                + self._g(-h, table)) / (h * h)

    def dtt5(self, h=None, table=None):
        h = h or self.step
        return (-self._g(2 * h, table) + 16.0 * self._g(h, table)
                - 30.0 * self._g(0.0, table) + 16.0 * self._g(-h, table)
                - self._g(-2 * h, table)) / (12.0 * h * h)

    def dttt(self, h=None, table=None):
        h = h or self.step
        return (self._g(2 * h, table) - 2.0 * self._g(h, table)
                + 2.0 * self._g(-h, table) - self._g(-2 * h, table)) / (2 * h ** 3)

    def dtt_noise(self, table=None):
        return abs(self.dtt5(self.step, table) - self.dtt(self.step, table))

    def power_dtt(self, c, h=None):
        table = {t: self.E[t] ** c for t in self.E}
        return self.dtt5(h, table=table), self.dtt_noise(table=table)


def z_grid(step, size=5):
    """Centered square grid with spacing step/2 (holds h and h/2 stencils)."""
    half = step / 2.0
    n = size // 2
    return [complex(i * half + 1j * j * half)
            for j in range(-n, n + 1) for i in range(-n, n + 1)]


def t_grid(step, count=9):
    n = count // 2
    return [j * step for j in range(-n, n + 1)]
