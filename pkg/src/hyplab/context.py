"""Shared per-(mesh, differential) caches and local evaluation models.

The Poincare series is expensive, so its jets are evaluated once at the mesh
quadrature points (and at the mesh vertices) and reused everywhere.  Away
from those anchors, q is reconstructed by its cubic Taylor jet; q is
holomorphic and the anchors are dense, so the model error is far below every
tolerance in play while staying smooth in the evaluation point.
"""

import numpy as np

from . import metric_family as mf
from .jets import Jet2


class TaylorHolo:
    """Cubic Taylor model of a holomorphic function around per-point anchors."""

    def __init__(self, anchors, q0, q1, q2, q3):
        self.anchors = np.asarray(anchors, dtype=complex)
        self.q0 = q0
        self.q1 = q1
        self.q2 = q2
        self.q3 = q3

    def jet(self, p):
        d = np.asarray(p, dtype=complex) - self.anchors
        q = self.q0 + d * (self.q1 + d * (0.5 * self.q2 + d * (self.q3 / 6.0)))
        qp = self.q1 + d * (self.q2 + d * (0.5 * self.q3))
        qpp = self.q2 + d * self.q3
        return Jet2.holomorphic(q, qp, qpp)


class LinearScalar:
    """Per-anchor linear model of a real mesh field (P1 value + gradient)."""

    def __init__(self, anchors, value, gx, gy):
        self.anchors = np.asarray(anchors, dtype=complex)
        self.value = np.asarray(value, dtype=float)
        self.gx = np.asarray(gx, dtype=float)
        self.gy = np.asarray(gy, dtype=float)

    @staticmethod
    def zero(anchors):
        z = np.zeros(len(anchors))
        return LinearScalar(anchors, z, z, z)

    def jet(self, p):
        d = np.asarray(p, dtype=complex) - self.anchors
        val = self.value + self.gx * d.real + self.gy * d.imag
        fv = 0.5 * (self.gx - 1j * self.gy) + 0.0 * d
        z = np.zeros_like(fv)
        return Jet2(val.astype(complex), fv, np.conj(fv), z, z, z)

    def at(self, p):
        d = np.asarray(p, dtype=complex) - self.anchors
        return self.value + self.gx * d.real + self.gy * d.imag


def quad_field_model(mesh, nodal):
    """LinearScalar model of a nodal field anchored at the quadrature points."""
    anchors = mesh.quad_points.ravel()
    vals = mesh.scalar_at_quad(nodal).ravel()
    gx, gy = mesh.scalar_gradient(nodal)
    gx3 = np.repeat(gx, 3)
    gy3 = np.repeat(gy, 3)
    return LinearScalar(anchors, vals, gx3, gy3)


class LabContext:
    """Mesh + quadratic differential with all shared caches."""

    def __init__(self, mesh, qd):
        self.mesh = mesh
        self.qd = qd
        self.group = mesh.group
        anchors = mesh.quad_points.ravel()
        self.quad_anchors = anchors
        q0, q1, q2, q3 = qd.values(anchors, order=3)
        self.q_quad = (q0, q1, q2, q3)
        self.q_vertex = qd.values(mesh.vertices, order=0)[0]
        self.taylor = TaylorHolo(anchors, q0, q1, q2, q3)
        ph = mf.phi0(anchors)
        self.sup_nu = float(np.max(np.abs(q0) / ph))
        self.base_metric = mf.base_metric_field(mesh)
        self._alpha = None
        self._liouville_cache = {}
        self._curve_cache = {}

    def q_jet_at_anchors(self):
        q0, q1, q2, _ = self.q_quad
        return Jet2.holomorphic(q0, q1, q2)

    @property
    def alpha(self):
        """Nodal solution of (Delta + 2) alpha = 2|q|^2/phi_0^2."""
        if self._alpha is None:
            self._alpha = mf.wolf_alpha(self.mesh, self.q_vertex,
                                        self.base_metric)[0]
        return self._alpha

    def alpha_model(self):
        return quad_field_model(self.mesh, self.alpha)

    # -- family assembly helpers -------------------------------------------

    def field_models(self, target, w_nodal=None):
        out = {}
        if "w" in target.uses_fields:
            if w_nodal is None:
                out["w"] = LinearScalar.zero(self.quad_anchors)
            else:
                out["w"] = quad_field_model(self.mesh, w_nodal)
        if "alpha" in target.uses_fields:
            out["alpha"] = self.alpha_model()
        return out

    def metric_field(self, target, w_nodal=None, name=""):
        """Quadrature MetricField of a family (exact q at the anchors)."""
        fj = {k: m.jet(self.quad_anchors)
              for k, m in self.field_models(target, w_nodal).items()}
        return mf.metric_field_from_target(
            self.mesh, target, q_jet=self.q_jet_at_anchors(),
            field_jets=fj, name=name)

    def curvature_at_anchors(self, target, w_nodal=None):
        fj = {k: m.jet(self.quad_anchors)
              for k, m in self.field_models(target, w_nodal).items()}
        vv, vvb = target.component_jets(self.quad_anchors,
                                        self.q_jet_at_anchors(), fj)
        return mf.gauss_curvature_from_jets(vv, vvb)

    def wolf_threshold(self):
        return mf.wolf_positivity_threshold(self.mesh, self.q_quad[0])

    def liouville_target(self, z, tol=1e-10):
        """Solve the Liouville correction for the slice at z (cached).

        Returns (target, w_nodal, newton_history).
        """
        key = complex(z)
        if key in self._liouville_cache:
            return self._liouville_cache[key]
        fam = mf.BeltramiFamily(z, self.sup_nu)
        if z == 0:
            out = (mf.LiouvilleTarget(z, self.sup_nu),
                   np.zeros(self.mesh.n_dofs), [0.0])
        else:
            gz = self.metric_field(fam, name=f"g_z@{z}")
            K_quad = np.real(self.curvature_at_anchors(fam)).reshape(
                self.mesh.quad_points.shape)
            w, hist = mf.solve_liouville(self.mesh, gz, K_quad, tol=tol)
            out = (mf.LiouvilleTarget(z, self.sup_nu), w, hist)
        self._liouville_cache[key] = out
        return out

    def curve_geometry(self, points):
        """Cached q-jets and located cells along a fixed anchor polyline."""
        key = id(points)
        entry = self._curve_cache.get(key)
        if entry is None or entry[0] is not points:
            anchors = np.asarray(points, dtype=complex)
            q = self.qd.values(anchors, order=3)
            taylor = TaylorHolo(anchors, *q)
            cells = []
            for p in anchors:
                p_in, gamma = self.mesh.wrap(complex(p))
                t_idx, lam = self.mesh.locate(p_in)
                cells.append((t_idx, lam, complex(gamma.deriv(complex(p)))))
            entry = (points, taylor, cells)
            self._curve_cache[key] = entry
        return entry[1], entry[2]
