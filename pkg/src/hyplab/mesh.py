"""Triangulated fundamental octagon with side gluing.

The octagon sides are geodesic arcs; boundary vertices are placed at equal
hyperbolic arclength fractions so the side pairings match subdivision points
exactly.  Paired boundary vertices are merged into single degrees of freedom
(master/slave); all eight corners collapse to one vertex, giving a closed
genus-2 surface (V - E + F = -2).
"""

import numpy as np
from scipy import sparse

from .errors import RefinementTooDeep
from .fuchsian import (MoebiusMap, geodesic_through, octagon_group,
                       octagon_vertices)

# order-2 quadrature: 3 interior points, weights 1/3
_QP_BARY = np.array([
    [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
    [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
    [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
])

MAX_REFINE = 8


class Mesh:
    """P1 triangulation of the glued octagon."""

    def __init__(self, refinement, vertices, triangles, master, transition,
                 group):
        self.refinement = refinement
        self.vertices = vertices            # (nv,) complex, disk chart
        self.triangles = triangles          # (nt, 3) int32, CCW
        self.master = master                # (nv,) int: disk index of master
        self.transition = transition        # list of MoebiusMap or None
        self.group = group

        nv = len(vertices)
        roots = np.unique(master)
        self.n_dofs = len(roots)
        self._dof_of_root = {int(r): i for i, r in enumerate(roots)}
        self.dof = np.array([self._dof_of_root[int(m)] for m in master])

        # section transition weight: slave value = weight * master value
        w = np.ones(nv, dtype=complex)
        for i in range(nv):
            t = transition[i]
            if t is not None:
                w[i] = 1.0 / t.deriv(vertices[i])
        self.section_weight = w

        self._build_geometry()
        self._prolongations()
        self._locator = None

    # -- geometry ----------------------------------------------------------

    def _build_geometry(self):
        v = self.vertices
        tri = self.triangles
        p0, p1, p2 = v[tri[:, 0]], v[tri[:, 1]], v[tri[:, 2]]
        e1 = p1 - p0
        e2 = p2 - p0
        cross = e1.real * e2.imag - e1.imag * e2.real
        if np.any(cross <= 0.0):
            raise ValueError("triangulation contains non-CCW triangles")
        self.tri_area = 0.5 * cross

        # quadrature points per triangle
        self.quad_points = (
            _QP_BARY[None, :, 0] * p0[:, None]
            + _QP_BARY[None, :, 1] * p1[:, None]
            + _QP_BARY[None, :, 2] * p2[:, None]
        )                                    # (nt, 3) complex
        self.quad_weight = np.repeat(self.tri_area[:, None] / 3.0, 3, axis=1)

        # constant P1 basis gradients per triangle: grad N_k = rot(e)/2A
        nt = len(tri)
        grads = np.empty((nt, 3, 2))
        pts = np.stack([p0, p1, p2], axis=1)
        for k in range(3):
            opp = pts[:, (k + 2) % 3] - pts[:, (k + 1) % 3]
            grads[:, k, 0] = -opp.imag / (2.0 * self.tri_area)
            grads[:, k, 1] = opp.real / (2.0 * self.tri_area)
        self.grad_basis = grads

        angles = []
        for k in range(3):
            a = pts[:, (k + 1) % 3] - pts[:, k]
            b = pts[:, (k + 2) % 3] - pts[:, k]
            cosang = (a.real * b.real + a.imag * b.imag) / (np.abs(a) * np.abs(b))
            angles.append(np.arccos(np.clip(cosang, -1.0, 1.0)))
        self.min_angle = float(np.min(angles))

    def _prolongations(self):
        nv = len(self.vertices)
        rows = np.arange(nv)
        cols = self.dof
        self.P_scalar = sparse.csr_matrix(
            (np.ones(nv), (rows, cols)), shape=(nv, self.n_dofs))
        self.P_section = sparse.csr_matrix(
            (self.section_weight, (rows, cols)), shape=(nv, self.n_dofs))

    def euler_characteristic(self):
        # closed surface: every edge is shared by exactly two triangles,
        # so E = 3F/2 (dof-pair dedup would miscount the coarse levels)
        nf = len(self.triangles)
        return self.n_dofs - 3 * nf // 2 + nf

    # -- fields ------------------------------------------------------------

    def scalar_at_quad(self, dof_values):
        """P1 interpolation of merged scalar DOFs at quadrature points."""
        nodal = self.P_scalar @ dof_values
        tri = self.triangles
        return (
            _QP_BARY[None, :, 0] * nodal[tri[:, 0], None]
            + _QP_BARY[None, :, 1] * nodal[tri[:, 1], None]
            + _QP_BARY[None, :, 2] * nodal[tri[:, 2], None]
        )

    def section_at_quad(self, dof_values):
        nodal = self.P_section @ dof_values
        tri = self.triangles
        return (
            _QP_BARY[None, :, 0] * nodal[tri[:, 0], None]
            + _QP_BARY[None, :, 1] * nodal[tri[:, 1], None]
            + _QP_BARY[None, :, 2] * nodal[tri[:, 2], None]
        )

    def scalar_gradient(self, dof_values):
        """Per-triangle constant gradient (gx, gy) of a P1 scalar field."""
        nodal = self.P_scalar @ dof_values
        tri = self.triangles
        vals = nodal[tri]                    # (nt, 3)
        gx = np.sum(vals * self.grad_basis[:, :, 0], axis=1)
        gy = np.sum(vals * self.grad_basis[:, :, 1], axis=1)
        return gx, gy

    # -- point location ------------------------------------------------------

    def _build_locator(self, cells=64):
        lo, hi = -0.95, 0.95
        self._cell_size = (hi - lo) / cells
        self._cell_lo = lo
        buckets = {}
        v = self.vertices
        for t_idx, t in enumerate(self.triangles):
            xs = v[t].real
            ys = v[t].imag
            i0 = int((xs.min() - lo) / self._cell_size)
            i1 = int((xs.max() - lo) / self._cell_size)
            j0 = int((ys.min() - lo) / self._cell_size)
            j1 = int((ys.max() - lo) / self._cell_size)
            for i in range(i0, i1 + 1):
                for j in range(j0, j1 + 1):
                    buckets.setdefault((i, j), []).append(t_idx)
        self._buckets = buckets

    def barycentric(self, tri_idx, p):
        t = self.triangles[tri_idx]
        p0, p1, p2 = self.vertices[t]
        det = (p1 - p0).real * (p2 - p0).imag - (p1 - p0).imag * (p2 - p0).real
        l1 = ((p - p0).real * (p2 - p0).imag - (p - p0).imag * (p2 - p0).real) / det
        l2 = ((p1 - p0).real * (p - p0).imag - (p1 - p0).imag * (p - p0).real) / det
        return np.array([1.0 - l1 - l2, l1, l2])

    def locate(self, p, tol=1e-11):
        """Triangle index and barycentric coords containing point p, or None."""
        if self._locator is None:
            self._build_locator()
            self._locator = True
        i = int((p.real - self._cell_lo) / self._cell_size)
        j = int((p.imag - self._cell_lo) / self._cell_size)
        for di in (0, -1, 1):
            for dj in (0, -1, 1):
                for t_idx in self._buckets.get((i + di, j + dj), ()):
                    lam = self.barycentric(t_idx, p)
                    if np.all(lam >= -tol):
                        return t_idx, lam
        return None

    def wrap(self, p, max_hops=12):
        """Map p into the fundamental octagon by deck transformations.

        Returns (p_inside, gamma) with gamma(p) = p_inside.
        """
        gens = self.group.generators
        gamma = MoebiusMap.identity()
        q = complex(p)
        for _ in range(max_hops):
            if self.locate(q) is not None:
                return q, gamma
            # step toward the octagon: apply the pairing of the violated side
            k = _worst_side(q)
            g = gens[k].inverse()
            q = complex(g.apply(q))
            gamma = g.compose(gamma)
        raise ValueError(f"point {p} could not be wrapped into the octagon")


def _side_circles():
    """Centers/radii of the circles carrying the octagon sides."""
    verts = octagon_vertices()
    data = []
    for k in range(8):
        p, q = verts[k], verts[(k + 1) % 8]
        # circle orthogonal to unit circle through p, q: center c with
        # |c|^2 = 1 + r^2, equidistant from p and q
        A = np.array([[p.real, p.imag], [q.real, q.imag]])
        rhs = np.array([(1.0 + abs(p) ** 2) / 2.0, (1.0 + abs(q) ** 2) / 2.0])
        c = np.linalg.solve(A, rhs)
        c = c[0] + 1j * c[1]
        r = np.sqrt(abs(c) ** 2 - 1.0)
        data.append((c, r))
    return data


_SIDES = None


def _worst_side(p):
    """Index of the side whose orthocircle p violates the most."""
    global _SIDES
    if _SIDES is None:
        _SIDES = _side_circles()
    worst_k, worst = 0, -np.inf
    for k, (c, r) in enumerate(_SIDES):
        depth = r - abs(p - c)   # > 0 when p is beyond side k
        if depth > worst:
            worst, worst_k = depth, k
    return worst_k


def octagon_depth(p):
    """Max orthocircle violation; <= 0 when p lies in the fundamental octagon."""
    global _SIDES
    if _SIDES is None:
        _SIDES = _side_circles()
    return max(r - abs(p - c) for c, r in _SIDES)


def wrap_point(p, group, max_hops=40, slack=1e-12):
    """Deck-transform p into the fundamental octagon (mesh-free).

    Returns (p_inside, gamma) with gamma(p) = p_inside.
    """
    gamma = MoebiusMap.identity()
    q = complex(p)
    for _ in range(max_hops):
        if octagon_depth(q) <= slack:
            return q, gamma
        g = group.generators[_worst_side(q)].inverse()
        q = complex(g.apply(q))
        gamma = g.compose(gamma)
    raise ValueError(f"point {p} could not be wrapped into the octagon")


def build_octagon_mesh(r, group=None):
    """Fan triangulation of the regular octagon refined r times, glued."""
    if not (0 <= r <= MAX_REFINE):
        raise RefinementTooDeep(f"refinement {r} outside [0, {MAX_REFINE}]")
    group = group or octagon_group()
    verts = octagon_vertices()

    side_geos = [geodesic_through(verts[k], verts[(k + 1) % 8]) for k in range(8)]
    side_params = [(g.param_of(verts[k]), g.param_of(verts[(k + 1) % 8]))
                   for k, g in enumerate(side_geos)]

    def side_point(s, t):
        s0, s1 = side_params[s]
        return complex(side_geos[s].point(s0 + t * (s1 - s0)))

    # level 0: center + 8 corners
    pos = [0.0 + 0.0j] + [complex(v) for v in verts]
    boundary = {}           # vertex index -> list of (side, fraction)
    for k in range(8):
        boundary[1 + k] = [(k, 0.0), ((k - 1) % 8, 1.0)]
    tris = [(0, 1 + k, 1 + (k + 1) % 8) for k in range(8)]

    for _ in range(r):
        midpoint = {}

        def get_mid(i, j):
            key = (min(i, j), max(i, j))
            if key in midpoint:
                return midpoint[key]
            shared = None
            if i in boundary and j in boundary:
                si = {s for s, _ in boundary[i]}
                sj = {s for s, _ in boundary[j]}
                common = si & sj
                if common:
                    shared = common.pop()
            if shared is not None:
                ti = dict(boundary[i])[shared]
                tj = dict(boundary[j])[shared]
                tm = 0.5 * (ti + tj)
                p = side_point(shared, tm)
                idx = len(pos)
                pos.append(p)
                boundary[idx] = [(shared, tm)]
            else:
                idx = len(pos)
                pos.append(0.5 * (pos[i] + pos[j]))
            midpoint[key] = idx
            return idx

        new_tris = []
        for (i, j, k) in tris:
            a = get_mid(i, j)
            b = get_mid(j, k)
            c = get_mid(k, i)
            new_tris += [(i, a, c), (a, j, b), (c, b, k), (a, b, c)]
        tris = new_tris

    pos = np.array(pos, dtype=complex)
    tris = np.array(tris, dtype=np.int32)

    # -- gluing: side k+4 fraction t  <->  side k fraction 1-t -------------
    by_side = {}
    for idx, tags in boundary.items():
        for s, t in tags:
            by_side.setdefault(s, []).append((t, idx))
    for s in by_side:
        by_side[s].sort()

    nv = len(pos)
    master = np.arange(nv)
    transition = [None] * nv
    corner_ids = set(range(1, 9))

    def find(i):
        return i if master[i] == i else find(master[i])

    for k in range(4):
        g = group.generators[k]
        for t, idx in by_side[k + 4]:
            if idx in corner_ids:
                continue
            # partner on side k at fraction 1 - t
            partner = None
            for tp, jdx in by_side[k]:
                if abs(tp - (1.0 - t)) < 1e-12:
                    partner = jdx
                    break
            if partner is None:
                raise RuntimeError("unmatched boundary vertex during gluing")
            err = abs(g.apply(pos[idx]) - pos[partner])
            if err > 1e-9:
                raise RuntimeError(f"side pairing mismatch {err:.2e}")
            master[idx] = partner
            transition[idx] = g

    # corners: all eight collapse onto vertex V0 (disk index 1); the deck
    # transformations realizing the vertex cycle have word length <= 4
    ball = group.enumerate_words(4)
    for k in range(1, 8):
        idx = 1 + k
        match = None
        for m in ball:
            if abs(m.apply(pos[idx]) - pos[1]) < 1e-9:
                match = m
                break
        if match is None:
            raise RuntimeError("no deck transformation identifies corner")
        master[idx] = 1
        transition[idx] = match

    return Mesh(r, pos, tris, master, transition, group)
