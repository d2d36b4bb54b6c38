"""Holomorphic quadratic differentials as truncated Poincare series.

q(v) = sum over group elements gamma with word length <= L of
gamma'(v)^2 P(gamma v), an automorphic form of weight 4 up to a truncation
defect that decays geometrically in L.  Derivatives are termwise.
"""

import numpy as np
from numba import njit, prange

from .errors import DepthTooSmall
from .jets import Jet2

_BLOCK = 128


@njit(cache=True, parallel=True, fastmath=True)
def _series_kernel(v, a, b, ca, cb, c0, c1, c2, use_poly, order):
    """Blocked termwise sums of q and derivatives; deterministic output.

    Each point block owns a disjoint output slice, so the parallel loop is
    bit-reproducible.
    """
    n = v.size
    m = a.size
    out = np.zeros((4, n), dtype=np.complex128)
    nblocks = (n + _BLOCK - 1) // _BLOCK
    for blk in prange(nblocks):
        lo = blk * _BLOCK
        hi = min(lo + _BLOCK, n)
        w = hi - lo
        acc = np.zeros((4, w), dtype=np.complex128)
        for j in range(m):
            aj = a[j]
            bj = b[j]
            caj = ca[j]
            cbj = cb[j]
            for i in range(w):
                vi = v[lo + i]
                t = vi * cbj + caj
                m2 = t.real * t.real + t.imag * t.imag
                ti = np.conj(t) / m2
                ti2 = ti * ti
                ti4 = ti2 * ti2
                if use_poly:
                    ww = (vi * aj + bj) * ti
                    P = c0 + ww * (c1 + c2 * ww)
                    P1 = c1 + 2.0 * c2 * ww
                    P2 = 2.0 * c2
                else:
                    P = c0
                    P1 = 0.0j
                    P2 = 0.0j
                acc[0, i] += ti4 * P
                if order >= 1:
                    ti5 = ti4 * ti
                    acc[1, i] += -4.0 * cbj * ti5 * P + ti5 * ti * P1
                if order >= 2:
                    ti6 = ti4 * ti2
                    ti7 = ti6 * ti
                    acc[2, i] += (20.0 * cbj * cbj * ti6 * P
                                  - 10.0 * cbj * ti7 * P1 + ti7 * ti * P2)
                if order >= 3:
                    ti7 = ti4 * ti2 * ti
                    ti8 = ti7 * ti
                    acc[3, i] += (-120.0 * cbj * cbj * cbj * ti7 * P
                                  + 90.0 * cbj * cbj * ti8 * P1
                                  - 18.0 * cbj * ti8 * ti * P2)
        for k in range(4):
            for i in range(w):
                out[k, lo + i] = acc[k, i]
    return out


class QuadraticDifferential:
    """Truncated weight-4 Poincare series for the octagon group."""

    def __init__(self, group, seed, depth, defect_report=None, scale=1.0):
        self.group = group
        self.seed = tuple(complex(c) for c in seed)
        self.depth = int(depth)
        self.scale = float(scale)
        self.defect_report = defect_report
        a, b = group.ball_arrays(depth)[:2]
        self._a = a
        self._b = b
        self._ca = np.conj(a)
        self._cb = np.conj(b)

    # -- evaluation --------------------------------------------------------

    def values(self, v, order=0):
        """q and its first `order` derivatives at flattened points v."""
        v = np.ascontiguousarray(np.asarray(v, dtype=complex).ravel())
        c0, c1, c2 = (list(self.seed) + [0.0, 0.0, 0.0])[:3]
        use_poly = not (c1 == 0.0 and c2 == 0.0)
        out = _series_kernel(v, self._a, self._b, self._ca, self._cb,
                             complex(c0), complex(c1), complex(c2),
                             use_poly, order)
        return [self.scale * out[k] for k in range(order + 1)]

    def q(self, v):
        shape = np.shape(v)
        out = self.values(v, order=0)[0].reshape(shape)
        return out if shape else complex(out)

    def qprime(self, v):
        shape = np.shape(v)
        out = self.values(v, order=1)[1].reshape(shape)
        return out if shape else complex(out)

    def jet(self, v, order=2):
        """Holomorphic Jet2 of q at points v (order >= 2)."""
        vals = self.values(v, order=max(order, 2))
        return Jet2.holomorphic(vals[0], vals[1], vals[2])

    # -- automorphy --------------------------------------------------------

    def automorphy_defect(self, sample_points=None):
        """sup over samples and side pairings of the weight-4 defect."""
        if sample_points is None:
            sample_points = default_sample_points()
        v = np.asarray(sample_points, dtype=complex)
        n = len(v)
        gens = self.group.generators
        batch = np.concatenate([v] + [g.apply(v) for g in gens])
        qb = self.values(batch, order=0)[0]
        qv = qb[:n]
        worst = 0.0
        for i, g in enumerate(gens):
            qgv = qb[(i + 1) * n:(i + 2) * n]
            defect = np.abs(qgv * g.deriv(v) ** 2 - qv) / (1.0 + np.abs(qv))
            worst = max(worst, float(np.max(defect)))
        return worst


def default_sample_points(n=100, radius=0.72, seed=20240):
    """Deterministic interior sample points for automorphy audits."""
    rng = np.random.default_rng(seed)
    r = radius * np.sqrt(rng.uniform(size=n))
    th = rng.uniform(0.0, 2.0 * np.pi, size=n)
    return r * np.exp(1j * th)


def poincare_series_qd(group, seed, L, samples=100, defect_tol=1e-2,
                       normalize=False):
    """Build the truncated series differential and audit its automorphy.

    Raises DepthTooSmall when the defect exceeds `defect_tol` at depth L.
    With `normalize`, rescales so sup |q| = 1 over the audit samples.
    """
    seed = tuple(complex(c) for c in seed)
    if all(abs(c) < 1e-300 for c in seed):
        raise ValueError("seed polynomial is identically zero")
    if L < 1:
        raise ValueError("series depth must be >= 1")
    qd = QuadraticDifferential(group, seed, L)
    pts = default_sample_points(n=samples)
    if normalize:
        sup = float(np.max(np.abs(qd.values(pts, order=0)[0])))
        qd = QuadraticDifferential(group, seed, L, scale=1.0 / sup)
    defect = qd.automorphy_defect(pts)
    report = {"depth": L, "samples": int(samples), "defect": defect,
              "tolerance": defect_tol, "normalized": bool(normalize)}
    qd.defect_report = report
    if defect > defect_tol:
        raise DepthTooSmall(
            f"automorphy defect {defect:.3e} exceeds {defect_tol:.1e} at depth {L}")
    return qd
