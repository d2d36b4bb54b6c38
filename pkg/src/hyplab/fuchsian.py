"""Disk-model isometries and the genus-2 octagon group.

All isometries are stored in the unit-determinant disk form

    [[a, b], [conj(b), conj(a)]],   |a|^2 - |b|^2 = 1,

acting on the unit disk by v -> (a v + b) / (conj(b) v + conj(a)).  The
fundamental surface is the regular hyperbolic octagon with vertex angle
pi/4, opposite sides identified by translations along the axes through the
side midpoints.
"""

from dataclasses import dataclass

import numpy as np

from .errors import MemoryBudgetExceeded, NotHyperbolic

# Regular octagon with interior angle pi/4 (area 4*pi, genus 2 after gluing):
# the apothem rho and half side-length share cosh = cot(pi/8); the
# circumradius R satisfies cosh R = cot(pi/8)^2, i.e. the vertices sit at
# Euclidean radius 2^(-1/4).
COT_PI_8 = 1.0 + np.sqrt(2.0)
OCTAGON_APOTHEM = float(np.arccosh(COT_PI_8))
OCTAGON_CIRCUMRADIUS = float(np.arccosh(COT_PI_8 ** 2))
OCTAGON_VERTEX_RADIUS = 2.0 ** -0.25
OCTAGON_SIDE_LENGTH = 2.0 * OCTAGON_APOTHEM

# Side pairing k maps side k+4 onto side k; its inverse is pairing k+4.
# The relator below multiplies to -identity in SU(1,1); verified by test.
OCTAGON_RELATION = (0, 5, 2, 7, 4, 1, 6, 3)

_DEDUP_TOL = 1e-9


def _renorm(a, b):
    """Rescale (a, b) to unit determinant |a|^2 - |b|^2 = 1."""
    d = np.sqrt(abs(a) ** 2 - abs(b) ** 2)
    return a / d, b / d


@dataclass(frozen=True)
class MoebiusMap:
    """Disk isometry v -> (a v + b)/(conj(b) v + conj(a)) with unit det."""

    a: complex
    b: complex

    @staticmethod
    def identity():
        return MoebiusMap(1.0 + 0.0j, 0.0j)

    @staticmethod
    def translation(s, direction=0.0):
        """Hyperbolic translation by distance s along the ray at angle `direction`."""
        a = np.cosh(s / 2.0)
        b = np.sinh(s / 2.0) * np.exp(1j * direction)
        return MoebiusMap(complex(a), complex(b))

    @staticmethod
    def rotation(theta):
        return MoebiusMap(complex(np.exp(0.5j * theta)), 0.0j)

    def __post_init__(self):
        a, b = _renorm(complex(self.a), complex(self.b))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    def apply(self, v):
        v = np.asarray(v, dtype=complex)
        return (self.a * v + self.b) / (np.conj(self.b) * v + np.conj(self.a))

    def deriv(self, v):
        """Complex derivative of the map at v (unit-det form)."""
        v = np.asarray(v, dtype=complex)
        return 1.0 / (np.conj(self.b) * v + np.conj(self.a)) ** 2

    def compose(self, other):
        """self after other: (self*other)(v) = self(other(v))."""
        a = self.a * other.a + self.b * np.conj(other.b)
        b = self.a * other.b + self.b * np.conj(other.a)
        return MoebiusMap(a, b)

    def inverse(self):
        return MoebiusMap(np.conj(self.a), -self.b)

    def trace(self):
        return 2.0 * self.a.real

    def matrix(self):
        return np.array([[self.a, self.b], [np.conj(self.b), np.conj(self.a)]])

    def dist(self, other):
        return abs(self.a - other.a) + abs(self.b - other.b)

    def is_identity(self, tol=1e-10):
        return min(self.dist(MoebiusMap.identity()),
                   abs(self.a + 1.0) + abs(self.b)) < tol


def hyperbolic_distance(p, q):
    """Geodesic distance between disk points."""
    p = np.asarray(p, dtype=complex)
    q = np.asarray(q, dtype=complex)
    num = 2.0 * np.abs(p - q) ** 2
    den = (1.0 - np.abs(p) ** 2) * (1.0 - np.abs(q) ** 2)
    return np.arccosh(1.0 + num / den)


def disk_map_through(p_minus, p_plus):
    """A unit-det disk map sending (-1, +1) to the boundary points (p-, p+).

    The image of the real diameter is the geodesic from p- to p+.
    """
    tm = float(np.angle(p_minus))
    tp = float(np.angle(p_plus))
    # a+b and a-b have prescribed phases; the modulus balance enforces unit det.
    for sp in (0.0, np.pi):
        for sm in (0.0, np.pi):
            phase_s = 0.5 * tp + sp
            phase_d = 0.5 * (tm - np.pi) + sm
            c = np.cos(phase_s - phase_d)
            if c <= 1e-12:
                continue
            r = 1.0 / np.sqrt(c)
            s = r * np.exp(1j * phase_s)
            d = r * np.exp(1j * phase_d)
            m = MoebiusMap((s + d) / 2.0, (s - d) / 2.0)
            if (abs(m.apply(1.0) - p_plus) < 1e-9
                    and abs(m.apply(-1.0) - p_minus) < 1e-9):
                return m
    raise ValueError("could not realize the requested boundary points")


@dataclass(frozen=True)
class Geodesic:
    """Oriented geodesic from repelling to attracting boundary fixed point."""

    repelling: complex
    attracting: complex
    chart: MoebiusMap  # maps the real diameter onto the geodesic

    def point(self, s):
        """Arclength parametrization; s = 0 at the chart basepoint."""
        return self.chart.apply(np.tanh(np.asarray(s) / 2.0))

    def velocity(self, s):
        """d(point)/ds, a complex chart vector of unit hyperbolic norm."""
        t = np.tanh(np.asarray(s) / 2.0)
        dt = 0.5 * (1.0 - t ** 2)
        return self.chart.deriv(t) * dt

    def reversed(self):
        flip = MoebiusMap(1j, 0.0)  # v -> -v
        return Geodesic(self.attracting, self.repelling, self.chart.compose(flip))


def translation_length(m):
    """2*arccosh(|tr|/2) for a hyperbolic element."""
    t = abs(m.trace())
    if t <= 2.0 + 1e-12:
        raise NotHyperbolic(f"|trace| = {t:.12g} <= 2")
    return 2.0 * float(np.arccosh(t / 2.0))


def axis(m):
    """Oriented axis of a hyperbolic element, repelling to attracting."""
    t = abs(m.trace())
    if t <= 2.0 + 1e-12:
        raise NotHyperbolic(f"|trace| = {t:.12g} <= 2")
    # Fixed points solve conj(b) v^2 + (conj(a) - a) v - b = 0, both on |v|=1.
    ar, ai = m.a.real, m.a.imag
    if abs(m.b) < 1e-15:
        # Axis through the origin: m is a translation along exp(i*arg)?? A
        # b = 0 element is a rotation unless a is real; real a gives the
        # identity-like case handled by callers.
        raise NotHyperbolic("b = 0 element has no axis in the disk")
    root = np.sqrt(ar ** 2 - 1.0)
    f1 = (1j * ai + root) / np.conj(m.b)
    f2 = (1j * ai - root) / np.conj(m.b)
    # The attracting fixed point has |m'| < 1.
    if abs(m.deriv(f1)) < 1.0:
        att, rep = f1, f2
    else:
        att, rep = f2, f1
    chart = disk_map_through(rep, att)
    return Geodesic(rep, att, chart)


@dataclass(frozen=True)
class GeodesicClass:
    """Free-homotopy class given by a cyclically reduced generator word."""

    word: tuple
    cached_trace: complex

    @property
    def length(self):
        t = abs(complex(self.cached_trace).real)
        return 2.0 * float(np.arccosh(t / 2.0))


class FuchsianGroup:
    """The genus-2 octagon group with its eight side-pairing maps."""

    def __init__(self, generators, relation_word, max_word_length=8):
        self.generators = list(generators)
        self.relation_word = tuple(relation_word)
        self.max_word_length = int(max_word_length)
        self._balls = {}

    def inverse_index(self, k):
        return (k + 4) % 8

    def word_to_map(self, word):
        m = MoebiusMap.identity()
        for k in word:
            m = m.compose(self.generators[k])
        return m

    def free_reduce(self, word):
        out = []
        for k in word:
            if out and out[-1] == self.inverse_index(k):
                out.pop()
            else:
                out.append(int(k))
        return tuple(out)

    def cyclic_reduce(self, word):
        w = list(self.free_reduce(word))
        while len(w) >= 2 and w[0] == self.inverse_index(w[-1]):
            w = w[1:-1]
        return tuple(w)

    def geodesic_class(self, word):
        w = self.cyclic_reduce(word)
        m = self.word_to_map(w)
        if abs(m.trace()) <= 2.0 + 1e-12:
            raise NotHyperbolic(f"word {w} is not hyperbolic")
        return GeodesicClass(w, complex(m.trace()))

    # -- ball enumeration -------------------------------------------------

    def ball_arrays(self, L, cap=30_000_000):
        """(a, b) coefficient arrays of all distinct elements of length <= L.

        Distinctness is projective: (a, b) and (-a, -b) are the same isometry
        and are stored once with Re(a) >= 0.
        """
        if L in self._balls:
            return self._balls[L]
        start = max((k for k in self._balls if k < L), default=0)
        if start == 0 and 0 not in self._balls:
            a0 = np.array([1.0 + 0.0j])
            b0 = np.array([0.0j])
            self._balls[0] = (a0, b0, np.array([-1], dtype=np.int8))
        ga = np.array([g.a for g in self.generators])
        gb = np.array([g.b for g in self.generators])
        for depth in range(start + 1, L + 1):
            ball_a, ball_b, last = self._balls[depth - 1]
            if depth == 1:
                fa, fb, flast = ball_a, ball_b, last
            else:
                prev_size = len(self._balls[depth - 2][0])
                fa, fb, flast = ball_a[prev_size:], ball_b[prev_size:], last[prev_size:]
            cand_a, cand_b, cand_last = [], [], []
            for k in range(8):
                mask = flast != self.inverse_index(k)
                if not np.any(mask):
                    continue
                wa, wb = fa[mask], fb[mask]
                na = wa * ga[k] + wb * np.conj(gb[k])
                nb = wa * gb[k] + wb * np.conj(ga[k])
                cand_a.append(na)
                cand_b.append(nb)
                cand_last.append(np.full(len(na), k, dtype=np.int8))
            na = np.concatenate(cand_a)
            nb = np.concatenate(cand_b)
            nlast = np.concatenate(cand_last)
            # renormalize drift, canonical projective sign
            d = np.sqrt(np.abs(na) ** 2 - np.abs(nb) ** 2)
            na /= d
            nb /= d
            flip = na.real < 0.0
            na[flip] = -na[flip]
            nb[flip] = -nb[flip]
            keep = _dedup_against(na, nb, ball_a, ball_b)
            na, nb, nlast = na[keep], nb[keep], nlast[keep]
            total = len(ball_a) + len(na)
            if total > cap:
                raise MemoryBudgetExceeded(
                    f"ball at depth {depth} holds {total} elements (cap {cap})")
            self._balls[depth] = (
                np.concatenate([ball_a, na]),
                np.concatenate([ball_b, nb]),
                np.concatenate([last, nlast]),
            )
        a, b, _ = self._balls[L]
        return a, b, self._balls[L][2]

    def enumerate_words(self, L, cap=30_000_000):
        """All distinct elements of word length <= L as MoebiusMap objects."""
        a, b, _ = self.ball_arrays(L, cap=cap)
        return [MoebiusMap(ai, bi) for ai, bi in zip(a, b)]


def _dedup_against(na, nb, old_a, old_b):
    """Boolean mask keeping one representative per new element.

    Rounds coefficients to a grid much coarser than float noise and much
    finer than the 1e-9 separation of distinct group elements; two offset
    roundings catch straddled bucket boundaries.
    """
    def keys(a, b, offset):
        q = 2.5e-8
        m = np.round(np.column_stack([a.real, a.imag, b.real, b.imag]) / q + offset)
        return [tuple(row) for row in m.astype(np.int64)]

    keep = np.ones(len(na), dtype=bool)
    for offset in (0.0, 0.5):
        seen = set(keys(old_a, old_b, offset))
        kk = keys(na, nb, offset)
        for i, key in enumerate(kk):
            if not keep[i]:
                continue
            if key in seen:
                keep[i] = False
            else:
                seen.add(key)
    return keep


def octagon_vertices():
    """Vertices of the fundamental octagon, at angles k*pi/4."""
    k = np.arange(8)
    return OCTAGON_VERTEX_RADIUS * np.exp(1j * np.pi * k / 4.0)


def octagon_group(max_word_length=8):
    """The standard genus-2 octagon group (opposite side pairings).

    Pairing k translates by twice the apothem along the axis through the
    midpoint of side k, sending side k+4 onto side k; pairing k+4 is its
    inverse.
    """
    gens = []
    for k in range(8):
        theta = (2 * k + 1) * np.pi / 8.0
        gens.append(MoebiusMap.translation(2.0 * OCTAGON_APOTHEM, theta))
    return FuchsianGroup(gens, OCTAGON_RELATION, max_word_length=max_word_length)


def interior_angle_at_vertex(k):
    """Hyperbolic interior angle of the fundamental octagon at vertex k.

    Measured between the tangent directions of the two geodesic sides
    meeting there, so it audits the construction constants.
    """
    verts = octagon_vertices()
    v = verts[k % 8]
    prev_v = verts[(k - 1) % 8]
    next_v = verts[(k + 1) % 8]
    angles = []
    for other in (prev_v, next_v):
        g = geodesic_through(v, other)
        angles.append(float(np.angle(g.velocity(g.param_of(v)))))
    d = abs(angles[1] - angles[0]) % (2.0 * np.pi)
    return min(d, 2.0 * np.pi - d)


def geodesic_through(p, q):
    """Oriented geodesic through interior points p then q."""
    p = complex(p)
    q = complex(q)
    # Move p to 0; the geodesic becomes a diameter toward the image of q.
    t = MoebiusMap(1.0, -p)  # v -> (v - p)/(1 - conj(p) v), 0 at p
    qq = t.apply(q)
    direction = qq / abs(qq)
    boundary_plus = t.inverse().apply(direction)
    boundary_minus = t.inverse().apply(-direction)
    chart = disk_map_through(boundary_minus, boundary_plus)
    g = Geodesic(boundary_minus, boundary_plus, chart)
    return g


# Geodesic.param_of: arclength of a point assumed on the geodesic.
def _param_of(self, p):
    t = self.chart.inverse().apply(p)
    return 2.0 * float(np.arctanh(np.clip(np.real(t), -1.0 + 1e-15, 1.0 - 1e-15)))


Geodesic.param_of = _param_of
