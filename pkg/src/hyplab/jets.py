"""Second-order Wirtinger jets.

A `Jet2` carries the value of a smooth function of (v, conj(v)) together with
all Wirtinger derivatives up to second order.  Metric-family coefficients are
built from these, so curvature and solver linearizations use closed-form
derivatives instead of differencing mesh data.
"""

import numpy as np


class Jet2:
    """Value and Wirtinger derivatives (d/dv, d/dvb, second order) at points.

    Components are numpy complex arrays (or scalars) of a common shape.
    """

    __slots__ = ("f", "fv", "fb", "fvv", "fvb", "fbb")

    def __init__(self, f, fv=0.0, fb=0.0, fvv=0.0, fvb=0.0, fbb=0.0):
        self.f = np.asarray(f, dtype=complex)
        self.fv = np.asarray(fv, dtype=complex)
        self.fb = np.asarray(fb, dtype=complex)
        self.fvv = np.asarray(fvv, dtype=complex)
        self.fvb = np.asarray(fvb, dtype=complex)
        self.fbb = np.asarray(fbb, dtype=complex)

    @staticmethod
    def variable(v):
        """The identity function v at the sample points v."""
        v = np.asarray(v, dtype=complex)
        one = np.ones_like(v)
        return Jet2(v, one, 0.0 * one)

    @staticmethod
    def holomorphic(f, fp, fpp):
        """Jet of a holomorphic function from its value and derivatives."""
        z = np.zeros_like(np.asarray(f, dtype=complex))
        return Jet2(f, fp, z, fpp, z, z)

    @staticmethod
    def constant(c, like=None):
        shape = () if like is None else np.shape(like)
        z = np.zeros(shape, dtype=complex)
        return Jet2(z + c, z, z, z, z, z)

    def conj(self):
        return Jet2(
            np.conj(self.f),
            np.conj(self.fb),
            np.conj(self.fv),
            np.conj(self.fbb),
            np.conj(self.fvb),
            np.conj(self.fvv),
        )

    def __add__(self, other):
        if not isinstance(other, Jet2):
            return Jet2(self.f + other, self.fv, self.fb, self.fvv, self.fvb, self.fbb)
        return Jet2(
            self.f + other.f,
            self.fv + other.fv,
            self.fb + other.fb,
            self.fvv + other.fvv,
            self.fvb + other.fvb,
            self.fbb + other.fbb,
        )

    __radd__ = __add__

    def __neg__(self):
        return Jet2(-self.f, -self.fv, -self.fb, -self.fvv, -self.fvb, -self.fbb)

    def __sub__(self, other):
        return self + (-other if isinstance(other, Jet2) else -np.asarray(other, dtype=complex))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet2):
            c = np.asarray(other, dtype=complex)
            return Jet2(self.f * c, self.fv * c, self.fb * c,
                        self.fvv * c, self.fvb * c, self.fbb * c)
        a, b = self, other
        return Jet2(
            a.f * b.f,
            a.fv * b.f + a.f * b.fv,
            a.fb * b.f + a.f * b.fb,
            a.fvv * b.f + 2.0 * a.fv * b.fv + a.f * b.fvv,
            a.fvb * b.f + a.fv * b.fb + a.fb * b.fv + a.f * b.fvb,
            a.fbb * b.f + 2.0 * a.fb * b.fb + a.f * b.fbb,
        )

    __rmul__ = __mul__

    def reciprocal(self):
        g = 1.0 / self.f
        g2 = g * g
        g3 = g2 * g
        return Jet2(
            g,
            -self.fv * g2,
            -self.fb * g2,
            (2.0 * self.fv * self.fv * g - self.fvv) * g2,
            (2.0 * self.fv * self.fb * g - self.fvb) * g2,
            (2.0 * self.fb * self.fb * g - self.fbb) * g2,
        )

    def __truediv__(self, other):
        if not isinstance(other, Jet2):
            return self * (1.0 / np.asarray(other, dtype=complex))
        return self * other.reciprocal()

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def exp(self):
        e = np.exp(self.f)
        return Jet2(
            e,
            e * self.fv,
            e * self.fb,
            e * (self.fvv + self.fv * self.fv),
            e * (self.fvb + self.fv * self.fb),
            e * (self.fbb + self.fb * self.fb),
        )

    # Real-coordinate derivatives (x = Re v, y = Im v), for real-valued jets.
    def real_parts(self):
        """Return (f, f_x, f_y, f_xx, f_xy, f_yy) as real arrays.

        Only meaningful when the jet represents a real-valued function, i.e.
        fb = conj(fv) and fbb = conj(fvv), fvb real.
        """
        f = np.real(self.f)
        fx = np.real(self.fv + self.fb)
        fy = np.real(1j * (self.fv - self.fb))
        fxx = np.real(self.fvv + 2.0 * self.fvb + self.fbb)
        fyy = np.real(-self.fvv + 2.0 * self.fvb - self.fbb)
        fxy = np.real(1j * (self.fvv - self.fbb))
        return f, fx, fy, fxx, fxy, fyy

    def real_jet(self):
        """Symmetrize to the real part (f + conj f)/2."""
        return (self + self.conj()) * 0.5
