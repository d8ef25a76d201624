"""Order-2 forward-mode Taylor scalars.

A :class:`Jet2` carries a value together with its first and second
derivative with respect to a single scalar input. Pushing a jet through
plain arithmetic code yields exact derivatives of the output, which this
package uses in two places: the storage-geometry derivation (sensitivities
of thermal-network coefficients with respect to the storage scale factor)
and, in the test suite, as an independent directional-derivative check for
hand-coded Jacobians.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np


class Jet2:
    """Truncated Taylor scalar ``v + d1*eps + (d2/2)*eps^2``."""

    __slots__ = ("v", "d1", "d2")

    def __init__(self, v: float, d1: float = 0.0, d2: float = 0.0):
        self.v = float(v)
        self.d1 = float(d1)
        self.d2 = float(d2)

    def __repr__(self):
        return f"Jet2({self.v!r}, {self.d1!r}, {self.d2!r})"

    # -- arithmetic ---------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Jet2):
            return Jet2(self.v + other.v, self.d1 + other.d1, self.d2 + other.d2)
        return Jet2(self.v + other, self.d1, self.d2)

    __radd__ = __add__

    def __neg__(self):
        return Jet2(-self.v, -self.d1, -self.d2)

    def __sub__(self, other):
        return self + (-other if isinstance(other, Jet2) else -other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Jet2):
            return Jet2(
                self.v * other.v,
                self.d1 * other.v + self.v * other.d1,
                self.d2 * other.v + 2.0 * self.d1 * other.d1 + self.v * other.d2,
            )
        return Jet2(self.v * other, self.d1 * other, self.d2 * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet2):
            return self * other._reciprocal()
        return Jet2(self.v / other, self.d1 / other, self.d2 / other)

    def __rtruediv__(self, other):
        return self._reciprocal() * other

    def _reciprocal(self):
        iv = 1.0 / self.v
        d1 = -self.d1 * iv * iv
        d2 = (2.0 * self.d1 * self.d1 * iv - self.d2) * iv * iv
        return Jet2(iv, d1, d2)

    def __pow__(self, p):
        v, d1, d2 = self.v, self.d1, self.d2
        f = v**p
        fp = p * v ** (p - 1)
        fpp = p * (p - 1) * v ** (p - 2)
        return Jet2(f, fp * d1, fpp * d1 * d1 + fp * d2)

    # -- comparisons (on values; used for assertions in geometry code) --
    def __lt__(self, other):
        return self.v < _val(other)

    def __le__(self, other):
        return self.v <= _val(other)

    def __gt__(self, other):
        return self.v > _val(other)

    def __ge__(self, other):
        return self.v >= _val(other)

    def __float__(self):
        return self.v


def _val(x):
    return x.v if isinstance(x, Jet2) else x


def jsqrt(x):
    if isinstance(x, Jet2):
        s = math.sqrt(x.v)
        d1 = 0.5 * x.d1 / s
        d2 = 0.5 * x.d2 / s - 0.25 * x.d1 * x.d1 / (s * x.v)
        return Jet2(s, d1, d2)
    return math.sqrt(x)


def jcbrt(x):
    if isinstance(x, Jet2):
        return x ** (1.0 / 3.0)
    return np.cbrt(x)


def value(x):
    """Plain float of ``x``, whether jet or number."""
    return _val(x)


def seed(x: float) -> Jet2:
    """Jet representing the differentiation variable itself."""
    return Jet2(x, 1.0, 0.0)


def directional_derivative(fun: Callable[[np.ndarray], np.ndarray],
                           x: np.ndarray, d: np.ndarray) -> np.ndarray:
    """First derivative of ``fun`` along direction ``d`` by jet propagation.

    ``fun`` must accept an object array of :class:`Jet2` and use only
    arithmetic supported by jets. Used in tests to validate hand-coded
    Jacobians independently of finite differences.
    """
    xs = np.array([Jet2(float(xi), float(di)) for xi, di in zip(x, d)], dtype=object)
    out = fun(xs)
    return np.array([o.d1 if isinstance(o, Jet2) else 0.0 for o in np.atleast_1d(out)])
