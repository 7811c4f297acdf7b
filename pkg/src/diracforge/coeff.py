"""Exact complex-rational coefficients.

The Levi-Civita-coupled model has an exact imaginary unit in its action, so
coefficients are pairs of Fractions rather than floats.
"""

from __future__ import annotations

from fractions import Fraction


class Coef:
    """A complex number with rational real and imaginary parts."""

    __slots__ = ("re", "im", "_hash")

    def __init__(self, re=0, im=0):
        self.re = Fraction(re)
        self.im = Fraction(im)
        self._hash = hash((self.re, self.im))

    def __repr__(self):
        return f"Coef({self.re}, {self.im})"

    def __eq__(self, other):
        return isinstance(other, Coef) and self.re == other.re and self.im == other.im

    def __hash__(self):
        return self._hash

    def __add__(self, other):
        return Coef(self.re + other.re, self.im + other.im)

    def __sub__(self, other):
        return Coef(self.re - other.re, self.im - other.im)

    def __neg__(self):
        return Coef(-self.re, -self.im)

    def __mul__(self, other):
        if isinstance(other, (int, Fraction)):
            return Coef(self.re * other, self.im * other)
        return Coef(self.re * other.re - self.im * other.im,
                    self.re * other.im + self.im * other.re)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, Fraction)):
            return Coef(self.re / other, self.im / other)
        n = other.re * other.re + other.im * other.im
        if n == 0:
            raise ZeroDivisionError("division by zero Coef")
        return Coef((self.re * other.re + self.im * other.im) / n,
                    (other.re * self.im - other.im * self.re) / n)

    @property
    def is_zero(self):
        return self.re == 0 and self.im == 0

    def to_complex(self):
        return complex(self.re, self.im)

    def dump(self):
        """Render in the expression grammar, e.g. ``-3/4``, ``i``, ``(1/2+3/4*i)``."""
        if self.im == 0:
            return _frac_str(self.re)
        if self.re == 0:
            if self.im == 1:
                return "i"
            if self.im == -1:
                return "-i"
            return f"{_frac_str(self.im)}*i"
        im = f"+{_frac_str(self.im)}*i" if self.im > 0 else f"{_frac_str(self.im)}*i"
        return f"({_frac_str(self.re)}{im})"


def _frac_str(f):
    if f.denominator == 1:
        return str(f.numerator)
    return f"{f.numerator}/{f.denominator}"


ZERO = Coef(0)
ONE = Coef(1)
I = Coef(0, 1)
