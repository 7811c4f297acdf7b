"""Distribution-valued equal-time Poisson brackets.

Brackets between unsmeared densities are computed through variational
kernels against every canonical pair and an exact z-contraction:

    int dz  Ra(x) d^D1_x delta(x-z) . Rb(y) d^D2_y delta(y-z)
        = (-1)^|D2| Ra(x) Rb(y) d^{D1+D2}_x delta(x-y)

after which point normalization moves the y factors to x, giving the
canonical delta normal form.  Entries of constraint matrices are cached;
all operations are pure so the cache is write-once per cell.
"""

from __future__ import annotations

from .atoms import SPATIAL, INTERNAL
from .calculus import variational_kernel
from .coeff import Coef
from .errors import UnsupportedDeltaOrderError
from .expr import Expression, Monomial, fresh_name, freshen_dummies, mul_scalars
from .legendre import slot_free_names


def canonical_pairs(dm):
    """(configuration atom, momentum atom) pairs for a decomposed model."""
    out = []
    for name in dm.config_atoms:
        q = dm.atom(name)
        p = dm.atom("P_" + name)
        out.append((q, p))
    return tuple(out)


_pb_cache = {}


def poisson_bracket(a, b, pairs):
    """{a(x), b(y)} as a delta-carrying canonical Expression."""
    key = (a, b, pairs)
    hit = _pb_cache.get(key)
    if hit is not None:
        return hit
    mons = []
    for q, p in pairs:
        comp = tuple((k, fresh_name(k)) for k in q.slots)
        ka_q = variational_kernel(a, q, comp)
        kb_p = variational_kernel(b, p, comp) if not ka_q.is_zero else None
        if kb_p is not None and not kb_p.is_zero:
            mons.extend(_contract_z(ka_q, kb_p, q.weight))
        ka_p = variational_kernel(a, p, comp)
        if ka_p.is_zero:
            continue
        kb_q = variational_kernel(b, q, comp)
        if not kb_q.is_zero:
            mons.extend(_contract_z(ka_p, kb_q, -q.weight))
    result = Expression.from_monomials(mons)
    _pb_cache[key] = result
    return result


def _contract_z(ka, kb, weight):
    out = []
    for ma in ka.terms:
        ma = freshen_dummies(ma)
        for mb in kb.terms:
            mb = freshen_dummies(mb)
            d1, d2 = ma.delta, mb.delta
            if len(d1) + len(d2) > 2:
                raise UnsupportedDeltaOrderError(
                    "bracket produced more than two delta derivatives")
            sign = 1 if len(d2) % 2 == 0 else -1
            coef = ma.coef * mb.coef * Coef(weight * sign)
            yfacs = tuple(f._replace(point="y") for f in mb.factors)
            out.append(Monomial(coef, ma.factors + yfacs, tuple(d1) + tuple(d2),
                                mul_scalars(ma.scalars, mb.scalars)))
    return out


def smear_y(bracket):
    """Integrate the second argument's point over space: only the plain-delta
    part survives once every factor sits at x."""
    mons = []
    for m in bracket.terms:
        if m.delta == ():
            mons.append(m._replace(delta=None))
    return Expression.from_monomials(mons)


def bracket_with_smeared(a, b_density, pairs):
    """{a(x), integral of b} for a local density b."""
    return smear_y(poisson_bracket(a, b_density, pairs))


def bracket_transpose(bracket):
    """Swap the two evaluation points of a bracket result.

    Antisymmetry means poisson_bracket(b, a) == -bracket_transpose(
    poisson_bracket(a, b)) after canonicalization.
    """
    mons = []
    for m in bracket.terms:
        sign = 1 if len(m.delta) % 2 == 0 else -1
        flipped = tuple(f._replace(point="y" if f.point == "x" else "x")
                        for f in m.factors)
        mons.append(Monomial(m.coef * sign, flipped, m.delta, m.scalars))
    return Expression.from_monomials(mons)


class BracketResult:
    """View of a delta-carrying bracket split into delta and d-delta parts."""

    def __init__(self, expression):
        self.expression = expression

    @property
    def delta_coefficient(self):
        mons = [m._replace(delta=None) for m in self.expression.terms if m.delta == ()]
        return Expression.from_monomials(mons)

    def derivative_coefficients(self):
        out = {}
        for m in self.expression.terms:
            if m.delta:
                out.setdefault(m.delta, []).append(m)
        return {k: Expression(tuple(v)) for k, v in out.items()}

    @property
    def is_zero(self):
        return self.expression.is_zero


class BracketMatrix:
    """All pairwise constraint brackets, weak-reduced modulo an ideal."""

    def __init__(self, constraints, pairs, reducer=None):
        self.constraints = list(constraints)
        self.pairs = pairs
        self.reducer = reducer or (lambda e: e)
        self._cells = {}

    def entry(self, i, j):
        key = (i, j)
        if key not in self._cells:
            a, b = self.constraints[i], self.constraints[j]
            bb = b.expression.rename_frees(
                {f: (f[0], f[1] + "1") for f in b.frees})
            raw = poisson_bracket(a.expression, bb, self.pairs)
            self._cells[key] = self.reducer(raw)
        return self._cells[key]

    def rows(self):
        n = len(self.constraints)
        for i in range(n):
            for j in range(n):
                yield i, j, self.entry(i, j)
