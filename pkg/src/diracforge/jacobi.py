"""Normal form for products of structure constants.

Two Jacobi-tagged factors sharing exactly one contracted index obey

    f[a1 a2 m] f[b1 b2 m] = f[a1 b1 m] f[a2 b2 m] + f[a1 b2 m] f[b1 a2 m]

The reducer repeatedly subtracts canonicalized instances of this identity
(each identically zero) so that the lexicographically largest of the three
related index wirings is eliminated.  Every rewrite preserves the factor
multiset and strictly lowers the term-key multiset, so a fixed point is
always reached; confluence is checked numerically in the test suite.
"""

from __future__ import annotations

from .expr import Expression, Monomial, monomial_key, _index_counts


def _jacobi_pairs(m):
    """Pairs of jacobi-constant factor positions sharing exactly one dummy."""
    positions = [i for i, f in enumerate(m.factors)
                 if "jacobi" in f.atom.tags and not f.dot and not f.deriv]
    counts = _index_counts(m)
    out = []
    for i in range(len(positions)):
        for j in range(i + 1, len(positions)):
            p, q = positions[i], positions[j]
            shared = [idx for idx in m.factors[p].indices
                      if idx in m.factors[q].indices and counts.get(idx) == 2]
            if len(shared) == 1:
                out.append((p, q, shared[0]))
    return out


def _pulled(indices, shared):
    """Move the shared index to the last slot of a totally antisymmetric factor."""
    pos = indices.index(shared)
    rest = tuple(idx for idx in indices if idx != shared)
    sign = 1 if (len(indices) - 1 - pos) % 2 == 0 else -1
    return rest, sign


def _relation(m, p, q, shared):
    """The canonicalized Jacobi instance containing monomial ``m``; zero as a tensor."""
    fp, fq = m.factors[p], m.factors[q]
    (a1, a2), sa = _pulled(fp.indices, shared)
    (b1, b2), sb = _pulled(fq.indices, shared)
    rest = tuple(f for i, f in enumerate(m.factors) if i not in (p, q))
    s = sa * sb

    def build(w1, w2, coef):
        return Monomial(coef,
                        rest + (fp._replace(indices=(w1[0], w1[1], shared)),
                                fq._replace(indices=(w2[0], w2[1], shared))),
                        m.delta, m.scalars)

    mons = [build((a1, a2), (b1, b2), m.coef * s),
            build((a1, b1), (a2, b2), -m.coef * s),
            build((a1, b2), (b1, a2), -m.coef * s)]
    return Expression.from_monomials(mons)


def reduce_jacobi(e, max_steps=2000):
    """Rewrite structure-constant pairs to the oriented Jacobi normal form."""
    for _ in range(max_steps):
        progress = False
        for m in reversed(e.terms):
            mk = monomial_key(m)
            for p, q, shared in _jacobi_pairs(m):
                rel = _relation(m, p, q, shared)
                if rel.is_zero:
                    continue
                top = rel.terms[-1]
                if monomial_key(top) != mk:
                    continue
                e = e - rel.scaled(m.coef / top.coef)
                progress = True
                break
            if progress:
                break
        if not progress:
            return e
    raise RuntimeError("jacobi reduction did not reach a fixed point")
