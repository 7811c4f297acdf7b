"""Canonical tensor-monomial expressions.

An Expression is a sum of Monomials; each Monomial is a complex-rational
coefficient, an optional power product of scalar symbols (couplings and the
abstract internal dimension ``dimG``), a multiset of atom factors carrying
index assignments, spatial-derivative multi-indices, a time-derivative flag
and an evaluation point, plus an optional Dirac-delta factor with its own
derivative multi-index.

Canonical form is unique: dummy indices are renamed by first occurrence
after an exhaustive minimization over factor order (within coarse-key ties)
and declared slot symmetries, with sign tracking for antisymmetric groups.
Two-point monomials are normalized so every factor sits at x, moving
derivatives between the delta and its cofactors with the distribution
identity g(y) d^D delta(x-y) = sum_S binom(D,S) d^S g(x) d^{D-S} delta(x-y).

Expressions are immutable after construction and all operations are pure,
so values can be shared freely between threads.
"""

from __future__ import annotations

import itertools
from fractions import Fraction
from typing import NamedTuple

from .atoms import INTERNAL, SPATIAL, INTERNAL_NAMES, SPATIAL_NAMES, SPACETIME_NAMES, SPACETIME
from .coeff import Coef, ONE
from .errors import IndexUsageError

DIMG = "dimG"


class Factor(NamedTuple):
    atom: object
    indices: tuple
    deriv: tuple = ()
    dot: int = 0
    point: str = "x"


class Monomial(NamedTuple):
    coef: Coef
    factors: tuple
    delta: object = None  # None or tuple of spatial (kind, name) pairs
    scalars: tuple = ()  # sorted ((name, power), ...)


_fresh_counter = itertools.count()


def fresh_name(kind):
    return f"%{next(_fresh_counter)}"


def mul_scalars(a, b):
    pows = dict(a)
    for name, p in b:
        pows[name] = pows.get(name, 0) + p
        if pows[name] == 0:
            del pows[name]
    return tuple(sorted(pows.items()))


def _index_counts(m):
    counts = {}

    def see(idx):
        counts[idx] = counts.get(idx, 0) + 1

    for f in m.factors:
        for idx in f.indices:
            see(idx)
        for idx in f.deriv:
            see(idx)
    if m.delta is not None:
        for idx in m.delta:
            see(idx)
    return counts


def validate_monomial(m):
    counts = _index_counts(m)
    by_name = {}
    for (kind, name), c in counts.items():
        if c > 2:
            raise IndexUsageError(f"index {name!r} appears {c} times")
        if name in by_name and by_name[name] != kind:
            raise IndexUsageError(f"index {name!r} used with two different kinds")
        by_name[name] = kind
    if m.delta is not None:
        for kind, name in m.delta:
            if kind != SPATIAL:
                raise IndexUsageError(f"delta derivative index {name!r} must be spatial")
    return counts


def monomial_frees(m):
    return frozenset(idx for idx, c in _index_counts(m).items() if c == 1)


# ---------------------------------------------------------------------------
# point normalization


def _multiset_subsets(d):
    """Sub-multisets of a derivative multi-index with binomial multiplicities."""
    if len(d) == 0:
        return [((), (), 1)]
    if len(d) == 1:
        return [((), d, 1), (d, (), 1)]
    a, b = d
    if a == b:
        return [((), d, 1), ((a,), (a,), 2), (d, (), 1)]
    return [((), d, 1), ((a,), (b,), 1), ((b,), (a,), 1), (d, (), 1)]


def _normalize_points(m):
    """Move every y-point factor to x; returns a list of monomials."""
    if all(f.point == "x" for f in m.factors):
        return [m]
    if m.delta is None:
        raise IndexUsageError("two-point monomial without a delta factor")
    pos = next(i for i, f in enumerate(m.factors) if f.point == "y")
    g = m.factors[pos]
    rest = m.factors[:pos] + m.factors[pos + 1:]
    if g.atom.klass == "constant":
        return _normalize_points(m._replace(factors=rest + (g._replace(point="x"),)))
    out = []
    for hit, remain, mult in _multiset_subsets(tuple(m.delta)):
        moved = g._replace(point="x", deriv=tuple(g.deriv) + hit)
        mm = Monomial(m.coef * mult, rest + (moved,), remain, m.scalars)
        out.extend(_normalize_points(mm))
    return out


# ---------------------------------------------------------------------------
# Kronecker-delta elimination


def _substitute_index(m, old, new, skip_factor):
    """Replace one occurrence of ``old`` outside factor position ``skip_factor``."""
    factors = list(m.factors)
    for i, f in enumerate(factors):
        if i == skip_factor:
            continue
        if old in f.indices:
            idx = list(f.indices)
            idx[idx.index(old)] = new
            factors[i] = f._replace(indices=tuple(idx))
            return m._replace(factors=tuple(factors))
        if old in f.deriv:
            dv = list(f.deriv)
            dv[dv.index(old)] = new
            factors[i] = f._replace(deriv=tuple(dv))
            return m._replace(factors=tuple(factors))
    if m.delta is not None and old in m.delta:
        dd = list(m.delta)
        dd[dd.index(old)] = new
        return m._replace(delta=tuple(dd))
    return None


def _eliminate_kdeltas(m):
    changed = True
    while changed:
        changed = False
        counts = _index_counts(m)
        for i, f in enumerate(m.factors):
            if f.atom.name != "kd" or f.dot or f.deriv:
                continue
            a, b = f.indices
            rest = m.factors[:i] + m.factors[i + 1:]
            if a == b:
                if a[0] == SPATIAL:
                    m = Monomial(m.coef * 3, rest, m.delta, m.scalars)
                else:
                    m = Monomial(m.coef, rest, m.delta, mul_scalars(m.scalars, ((DIMG, 1),)))
                changed = True
                break
            if counts.get(a, 0) == 2:
                sub = _substitute_index(m._replace(factors=m.factors), a, b, i)
                if sub is not None:
                    m = sub._replace(factors=sub.factors[:i] + sub.factors[i + 1:])
                    changed = True
                    break
            if counts.get(b, 0) == 2:
                sub = _substitute_index(m._replace(factors=m.factors), b, a, i)
                if sub is not None:
                    m = sub._replace(factors=sub.factors[:i] + sub.factors[i + 1:])
                    changed = True
                    break
    return m


# ---------------------------------------------------------------------------
# orbit minimization

_canon_cache = {}

_POOLS = {SPATIAL: SPATIAL_NAMES, INTERNAL: INTERNAL_NAMES, SPACETIME: SPACETIME_NAMES}


def _pool_names(kind, used):
    base = _POOLS[kind]
    for name in base:
        if name not in used:
            yield name
    for n in itertools.count(1):
        for name in base:
            cand = f"{name}{n}"
            if cand not in used:
                yield cand


def _coarse_key(f):
    return (f.atom.name, f.atom.slots, f.dot, len(f.deriv), f.point)


def _memo_key(m):
    """Structure key with dummies renamed by stored-scan order; monomials
    equal up to dummy naming share cache entries."""
    counts = _index_counts(m)
    ren = {}

    def tok(idx):
        if counts[idx] == 1:
            return idx
        got = ren.get(idx)
        if got is None:
            got = len(ren)
            ren[idx] = got
        return got

    fkey = tuple((f.atom.name, f.atom.slots, f.dot, f.point,
                  tuple(tok(i) for i in f.indices),
                  tuple(tok(i) for i in f.deriv)) for f in m.factors)
    dkey = tuple(tok(i) for i in m.delta) if m.delta is not None else None
    return (m.scalars, dkey, fkey)


def _fine_profile(f, counts, partner_class):
    """Permutation-invariant refinement of a factor within its coarse tie
    group: the multiset of per-slot features (free name, or the coarse class
    of the dummy's partner factor)."""
    feats = []
    for i in f.indices:
        if counts[i] == 1:
            feats.append(("f", i))
        else:
            feats.append(("d", partner_class(f, i)))
    dfeats = []
    for i in f.deriv:
        if counts[i] == 1:
            dfeats.append(("f", i))
        else:
            dfeats.append(("d", partner_class(f, i)))
    return (tuple(sorted(feats)), tuple(sorted(dfeats)))


def _orderings(seq):
    if len(seq) <= 1:
        return [tuple(seq)]
    return list(dict.fromkeys(itertools.permutations(seq)))


def _canonical_structure(m):
    """Minimal signed signature of a monomial; returns (sign, Monomial) or None for zero.

    The returned monomial has coefficient ONE; the caller folds sign and the
    original coefficient back in.
    """
    key = _memo_key(m)
    if key in _canon_cache:
        return _canon_cache[key]

    counts = validate_monomial(m)
    frees = {idx for idx, c in counts.items() if c == 1}

    # locate each dummy's two occurrence sites to refine tie groups
    sites = {}
    for fi, f in enumerate(m.factors):
        for i in f.indices:
            sites.setdefault(i, []).append(fi)
        for i in f.deriv:
            sites.setdefault(i, []).append(fi)
    if m.delta is not None:
        for i in m.delta:
            sites.setdefault(i, []).append(-1)

    def partner_class(f, idx):
        return tuple(sorted(("delta",) if fi == -1 else _coarse_key(m.factors[fi])
                            for fi in sites.get(idx, ())))

    def full_key(i):
        f = m.factors[i]
        return (_coarse_key(f), _fine_profile(f, counts, partner_class))

    order = sorted(range(len(m.factors)), key=full_key)
    groups = []
    for _, grp in itertools.groupby(order, key=full_key):
        groups.append(list(grp))

    factor_options = []  # per factor position i: list of (slot-perm, deriv-order, sign)
    for f in m.factors:
        opts = []
        for perm, sign in f.atom.slot_permutations():
            for dv in _orderings(f.deriv):
                opts.append((perm, dv, sign))
        factor_options.append(opts)
    delta_orders = _orderings(m.delta) if m.delta is not None else [None]

    best = None
    seen = {}
    zero = False

    group_perms = [list(itertools.permutations(g)) for g in groups]
    for arrangement in itertools.product(*group_perms):
        arranged = [i for grp in arrangement for i in grp]
        for choice in itertools.product(*(factor_options[i] for i in arranged)):
            base_sign = 1
            for _, _, s in choice:
                base_sign *= s
            for dord in delta_orders:
                rename = {}
                counter = itertools.count()

                def tok(idx):
                    if idx in frees:
                        return ("f", idx[0], idx[1])
                    t = rename.get(idx)
                    if t is None:
                        t = ("d", idx[0], next(counter))
                        rename[idx] = t
                    return t

                fsig = []
                for pos, (perm, dv, _) in zip(arranged, choice):
                    f = m.factors[pos]
                    slots = tuple(tok(f.indices[p]) for p in perm)
                    derivs = tuple(sorted(tok(i) for i in dv))
                    fsig.append((f.atom.name, f.atom.slots, f.dot, f.point, slots, derivs))
                dsig = tuple(tok(i) for i in dord) if dord is not None else None
                sig = (m.scalars, dsig, tuple(fsig))

                prev = seen.get(sig)
                if prev is None:
                    seen[sig] = base_sign
                elif prev != base_sign:
                    zero = True
                if best is None or (sig, base_sign) < best[0]:
                    best = ((sig, base_sign), arranged, choice, dord)
                if zero:
                    break
            if zero:
                break
        if zero:
            break

    if zero or best is None:
        _canon_cache[key] = None
        return None

    # fallthrough below rebuilds the canonical monomial and caches it

    (sig, sign), arranged, choice, dord = best
    # rebuild with pool names for dummies
    used = {name for (_, name) in frees}
    pool_iters = {}
    assign = {}

    def real_name(token):
        if token[0] == "f":
            return (token[1], token[2])
        got = assign.get(token)
        if got is None:
            kind = token[1]
            it = pool_iters.get(kind)
            if it is None:
                it = _pool_names(kind, used)
                pool_iters[kind] = it
            got = (kind, next(it))
            assign[token] = got
        return got

    _, dsig, fsig = sig
    factors = []
    for (pos, (perm, dv, _)), fs in zip(zip(arranged, choice), fsig):
        f = m.factors[pos]
        indices = tuple(real_name(t) for t in fs[4])
        derivs = tuple(real_name(t) for t in fs[5])
        factors.append(Factor(f.atom, indices, derivs, f.dot, f.point))
    delta = tuple(real_name(t) for t in dsig) if dsig is not None else None
    canon = Monomial(ONE, tuple(factors), delta, m.scalars)
    result = (sign, canon)
    _canon_cache[key] = result
    return result


def monomial_key(m):
    """A fully-primitive, totally-ordered key for a canonical monomial."""
    fkey = tuple((f.atom.name, f.atom.slots, f.dot, f.point, f.indices, f.deriv)
                 for f in m.factors)
    dkey = (1, m.delta) if m.delta is not None else (0, ())
    return (m.scalars, dkey, fkey)


def canonicalize_monomials(mons):
    """Full canonicalization of raw monomials into a sorted, merged term tuple."""
    flat = []
    for m in mons:
        if m.coef.is_zero:
            continue
        for mm in _normalize_points(m):
            mm = _eliminate_kdeltas(mm)
            got = _canonical_structure(mm)
            if got is None:
                continue
            sign, canon = got
            flat.append((canon, mm.coef * sign))
    merged = {}
    for canon, coef in flat:
        skey = monomial_key(canon)
        if skey in merged:
            merged[skey] = (canon, merged[skey][1] + coef)
        else:
            merged[skey] = (canon, coef)
    out = []
    for skey in sorted(merged):
        canon, coef = merged[skey]
        if not coef.is_zero:
            out.append(canon._replace(coef=coef))
    return tuple(out)


# ---------------------------------------------------------------------------


class Expression:
    """An immutable canonical sum of monomials."""

    __slots__ = ("terms", "_hash")

    def __init__(self, terms=()):
        object.__setattr__(self, "terms", tuple(terms))
        object.__setattr__(self, "_hash", hash(self.terms))

    def __setattr__(self, *a):
        raise AttributeError("Expression is immutable")

    @staticmethod
    def from_monomials(mons):
        return Expression(canonicalize_monomials(mons))

    @staticmethod
    def zero():
        return _ZERO

    @property
    def is_zero(self):
        return not self.terms

    def free_indices(self):
        if not self.terms:
            return frozenset()
        return monomial_frees(self.terms[0])

    def __eq__(self, other):
        return isinstance(other, Expression) and self.terms == other.terms

    def __hash__(self):
        return self._hash

    def __add__(self, other):
        if self.is_zero:
            return other
        if other.is_zero:
            return self
        if self.free_indices() != other.free_indices():
            raise IndexUsageError(
                f"adding expressions with different free indices: "
                f"{sorted(self.free_indices())} vs {sorted(other.free_indices())}")
        return Expression.from_monomials(self.terms + other.terms)

    def __sub__(self, other):
        return self + (-other)

    def __neg__(self):
        return Expression(tuple(m._replace(coef=-m.coef) for m in self.terms))

    def scaled(self, c):
        """Multiply by a Coef, int, or Fraction."""
        if not isinstance(c, Coef):
            c = Coef(c)
        if c.is_zero:
            return _ZERO
        return Expression(tuple(m._replace(coef=m.coef * c) for m in self.terms))

    def scalar_pow(self, name, power):
        """Multiply by a scalar symbol power, e.g. g2**-1."""
        extra = ((name, power),)
        return Expression.from_monomials(
            tuple(m._replace(scalars=mul_scalars(m.scalars, extra)) for m in self.terms))

    def __mul__(self, other):
        if isinstance(other, (int, Fraction, Coef)):
            return self.scaled(other)
        if self.is_zero or other.is_zero:
            return _ZERO
        mons = []
        for a in self.terms:
            fa = freshen_dummies(a)
            for b in other.terms:
                fb = freshen_dummies(b)
                if fa.delta is not None and fb.delta is not None:
                    raise IndexUsageError("product of two delta-carrying monomials")
                delta = fa.delta if fa.delta is not None else fb.delta
                mons.append(Monomial(fa.coef * fb.coef, fa.factors + fb.factors,
                                     delta, mul_scalars(fa.scalars, fb.scalars)))
        return Expression.from_monomials(mons)

    __rmul__ = __mul__

    def monic(self):
        """Divide by the coefficient of the leading canonical term."""
        if self.is_zero:
            return self
        lead = self.terms[0].coef
        return Expression(tuple(m._replace(coef=m.coef / lead) for m in self.terms))

    def rename_frees(self, mapping):
        """Rename free indices; mapping is {(kind, name): (kind, new)}."""
        frees = self.free_indices()
        mons = []
        for m in self.terms:
            m = freshen_dummies(m)

            def rn(idx):
                return mapping.get(idx, idx) if idx in frees else idx

            factors = tuple(
                f._replace(indices=tuple(rn(i) for i in f.indices),
                           deriv=tuple(rn(i) for i in f.deriv))
                for f in m.factors)
            delta = tuple(rn(i) for i in m.delta) if m.delta is not None else None
            mons.append(m._replace(factors=factors, delta=delta))
        return Expression.from_monomials(mons)

    def __repr__(self):
        from .dsl import dump_expression
        return f"<Expr {dump_expression(self)}>"


_ZERO = Expression(())


def freshen_dummies(m):
    counts = _index_counts(m)
    ren = {}
    for idx, c in counts.items():
        if c == 2:
            ren[idx] = (idx[0], fresh_name(idx[0]))
    if not ren:
        return m

    def rn(idx):
        return ren.get(idx, idx)

    factors = tuple(
        f._replace(indices=tuple(rn(i) for i in f.indices),
                   deriv=tuple(rn(i) for i in f.deriv))
        for f in m.factors)
    delta = tuple(rn(i) for i in m.delta) if m.delta is not None else None
    return m._replace(factors=factors, delta=delta)


def single(atom, indices, deriv=(), dot=0, point="x", coef=ONE, scalars=()):
    return Expression.from_monomials(
        [Monomial(coef, (Factor(atom, tuple(indices), tuple(deriv), dot, point),), None, scalars)])


def number(c):
    if not isinstance(c, Coef):
        c = Coef(c)
    if c.is_zero:
        return _ZERO
    return Expression.from_monomials([Monomial(c, ())])


def spatial_derivative(e, idx):
    """Leibniz spatial derivative d/dx_idx of an expression at x."""
    mons = []
    for m in e.terms:
        m = freshen_dummies(m)
        for i, f in enumerate(m.factors):
            if f.atom.klass == "constant":
                continue
            nf = f._replace(deriv=tuple(f.deriv) + (idx,))
            mons.append(m._replace(factors=m.factors[:i] + (nf,) + m.factors[i + 1:]))
        if m.delta is not None:
            mons.append(m._replace(delta=tuple(m.delta) + (idx,)))
    return Expression.from_monomials(mons)


derivative = spatial_derivative


def substitute_atom(e, atom, replacement, slot_frees, dot=0):
    """Replace every factor of ``atom`` (with the given dot flag) by an expression.

    ``slot_frees`` names the replacement's free indices slot by slot; they are
    bound to each matched factor's indices.  A factor carrying spatial
    derivatives is replaced by the correspondingly differentiated replacement.
    The replacement must not itself contain the substituted atom.
    """
    if len(slot_frees) != len(atom.slots):
        raise IndexUsageError(f"slot_frees does not match {atom.name} signature")
    mons = list(e.terms)
    result = []
    while mons:
        m = mons.pop()
        pos = next((i for i, f in enumerate(m.factors)
                    if f.atom == atom and f.dot == dot), None)
        if pos is None:
            result.append(m)
            continue
        f = m.factors[pos]
        rest = m._replace(factors=m.factors[:pos] + m.factors[pos + 1:])
        mapping = {sf: fi for sf, fi in zip(slot_frees, f.indices)}
        rep = replacement.rename_frees(mapping)
        for dv in f.deriv:
            rep = spatial_derivative(rep, dv)
        prod = Expression((rest,)) * rep
        mons.extend(prod.terms)
    return Expression.from_monomials(result)
