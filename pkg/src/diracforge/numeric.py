"""Independent numeric oracle for symbolic identities.

Expressions are evaluated on "jet samples": every atom component, together
with its spatial-derivative components, gets an independent random value.
The internal dimension is instantiated (default SU(2): dim 3, f and eta
both the Levi-Civita symbol, Kronecker deltas the identity), so any
canonical-form equality can be cross-checked as a floating-point identity.

A small periodic lattice evaluator backs the functional-derivative checks:
on a periodic lattice central differences are exactly skew-adjoint, so
integration by parts is exact and the variational derivative of the summed
density can be compared against the symbolic result at machine precision.
"""

from __future__ import annotations

import itertools
import random

import numpy as np

from .atoms import INTERNAL, SPATIAL, SPACETIME
from .errors import MissingSampleError, IndexUsageError
from .expr import DIMG

SPATIAL_DIM = 3


def _eps(*vals):
    """Levi-Civita symbol of len(vals) indices over range(len(vals))."""
    n = len(vals)
    if len(set(vals)) != n:
        return 0
    sign = 1
    seq = list(vals)
    for a in range(n):
        for b in range(a + 1, n):
            if seq[a] > seq[b]:
                sign = -sign
    return sign


class FieldSample:
    """Deterministic lazily-generated jet sample.

    Every (atom, components, derivative multi-set, dot) combination maps to
    a stable pseudo-random value in [-1, 1]; couplings map to [0.5, 1.5] to
    stay away from zero.  Values do not depend on evaluation order.
    """

    def __init__(self, seed=0, dim=3):
        self.seed = seed
        self.dim = dim
        self._cache = {}

    def _value(self, key, lo=-1.0, hi=1.0):
        got = self._cache.get(key)
        if got is None:
            rng = random.Random(f"{self.seed}:{key}")
            got = rng.uniform(lo, hi)
            self._cache[key] = got
        return got

    def atom_value(self, atom, comps, deriv, dot):
        key = (atom.name, atom.slots, comps, tuple(sorted(deriv)), dot)
        return self._value(key)

    def scalar_value(self, name):
        if name == DIMG:
            return float(self.dim)
        return self._value(("scalar", name), 0.5, 1.5)


def _constant_value(atom, comps):
    if atom.name == "kd":
        return 1.0 if comps[0] == comps[1] else 0.0
    if atom.name in ("f", "eta", "epsilon4"):
        return float(_eps(*comps))
    return None


def numeric_evaluate(e, sample, frees=None):
    """Evaluate a delta-free expression at a jet sample.

    ``frees`` assigns integer component values to the expression's free
    indices.  Contracted indices are summed over their instantiated ranges.
    """
    frees = dict(frees or {})
    total = 0j
    for m in e.terms:
        if m.delta is not None:
            raise IndexUsageError("numeric_evaluate does not take delta-carrying terms")
        total += _evaluate_monomial(m, sample, frees)
    return total


def _index_slots(m):
    slots = {}
    for idx in _all_indices(m):
        slots.setdefault(idx, 0)
        slots[idx] += 1
    return slots


def _all_indices(m):
    for f in m.factors:
        yield from f.indices
        yield from f.deriv
    if m.delta is not None:
        yield from m.delta


def _evaluate_monomial(m, sample, frees):
    dummies = []
    for idx, count in _index_slots(m).items():
        if count == 2:
            dummies.append(idx)
        elif idx not in frees:
            raise MissingSampleError(f"no component value for free index {idx}")
    ranges = []
    for kind, _ in dummies:
        if kind == SPATIAL:
            ranges.append(range(SPATIAL_DIM))
        elif kind == INTERNAL:
            ranges.append(range(sample.dim))
        else:
            ranges.append(range(4))
    coef = m.coef.to_complex()
    for name, power in m.scalars:
        coef *= sample.scalar_value(name) ** power
    total = 0j
    for combo in itertools.product(*ranges):
        assign = dict(frees)
        assign.update(zip(dummies, combo))
        prod = 1.0
        for f in m.factors:
            comps = tuple(assign[i] for i in f.indices)
            if f.atom.klass == "constant":
                v = _constant_value(f.atom, comps)
                if v is None:
                    raise MissingSampleError(f"no numeric rule for constant {f.atom.name}")
                prod *= v
            else:
                deriv = tuple(assign[i] for i in f.deriv)
                prod *= sample.atom_value(f.atom, comps, deriv, f.dot)
            if prod == 0.0:
                break
        total += prod
    return coef * total


def assert_numeric_zero(e, seeds=range(10), frees_choices=3, tol=1e-9, dim=3):
    """Check that an expression vanishes numerically at several jet samples."""
    scale = max_abs_sample(e, seeds, frees_choices, dim)
    for seed in seeds:
        sample = FieldSample(seed, dim)
        rng = random.Random(seed + 12345)
        for _ in range(frees_choices):
            frees = _random_frees(e, rng, dim)
            val = numeric_evaluate(e, sample, frees)
            if abs(val) > tol * max(scale, 1.0):
                raise AssertionError(f"expression is not numerically zero: {val} (seed {seed})")


def _random_frees(e, rng, dim):
    frees = {}
    for kind, name in sorted(e.free_indices()):
        top = SPATIAL_DIM if kind == SPATIAL else (dim if kind == INTERNAL else 4)
        frees[(kind, name)] = rng.randrange(top)
    return frees


def max_abs_sample(e, seeds, frees_choices, dim):
    """Scale reference: the largest |term| magnitude seen across samples."""
    best = 0.0
    for seed in seeds:
        sample = FieldSample(seed, dim)
        rng = random.Random(seed + 54321)
        for _ in range(frees_choices):
            frees = _random_frees(e, rng, dim)
            for m in e.terms:
                if m.delta is not None:
                    continue
                best = max(best, abs(_evaluate_monomial(m, sample, frees)))
    return best


def expressions_numeric_equal(a, b, seeds=range(5), tol=1e-9, dim=3):
    diff_terms = list(a.terms) + list((-b).terms)
    from .expr import Expression
    diff = Expression.from_monomials(diff_terms)
    if diff.is_zero:
        return True
    assert_numeric_zero(diff, seeds, 3, tol, dim)
    return True


# ---------------------------------------------------------------------------
# periodic lattice


class Lattice:
    """Periodic n^3 lattice with central differences; used as the
    independent oracle for variational derivatives."""

    def __init__(self, atoms, seed=0, n=4, dim=3):
        self.n = n
        self.dim = dim
        rng = np.random.default_rng(seed)
        self.fields = {}
        for atom in atoms:
            shape = []
            for kind in atom.slots:
                shape.append(SPATIAL_DIM if kind == SPATIAL else dim)
            for dotted in (0, 1):
                self.fields[(atom.name, dotted)] = rng.uniform(
                    -1.0, 1.0, size=tuple(shape) + (n, n, n))
        self.scalars = {}
        self._rng = rng

    def scalar_value(self, name):
        if name == DIMG:
            return float(self.dim)
        if name not in self.scalars:
            self.scalars[name] = float(self._rng.uniform(0.5, 1.5))
        return self.scalars[name]

    def field_array(self, atom, comps, dot):
        arr = self.fields.get((atom.name, dot))
        if arr is None:
            raise MissingSampleError(f"lattice has no field {atom.name}")
        return arr[comps]

    def central_diff(self, arr, direction):
        return (np.roll(arr, -1, axis=direction) - np.roll(arr, 1, axis=direction)) / 2.0

    def evaluate_density(self, e):
        """Evaluate an expression sitewise; returns an (n,n,n) array."""
        out = np.zeros((self.n, self.n, self.n), dtype=complex)
        for m in e.terms:
            if m.delta is not None:
                raise IndexUsageError("lattice evaluation of delta-carrying term")
            out += self._monomial_array(m)
        return out

    def _monomial_array(self, m):
        dummies = [idx for idx, c in _index_slots(m).items() if c == 2]
        for idx, c in _index_slots(m).items():
            if c == 1:
                raise MissingSampleError(f"lattice density must be scalar, free {idx}")
        ranges = [range(SPATIAL_DIM) if k == SPATIAL else range(self.dim)
                  for k, _ in dummies]
        coef = m.coef.to_complex()
        for name, power in m.scalars:
            coef *= self.scalar_value(name) ** power
        total = np.zeros((self.n, self.n, self.n), dtype=complex)
        for combo in itertools.product(*ranges):
            assign = dict(zip(dummies, combo))
            prod = np.ones((self.n, self.n, self.n))
            ok = True
            for f in m.factors:
                comps = tuple(assign[i] for i in f.indices)
                if f.atom.klass == "constant":
                    v = _constant_value(f.atom, comps)
                    if v is None:
                        raise MissingSampleError(f"no numeric rule for {f.atom.name}")
                    if v == 0.0:
                        ok = False
                        break
                    prod = prod * v
                else:
                    arr = self.field_array(f.atom, comps, f.dot)
                    for d in f.deriv:
                        arr = self.central_diff(arr, assign[d])
                    prod = prod * arr
            if ok:
                total += prod
        return coef * total

    def action(self, e):
        return complex(self.evaluate_density(e).sum())

    def numeric_variation(self, e, atom, comps, site, h=1.0):
        """d(sum of density)/d(atom component at site), by exact polynomial
        differentiation (5-point stencil, exact through quartic terms)."""
        arr = self.fields[(atom.name, 0)]
        key = comps + site
        orig = arr[key]
        vals = []
        for k in (-2, -1, 1, 2):
            arr[key] = orig + k * h
            vals.append(self.action(e))
        arr[key] = orig
        fm2, fm1, fp1, fp2 = vals
        return (fm2 - 8 * fm1 + 8 * fp1 - fp2) / (12 * h)

    def evaluate_at_site(self, e, frees_comps, site):
        """Evaluate a (possibly non-scalar) expression at one site,
        with free indices bound to concrete components."""
        total = 0j
        for m in e.terms:
            if m.delta is not None:
                raise IndexUsageError("site evaluation of delta-carrying term")
            total += self._monomial_site(m, dict(frees_comps), site)
        return total

    def _monomial_site(self, m, frees, site):
        dummies = [idx for idx, c in _index_slots(m).items()
                   if c == 2]
        ranges = [range(SPATIAL_DIM) if k == SPATIAL else range(self.dim)
                  for k, _ in dummies]
        coef = m.coef.to_complex()
        for name, power in m.scalars:
            coef *= self.scalar_value(name) ** power
        total = 0j
        for combo in itertools.product(*ranges):
            assign = dict(frees)
            assign.update(zip(dummies, combo))
            prod = 1.0 + 0j
            for f in m.factors:
                comps = tuple(assign[i] for i in f.indices)
                if f.atom.klass == "constant":
                    v = _constant_value(f.atom, comps)
                    if v is None:
                        raise MissingSampleError(f"no numeric rule for {f.atom.name}")
                    prod *= v
                else:
                    arr = self.field_array(f.atom, comps, f.dot)
                    for d in f.deriv:
                        arr = self.central_diff(arr, assign[d])
                    prod *= arr[site]
                if prod == 0:
                    break
            total += prod
        return coef * total
