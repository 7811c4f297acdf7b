"""Variational calculus on local densities.

Two flavours of functional derivative are provided.  The variational
kernel keeps derivatives on the delta factor,

    delta(d_D phi(x)) / delta phi(y) = d^D_x delta3(x-y),

and is what the Poisson bracket machinery consumes.  The public
functional_derivative applies integration by parts under the x-integral,
moving every delta derivative onto the cofactor with alternating sign, so
its result is a plain-delta expression whose coefficient is the
Euler-Lagrange combination.
"""

from __future__ import annotations

from fractions import Fraction

from .atoms import kdelta_for
from .coeff import Coef
from .errors import UnknownAtomError, IndexUsageError
from .expr import (Expression, Factor, Monomial, derivative, freshen_dummies,
                   fresh_name, mul_scalars)


def _projector_monomials(factor, req, base):
    """Symmetrized Kronecker replacement of one factor against request indices.

    Yields (coefficient-fraction, kdelta-factor-tuple) pairs: the average
    over the atom's declared slot symmetry of the signed identity map, e.g.
    (1/2)(kd kd - kd kd) for an antisymmetric pair.
    """
    atom = factor.atom
    perms = atom.slot_permutations()
    weight = Fraction(1, len(perms))
    for perm, sign in perms:
        kds = tuple(Factor(kdelta_for(atom.slots[p]),
                           (factor.indices[perm[k]], req[k]))
                    for k, p in enumerate(range(len(atom.slots))))
        yield weight * sign, kds


def variational_kernel(density, atom, req):
    """delta(density(x)) / delta(atom_req(y)) with derivatives kept on delta3."""
    mons = []
    for m in density.terms:
        if m.delta is not None:
            raise IndexUsageError("functional derivative of a delta-carrying density")
        m = freshen_dummies(m)
        for i, f in enumerate(m.factors):
            if f.atom != atom or f.dot:
                continue
            rest = m.factors[:i] + m.factors[i + 1:]
            for w, kds in _projector_monomials(f, req, m):
                mons.append(Monomial(m.coef * Coef(w), rest + kds,
                                     tuple(f.deriv), m.scalars))
    return Expression.from_monomials(mons)


def functional_derivative(density, atom, req, table=None):
    """Parts-normalized functional derivative: the delta carries no derivatives.

    req is the tuple of component indices of the varied atom; the result has
    exactly those free indices plus a bare delta3 factor.  Works for both
    spacetime-level densities (Euler-Lagrange variations) and split ones.
    """
    if table is not None and atom.name not in table:
        raise UnknownAtomError(f"atom {atom.name!r} not in model")
    mons = []
    for m in density.terms:
        if m.delta is not None:
            raise IndexUsageError("functional derivative of a delta-carrying density")
        m = freshen_dummies(m)
        for i, f in enumerate(m.factors):
            if f.atom != atom or f.dot:
                continue
            rest = m.factors[:i] + m.factors[i + 1:]
            sign = 1 if len(f.deriv) % 2 == 0 else -1
            for w, kds in _projector_monomials(f, req, m):
                e = Expression.from_monomials(
                    [Monomial(m.coef * Coef(w * sign), rest + kds, None, m.scalars)])
                for idx in f.deriv:
                    e = derivative(e, idx)
                for mm in e.terms:
                    mons.append(mm._replace(delta=()))
    return Expression.from_monomials(mons)


def el_residual(density, atom, req, dot=0):
    """Euler-Lagrange combination for one atom: the delta-stripped
    parts-normalized variation.  Vanishes identically iff the density
    depends on the atom only through a total derivative."""
    if dot:
        return velocity_partial(density, atom, req)
    e = functional_derivative(density, atom, req)
    return Expression.from_monomials(tuple(m._replace(delta=None) for m in e.terms))


def is_total_divergence(density, atoms=None):
    """True iff the density is a total spatial divergence.

    Uses the standard criterion: a local density is a divergence exactly
    when its Euler-Lagrange residual vanishes for every dynamical atom.
    Densities containing time derivatives are rejected.
    """
    if any(f.dot for m in density.terms for f in m.factors):
        raise IndexUsageError("divergence test expects a dot-free density")
    seen = {}
    for m in density.terms:
        for f in m.factors:
            if f.atom.klass != "constant":
                seen[f.atom.name] = f.atom
    for atom in seen.values():
        req = tuple((k, fresh_name(k)) for k in atom.slots)
        if not el_residual(density, atom, req).is_zero:
            return False
    return True


def velocity_partial(density, atom, req):
    """Plain partial derivative of the density with respect to a velocity.

    The dotted factor must carry no spatial derivatives; first-order
    Lagrangians produced by the 3+1 split satisfy this.
    """
    mons = []
    for m in density.terms:
        m = freshen_dummies(m)
        for i, f in enumerate(m.factors):
            if f.atom != atom or not f.dot:
                continue
            if f.deriv:
                raise IndexUsageError(
                    f"velocity {atom.name} appears under a spatial derivative")
            rest = m.factors[:i] + m.factors[i + 1:]
            for w, kds in _projector_monomials(f, req, m):
                mons.append(Monomial(m.coef * Coef(w), rest + kds, None, m.scalars))
    return Expression.from_monomials(mons)


def adjoint_cov_derivative(e, idx, connection, structure):
    """Gauge-covariant derivative D_idx on an expression with exactly one
    free internal index: d + f[. J K] A[idx; J] rotation."""
    from .atoms import INTERNAL
    internal = [ix for ix in sorted(e.free_indices()) if ix[0] == INTERNAL]
    out = derivative(e, idx)
    if structure is None:
        return out
    if len(internal) != 1:
        raise IndexUsageError("covariant derivative needs exactly one free internal index")
    target = internal[0]
    dummy = (INTERNAL, fresh_name(INTERNAL))
    j = (INTERNAL, fresh_name(INTERNAL))
    rotated = e.rename_frees({target: dummy})
    fterm = Expression.from_monomials(
        [Monomial(Coef(1), (Factor(structure, (target, j, dummy)),
                            Factor(connection, (idx, j))))])
    return out + fterm * rotated
