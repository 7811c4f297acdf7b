"""Gauge generator from the first-class constraints and the induced
transformations of every phase-space variable.

The generator chains one parameter per primary first-class constraint
through the covariant time derivative and attaches a plain parameter to
each secondary first-class constraint:

    G = integral[ D_0(eps0) . gamma_primary + eps . gamma_secondary ]

Transformations are delta0(z) = {z, G}.  The merged presentation
identifies eps0 with -eps, which renders the connection transformation in
the uniform form A -> A - D(eps).
"""

from __future__ import annotations

from dataclasses import dataclass

from .atoms import AtomSymbol, INTERNAL
from .coeff import Coef
from .expr import (Expression, Factor, Monomial, fresh_name, single,
                   substitute_atom)
from .legendre import slot_free_names
from .poisson import canonical_pairs, poisson_bracket, smear_y


@dataclass
class GaugeGenerator:
    density: Expression
    parameters: list  # (atom, constraint, chained: bool)


def castellani_generator(classification, dm):
    pieces = Expression.zero()
    params = []
    for c in classification.first_class:
        chained = c.stage == 1
        prefix = "eps0" if chained else "eps"
        atom = AtomSymbol(f"{prefix}_{c.name}", tuple(k for k, _ in c.frees),
                          _free_symmetry(c), "gauge")
        dm.table._atoms[atom.name] = atom
        params.append((atom, c, chained))
        if chained:
            term = _cov_time_derivative(atom, c.frees, dm)
        else:
            term = single(atom, c.frees)
        pieces = pieces + _contract_over(term, c.expression, c.frees)
    return GaugeGenerator(pieces, params)


def _free_symmetry(c):
    kinds = tuple(k for k, _ in c.frees)
    if kinds.count("sp") == 2:
        from .legendre import _is_antisymmetric_in
        pos = tuple(i for i, k in enumerate(kinds) if k == "sp")
        if _is_antisymmetric_in(c, pos):
            return (("anti", pos),)
    return ()


def _cov_time_derivative(atom, frees, dm):
    """D_0 eps0 = dt(eps0) + f A_0 eps0 on the gauge parameter."""
    dotted = single(atom, frees, dot=1)
    if not dm.structure:
        return dotted
    internal = [f for f in frees if f[0] == INTERNAL]
    if len(internal) != 1:
        return dotted
    target = internal[0]
    f_atom = dm.atom(dm.structure)
    a0 = dm.atom(_temporal_connection(dm))
    dummy = (INTERNAL, fresh_name(INTERNAL))
    j = (INTERNAL, fresh_name(INTERNAL))
    rotated = single(atom, tuple(dummy if f == target else f for f in frees))
    rot = Expression.from_monomials(
        [Monomial(Coef(1), (Factor(f_atom, (target, j, dummy)),
                            Factor(a0, (j,))))])
    return dotted + rot * rotated


def _temporal_connection(dm):
    return dm.connection + "0"


def _contract_over(a, b, frees):
    shared = tuple((k, fresh_name(k)) for k, _ in frees)
    mapping = dict(zip(frees, shared))
    return a.rename_frees(mapping) * b.rename_frees(mapping)


def gauge_transformations(generator, dm, defs):
    """delta0(atom) = {atom, integral G} for every canonical variable."""
    pairs = canonical_pairs(dm)
    out = {}
    for d in defs:
        for atom in (d.config, d.momentum):
            frees = slot_free_names(atom)
            delta = smear_y(poisson_bracket(single(atom, frees),
                                            generator.density, pairs))
            out[atom.name] = (frees, delta)
    return out


def merged_transformations(transformations, generator, dm):
    """Identify the chained parameters with -eps and re-express.

    Returns atom name -> (frees, Expression) with a single parameter family
    eps per secondary first-class constraint.
    """
    subs = []
    for atom, c, chained in generator.parameters:
        if not chained:
            continue
        partner = next((a for a, c2, ch in generator.parameters
                        if not ch and _kinds(a) == _kinds(atom)), None)
        if partner is None:
            continue
        frees = slot_free_names(atom)
        subs.append((atom, single(partner, frees).scaled(-1), frees))
    merged = {}
    for name, (frees, delta) in transformations.items():
        e = delta
        for atom, rep, sf in subs:
            e = substitute_atom(e, atom, rep, sf)
            e = substitute_atom(e, atom, _dt_expr(rep), sf, dot=1)
        merged[name] = (frees, e)
    return merged


def _kinds(atom):
    return tuple(atom.slots)


def _dt_expr(rep):
    mons = []
    for m in rep.terms:
        if len(m.factors) != 1:
            raise ValueError("parameter substitution must be a single atom")
        f = m.factors[0]
        mons.append(m._replace(factors=(f._replace(dot=1),)))
    return Expression.from_monomials(mons)
