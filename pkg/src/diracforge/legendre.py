"""Momenta, Hessian rank, primary constraints, and Hamiltonians.

Momenta are defined against the full phase space: one per configuration
component atom, including those whose velocities never occur.  Component
atoms standing for a (0 i) pair carry conjugate weight 1/2; their momentum
definition, fundamental bracket, and kinetic multiplicity all use the same
weight so the Legendre identity closes exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import product

import numpy as np

from .atoms import AtomSymbol, INTERNAL, SPATIAL
from .coeff import Coef
from .errors import RankUnstableError, ValidationError, VelocityResidueError
from .expr import Expression, Monomial, Factor, single, substitute_atom
from .calculus import velocity_partial
from .numeric import FieldSample, numeric_evaluate
from .split import component_count


def slot_free_names(atom, offset=0):
    """Deterministic free-index names matching an atom's slots."""
    pools = {SPATIAL: ("i", "j", "k", "l", "m", "n"),
             INTERNAL: ("I", "J", "K", "L", "M", "N")}
    used = {SPATIAL: 0, INTERNAL: 0}
    out = []
    for kind in atom.slots:
        name = pools[kind][used[kind] + offset]
        used[kind] += 1
        out.append((kind, name))
    return tuple(out)


@dataclass
class MomentumDefinition:
    momentum: AtomSymbol
    config: AtomSymbol
    frees: tuple
    expression: Expression  # weight * dL/d(velocity), canonical
    velocity_solution: Expression = None  # velocity in terms of momentum, if invertible

    @property
    def is_primary_source(self):
        return self.velocity_solution is None


def momentum_atom(config):
    return AtomSymbol("P_" + config.name, config.slots, config.symmetry,
                      "momentum", config.weight, conjugate=config.name)


def compute_momenta(dm):
    """One momentum definition per configuration atom, in declaration order."""
    defs = []
    for name in dm.config_atoms:
        q = dm.atom(name)
        p = momentum_atom(q)
        dm.table._atoms[p.name] = p
        frees = slot_free_names(q)
        raw = velocity_partial(dm.density, q, frees).scaled(Fraction(q.weight))
        defs.append(MomentumDefinition(p, q, frees, raw))
    for d in defs:
        d.velocity_solution = _solve_velocity(d, dm)
    return defs


def _solve_velocity(mdef, dm):
    """Invert P = c*qdot + rest when the definition is velocity-affine."""
    own, rest = [], []
    for m in mdef.expression.terms:
        dotted = [f for f in m.factors if f.dot]
        if not dotted:
            rest.append(m)
            continue
        if (len(dotted) == 1 and len(m.factors) == 1
                and dotted[0].atom == mdef.config and not dotted[0].deriv):
            own.append(m)
        else:
            raise ValidationError(
                f"momentum of {mdef.config.name} mixes velocities; "
                "field-dependent degenerate Hessians are not supported")
    if not own:
        return None
    if len(own) != 1:
        raise ValidationError(f"momentum of {mdef.config.name} is nonlinear in its velocity")
    lead = own[0]
    # expected: coefficient * qdot with identity index wiring onto the frees
    if lead.factors[0].indices != mdef.frees:
        raise ValidationError(f"momentum of {mdef.config.name} has twisted velocity wiring")
    c = lead.coef
    scal = lead.scalars
    pi = single(mdef.momentum, mdef.frees)
    rest_expr = Expression.from_monomials(rest)
    sol = (pi - rest_expr).scaled(Coef(1) / c)
    for s, pw in scal:
        sol = sol.scalar_pow(s, -pw)
    return sol


def hessian_rank(dm, seeds=range(5), internal_dim=3):
    """Velocity Hessian and its numeric rank on generic samples.

    Returns (matrix dict, total rank, rank per generator).
    """
    dim = dm.internal_dim(internal_dim)
    atoms = [dm.atom(n) for n in dm.config_atoms]
    entries = {}
    for qa in atoms:
        fa = slot_free_names(qa)
        da = velocity_partial(dm.density, qa, fa)
        for qb in atoms:
            fb = slot_free_names(qb, offset=0)
            fb = tuple((k, n + "1") for k, n in slot_free_names(qb))
            entries[(qa.name, qb.name)] = (fa, fb, velocity_partial(da, qb, fb))

    basis = []
    for qa in atoms:
        for comps in _independent_components(qa, dim):
            basis.append((qa.name, comps))

    ranks = []
    for seed in seeds:
        sample = FieldSample(seed, dim)
        mat = np.zeros((len(basis), len(basis)), dtype=complex)
        for r, (na, ca) in enumerate(basis):
            for c, (nb, cb) in enumerate(basis):
                fa, fb, e = entries[(na, nb)]
                if e.is_zero:
                    continue
                frees = dict(zip(fa, ca))
                frees.update(zip(fb, cb))
                mat[r, c] = numeric_evaluate(e, sample, frees)
        scale = max(1.0, np.abs(mat).max())
        ranks.append(int(np.linalg.matrix_rank(mat, tol=1e-8 * scale)))
    if len(set(ranks)) != 1:
        raise RankUnstableError(f"hessian ranks disagree across samples: {ranks}")
    rank = ranks[0]
    if dim > 1 and rank % dim:
        raise RankUnstableError(f"hessian rank {rank} not divisible by dim {dim}")
    return entries, rank, rank // dim if dim > 1 else rank


def _independent_components(atom, dim):
    """Concrete component tuples spanning the atom's independent components."""
    ranges = [range(3) if k == SPATIAL else range(dim) for k in atom.slots]
    seen = set()
    for combo in product(*ranges):
        canon = None
        dead = False
        for perm, sign in atom.slot_permutations():
            arranged = tuple(combo[perm[i]] for i in range(len(combo)))
            if canon is None or arranged < canon[0]:
                canon = (arranged, sign)
            elif arranged == canon[0] and sign != canon[1]:
                dead = True
        if dead or (canon and canon[0] in seen):
            continue
        seen.add(canon[0])
        yield combo


@dataclass
class Constraint:
    name: str
    expression: Expression
    frees: tuple
    stage: int = 1
    klass: str = "unclassified"  # unclassified | first | second
    independent: bool = True
    source: str = ""

    def shape_atom(self, name=None):
        """A stand-in atom with this constraint's free signature and its
        detected free-index antisymmetry."""
        kinds = tuple(k for k, _ in self.frees)
        sym = ()
        pos = tuple(i for i, k in enumerate(kinds) if k == SPATIAL)
        if len(pos) == 2 and _is_antisymmetric_in(self, pos):
            sym = (("anti", pos),)
        return AtomSymbol(name or ("_c_" + self.name), kinds, sym)

    def components_per_generator(self):
        return component_count(self.shape_atom())


def primary_constraints(defs):
    out = []
    for d in defs:
        if not d.is_primary_source:
            continue
        expr = single(d.momentum, d.frees) - d.expression
        out.append(Constraint("phi_" + d.config.name, expr, d.frees,
                              stage=1, source=d.config.name))
    return out


def canonical_hamiltonian(dm, defs):
    """H_c = sum qdot.P - L with every velocity eliminated."""
    h = -dm.density
    for d in defs:
        mult = Fraction(1) / d.config.weight
        kinetic = (single(d.config, d.frees, dot=1) * single(d.momentum, d.frees)) \
            .scaled(mult)
        h = h + kinetic
    for d in defs:
        if d.velocity_solution is not None:
            h = substitute_atom(h, d.config, d.velocity_solution, d.frees, dot=1)
    # velocities multiplying primary constraints drop weakly
    for d in defs:
        if d.velocity_solution is not None:
            continue
        coeff = velocity_partial(h, d.config, d.frees)
        if coeff.is_zero:
            continue
        h = h - (single(d.config, d.frees, dot=1) * coeff)
    for m in h.terms:
        if any(f.dot for f in m.factors):
            raise VelocityResidueError(f"velocity survived Legendre elimination: {m}")
    # momentum-preferred representative: where a velocity-free momentum
    # definition pins a field component linearly (P = c*field), rewrite the
    # field in terms of the momentum so H_c matches the standard display
    for d in defs:
        if d.velocity_solution is not None:
            continue
        sub = _field_solution(d)
        if sub is not None:
            field, sol = sub
            h = substitute_atom(h, field, sol, d.frees)
    return h


def _field_solution(mdef):
    """Solve P = c*field for the field when the wiring is the identity."""
    e = mdef.expression
    if len(e.terms) != 1:
        return None
    m = e.terms[0]
    if len(m.factors) != 1 or m.scalars:
        return None
    f = m.factors[0]
    if f.atom.klass != "field" or f.deriv or f.dot or f.indices != mdef.frees:
        return None
    sol = single(mdef.momentum, mdef.frees).scaled(Coef(1) / m.coef)
    return f.atom, sol


@dataclass
class PrimaryHamiltonian:
    canonical: Expression
    density: Expression  # canonical + multiplier terms
    multipliers: list  # (multiplier atom, constraint)


def multiplier_atom(constraint, prefix="lam"):
    kinds = tuple(k for k, _ in constraint.frees)
    sym = ()
    fake = [n for _, n in constraint.frees]
    # inherit antisymmetry of the constraint's free spatial pair, if any
    if kinds.count(SPATIAL) == 2:
        pos = tuple(i for i, k in enumerate(kinds) if k == SPATIAL)
        if _is_antisymmetric_in(constraint, pos):
            sym = (("anti", pos),)
    return AtomSymbol(f"{prefix}_{constraint.name}", kinds, sym, "multiplier")


def _is_antisymmetric_in(constraint, pos):
    frees = constraint.frees
    swapped = dict(zip((frees[pos[0]], frees[pos[1]]),
                       (frees[pos[1]], frees[pos[0]])))
    e = constraint.expression.rename_frees(swapped)
    return e == -constraint.expression


def primary_hamiltonian(h_c, primaries, dm):
    density = h_c
    mults = []
    for c in primaries:
        lam = multiplier_atom(c)
        dm.table._atoms[lam.name] = lam
        density = density + single(lam, c.frees) * c.expression
        mults.append((lam, c))
    return PrimaryHamiltonian(h_c, density, mults)
