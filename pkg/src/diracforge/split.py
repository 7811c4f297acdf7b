"""3+1 decomposition of a spacetime Lagrangian.

Every spacetime index (slot or derivative) is expanded over {0, spatial}.
Antisymmetric spacetime pairs generate component atoms: a (0 i) component
with conjugate weight 1/2 (it stands for the two parent components related
by antisymmetry) and a purely spatial component keeping the antisymmetry.
epsilon4 expands onto the spatial Levi-Civita via eps^{0ijk} = eta^{ijk}.
Time derivatives of component atoms become dotted velocity factors.

Contraction weights follow the model's signature option.  With
``lorentzian`` (the default) each contracted spacetime pair contributes a
factor -1 to its 0-component term, except pairs touching epsilon4, whose
pairing needs no metric.  ``euclidean`` contracts with identity weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product

from .atoms import AtomSymbol, SPACETIME, SPATIAL, INTERNAL
from .coeff import Coef
from .errors import SecondOrderTimeError, ValidationError
from .expr import Expression, Factor, Monomial, fresh_name, freshen_dummies
from .dsl import ModelSpec


@dataclass
class ComponentInfo:
    parent: str
    pattern: tuple  # e.g. ("0", "i") or ("i", "j") per parent slot
    weight: Fraction


@dataclass
class DecomposedModel:
    spec: ModelSpec
    table: object
    density: Expression
    config_atoms: list  # component atom names, declaration order
    velocities: list  # config atoms whose dot actually occurs in the density
    components: dict  # name -> ComponentInfo
    connection: str = None  # spatial gauge connection atom, if any
    structure: str = None  # structure-constant atom name, if any

    def atom(self, name):
        return self.table.lookup(name)

    def phase_space_dim_per_generator(self):
        return 2 * sum(component_count(self.atom(n)) for n in self.config_atoms)

    def internal_dim(self, instantiated=3):
        return instantiated if self.spec.has_internal() else 1


def component_count(atom, spatial_dim=3):
    """Independent spatial components per internal-index value."""
    spatial_slots = [i for i, k in enumerate(atom.slots) if k == SPATIAL]
    if not spatial_slots:
        return 1
    seen = set()
    count = 0
    for combo in product(range(spatial_dim), repeat=len(spatial_slots)):
        assign = dict(zip(spatial_slots, combo))
        best = None
        dead = False
        for perm, sign in atom.slot_permutations():
            arranged = tuple(assign[perm[i]] for i in spatial_slots)
            if best is None or arranged < best[0]:
                best = (arranged, sign)
            elif arranged == best[0] and sign != best[1]:
                dead = True
        if dead or best[0] in seen:
            continue
        seen.add(best[0])
        count += 1
    return count


def _split_field_atom(atom):
    """Component atoms for one declared field; returns list of
    (zero_positions, component-atom, sign-positions-map, weight)."""
    st_slots = [i for i, k in enumerate(atom.slots) if k == SPACETIME]
    if not st_slots:
        return [((), atom, Fraction(1))]
    anti_pairs = [g for tag, g in atom.symmetry if tag == "anti"]
    if len(st_slots) == 1 and not anti_pairs:
        pos = st_slots[0]
        zero_slots = tuple(k for i, k in enumerate(atom.slots) if i != pos)
        sp_slots = tuple(SPATIAL if k == SPACETIME else k for k in atom.slots)
        a0 = AtomSymbol(atom.name + "0", zero_slots, (), atom.klass)
        asp = AtomSymbol(atom.name, sp_slots, atom.symmetry, atom.klass)
        return [((pos,), a0, Fraction(1)), ((), asp, Fraction(1))]
    if (len(st_slots) == 2 and len(anti_pairs) == 1
            and tuple(sorted(anti_pairs[0])) == tuple(sorted(st_slots))):
        p0, p1 = sorted(st_slots)
        rest = tuple(k for i, k in enumerate(atom.slots) if i not in (p0, p1))
        a0 = AtomSymbol(atom.name + "0", (SPATIAL,) + rest, (), atom.klass,
                        weight=Fraction(1, 2))
        asp = AtomSymbol(atom.name, (SPATIAL, SPATIAL) + rest,
                         (("anti", (0, 1)),), atom.klass)
        return [((p0,), a0, Fraction(1, 2)), ((), asp, Fraction(1))]
    raise ValidationError(
        f"unsupported spacetime signature on {atom.name}: "
        "only plain vectors and antisymmetric pairs are handled")


def split_3plus1(spec):
    """Decompose a validated ModelSpec into spatial/temporal form."""
    table = spec.table.copy()
    components = {}
    config_atoms = []
    split_map = {}
    connection = None
    structure = None

    for name in spec.constants:
        atom = spec.table.lookup(name)
        if "jacobi" in atom.tags:
            structure = name

    for name in spec.fields:
        atom = spec.table.lookup(name)
        pieces = _split_field_atom(atom)
        split_map[name] = (atom, pieces)
        for zero_pos, comp, weight in pieces:
            if comp.name != atom.name or comp != atom:
                if comp.name in table and comp.name != atom.name:
                    raise ValidationError(f"component name collision: {comp.name}")
            table._atoms[comp.name] = comp
            pattern = _pattern_for(atom, zero_pos)
            components[comp.name] = ComponentInfo(atom.name, pattern, weight)
            config_atoms.append(comp.name)
            if (comp.slots == (SPATIAL, INTERNAL) or comp.slots == (SPATIAL,)) \
                    and atom.slots[:1] == (SPACETIME,) and len(atom.slots) <= 2 \
                    and connection is None and len(pieces) == 2:
                connection = comp.name

    mons = []
    for m in spec.lagrangian.terms:
        mons.extend(_expand_monomial(m, spec, split_map))
    density = Expression.from_monomials(mons)

    velocities = sorted({f.atom.name for m in density.terms
                         for f in m.factors if f.dot})
    return DecomposedModel(spec, table, density, config_atoms, velocities,
                           components, connection, structure)


def _pattern_for(atom, zero_pos):
    pat = []
    for i, kind in enumerate(atom.slots):
        if i in zero_pos:
            pat.append("0")
        elif kind == SPACETIME:
            pat.append("s")
        else:
            pat.append(kind)
    return tuple(pat)


def _st_locations(m):
    """All spacetime-index locations in a monomial: (index, kind-of-site)."""
    locs = {}
    for fi, f in enumerate(m.factors):
        for si, idx in enumerate(f.indices):
            if idx[0] == SPACETIME:
                locs.setdefault(idx, []).append(("slot", fi, si))
        for di, idx in enumerate(f.deriv):
            if idx[0] == SPACETIME:
                locs.setdefault(idx, []).append(("deriv", fi, di))
    return locs


def _expand_monomial(m, spec, split_map):
    m = freshen_dummies(m)
    locs = _st_locations(m)
    for idx, sites in locs.items():
        if len(sites) != 2:
            raise ValidationError(f"spacetime index {idx[1]!r} is not contracted")
    lorentzian = spec.signature == "lorentzian"
    pairs = list(locs.items())
    out = []
    for choice in product((0, 1), repeat=len(pairs)):
        # choice 0 -> time component, 1 -> spatial
        weight = Fraction(1)
        assign = {}
        for (idx, sites), c in zip(pairs, choice):
            if c == 0:
                assign[idx] = None  # time
                on_eps = any(m.factors[fi].atom.name == "epsilon4"
                             for kind, fi, _ in sites if kind == "slot")
                if lorentzian and not on_eps:
                    weight = -weight
            else:
                assign[idx] = (SPATIAL, fresh_name(SPATIAL))
        built = _build_term(m, assign, spec, split_map, Coef(weight))
        if built is not None:
            out.append(built)
    return out


def _build_term(m, assign, spec, split_map, weight):
    factors = []
    coef = m.coef * weight
    for f in m.factors:
        zero_slots = tuple(si for si, idx in enumerate(f.indices)
                           if idx[0] == SPACETIME and assign[idx] is None)
        new_indices = tuple(assign.get(idx, idx) if idx[0] == SPACETIME else idx
                            for idx in f.indices)
        dot = 0
        new_deriv = []
        for idx in f.deriv:
            if idx[0] == SPACETIME:
                got = assign[idx]
                if got is None:
                    dot += 1
                else:
                    new_deriv.append(got)
            else:
                new_deriv.append(idx)
        if dot > 1:
            raise SecondOrderTimeError(f"d_0 d_0 on {f.atom.name}")

        if f.atom.name == "epsilon4":
            if len(zero_slots) != 1:
                return None
            pos = zero_slots[0]
            sign = 1 if pos % 2 == 0 else -1
            rest = tuple(ix for si, ix in enumerate(new_indices) if si != pos)
            eta = spec.table.lookup("eta")
            factors.append(Factor(eta, rest))
            coef = coef * sign
            if dot:
                raise SecondOrderTimeError("time derivative of epsilon4")
            continue

        if f.atom.name in split_map:
            atom, pieces = split_map[f.atom.name]
            chosen = None
            for zp, comp, w in pieces:
                if tuple(sorted(zero_slots)) == tuple(sorted(zp)):
                    chosen = (zp, comp)
                    break
            if chosen is None:
                # a zero landed on a slot pattern with no component: the
                # antisymmetric (0,0) case, or the 0 on the second pair slot
                anti = [g for tag, g in f.atom.symmetry if tag == "anti"]
                if anti and len(zero_slots) == 1 and zero_slots[0] == max(anti[0]):
                    zp = (min(anti[0]),)
                    comp = next(c for z, c, _ in pieces if z == zp)
                    # reorder: the spatial partner moves into the comp slot
                    coef = coef * -1
                    sp_idx = new_indices[min(anti[0])]
                    others = tuple(ix for si, ix in enumerate(new_indices)
                                   if si not in anti[0])
                    factors.append(Factor(comp, (sp_idx,) + others, tuple(new_deriv), dot))
                    continue
                return None
            zp, comp = chosen
            kept = tuple(ix for si, ix in enumerate(new_indices) if si not in zp)
            factors.append(Factor(comp, kept, tuple(new_deriv), dot))
            continue

        if dot:
            raise SecondOrderTimeError(f"time derivative of constant {f.atom.name}")
        factors.append(Factor(f.atom, new_indices, tuple(new_deriv), dot))
    return Monomial(coef, tuple(factors), m.delta, m.scalars)
