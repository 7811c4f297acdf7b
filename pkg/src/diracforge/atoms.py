"""Index kinds, atom symbols, and the per-model symbol table.

An atom is a named tensor-valued object (field, momentum, multiplier,
constant tensor, gauge parameter) with an ordered slot signature of index
kinds and an optional permutation symmetry on slot groups.  Atoms are
immutable; a Factor in a monomial references the AtomSymbol object itself,
so metadata travels with expressions and no global registry is needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from itertools import permutations

from .errors import UnknownAtomError, ValidationError

# index kinds
SPACETIME = "st"
SPATIAL = "sp"
INTERNAL = "in"

# name pools used when rendering canonical dummies
SPACETIME_NAMES = ("mu", "nu", "al", "be", "rho", "si", "ta", "ka")
SPATIAL_NAMES = ("i", "j", "k", "l", "m", "n")
INTERNAL_NAMES = ("I", "J", "K", "L", "M", "N", "P", "Q", "R", "S")


def kind_of_index_name(name):
    """Infer the kind of an index from its name, per the model-file convention."""
    base = name.rstrip("0123456789")
    if base in SPACETIME_NAMES or base in ("alpha", "beta", "sigma", "tau"):
        return SPACETIME
    if base in SPATIAL_NAMES:
        return SPATIAL
    if len(base) == 1 and base.isupper():
        return INTERNAL
    return None


@dataclass(frozen=True)
class AtomSymbol:
    """A declared symbol with slot kinds, symmetry, and bookkeeping class.

    symmetry is a tuple of (tag, slot-positions) groups with tag 'anti' or
    'sym'; canonicalization ranges over the full permutation group of each
    group, tracking signs for 'anti'.  weight is the conjugate-pairing
    weight: 1/2 for atoms that stand for a (0i) component pair of a
    spacetime-antisymmetric parent, 1 otherwise.
    """

    name: str
    slots: tuple = ()
    symmetry: tuple = ()
    klass: str = "field"  # field|momentum|multiplier|constant|gauge
    weight: Fraction = Fraction(1)
    conjugate: str = None  # momentum name for fields and vice versa
    tags: frozenset = frozenset()

    def __post_init__(self):
        for tag, group in self.symmetry:
            if tag not in ("anti", "sym"):
                raise ValidationError(f"bad symmetry tag {tag!r} on {self.name}")
            for pos in group:
                if not 0 <= pos < len(self.slots):
                    raise ValidationError(f"symmetry slot {pos} out of range on {self.name}")
            kinds = {self.slots[p] for p in group}
            if len(kinds) != 1:
                raise ValidationError(f"symmetry group on {self.name} mixes index kinds")

    def slot_permutations(self):
        """All (permutation-of-all-slots, sign) pairs generated by the symmetry groups."""
        return _slot_perms(len(self.slots), self.symmetry)

    def __repr__(self):
        return f"AtomSymbol({self.name})"


def _slot_perms_key(nslots, symmetry):
    return (nslots, symmetry)


_PERM_CACHE = {}


def _slot_perms(nslots, symmetry):
    key = _slot_perms_key(nslots, symmetry)
    cached = _PERM_CACHE.get(key)
    if cached is not None:
        return cached
    perms = [(tuple(range(nslots)), 1)]
    for tag, group in symmetry:
        new = []
        for base, sign in perms:
            for gp in permutations(group):
                psign = sign * (_perm_sign(group, gp) if tag == "anti" else 1)
                arranged = list(base)
                for src, dst in zip(group, gp):
                    arranged[src] = base[dst]
                new.append((tuple(arranged), psign))
        perms = new
    _PERM_CACHE[key] = tuple(perms)
    return _PERM_CACHE[key]


def _perm_sign(group, perm):
    order = {v: i for i, v in enumerate(group)}
    seq = [order[p] for p in perm]
    sign = 1
    for a in range(len(seq)):
        for b in range(a + 1, len(seq)):
            if seq[a] > seq[b]:
                sign = -sign
    return sign


# builtin constant tensors, always available
KDELTA_SP = AtomSymbol("kd", (SPATIAL, SPATIAL), (("sym", (0, 1)),), "constant")
KDELTA_IN = AtomSymbol("kd", (INTERNAL, INTERNAL), (("sym", (0, 1)),), "constant")
ETA = AtomSymbol("eta", (SPATIAL, SPATIAL, SPATIAL), (("anti", (0, 1, 2)),), "constant")


def kdelta_for(kind):
    if kind == SPATIAL:
        return KDELTA_SP
    if kind == INTERNAL:
        return KDELTA_IN
    raise ValidationError(f"no Kronecker delta for kind {kind!r}")


class SymbolTable:
    """Name -> AtomSymbol mapping for one model.

    The two Kronecker deltas share the display name ``kd`` and are
    disambiguated by the kinds of the indices they are applied to.
    """

    def __init__(self):
        self._atoms = {}
        self.register(ETA)

    def register(self, atom):
        existing = self._atoms.get(atom.name)
        if existing is not None and existing != atom:
            raise ValidationError(f"atom {atom.name!r} already declared with a different signature")
        self._atoms[atom.name] = atom
        return atom

    def lookup(self, name, kinds=None):
        if name == "kd":
            if not kinds:
                raise UnknownAtomError("kd needs indices to determine its kind")
            return kdelta_for(kinds[0])
        atom = self._atoms.get(name)
        if atom is None:
            raise UnknownAtomError(f"unknown atom {name!r}")
        return atom

    def __contains__(self, name):
        return name == "kd" or name in self._atoms

    def atoms(self, klass=None):
        out = [a for a in self._atoms.values()]
        if klass is not None:
            out = [a for a in out if a.klass == klass]
        return out

    def copy(self):
        new = SymbolTable.__new__(SymbolTable)
        new._atoms = dict(self._atoms)
        return new
