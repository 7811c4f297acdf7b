"""The constraint-stabilization loop and everything downstream of it.

Weak reduction is syntactic-factor division: a monomial containing an
instance of a constraint's leading term (under an index substitution,
including f-contracted images) is eliminated by subtracting the matching
multiple of the whole constraint.  The classification step dresses each
constraint with an ansatz of (polynomial coefficient) x (derivative order
<= 1) images of the other constraints and solves the linear system that
makes all brackets weakly vanish; seeds with no solution stay second
class, reproducing the usual presentation where the second-class basis is
the original constraints in declaration order.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field as dfield
from fractions import Fraction

import numpy as np

from .atoms import AtomSymbol, INTERNAL, SPATIAL
from .coeff import Coef
from .errors import (ClassificationIncompleteError, DofCountError,
                     InconsistentTheoryError, IndexUsageError,
                     NonLinearMultiplierError, UnsupportedDeltaOrderError)
from .expr import (Expression, Factor, Monomial, fresh_name, freshen_dummies,
                   monomial_key, mul_scalars, single, substitute_atom,
                   derivative, _index_counts)
from .jacobi import reduce_jacobi
from .legendre import (Constraint, multiplier_atom, slot_free_names,
                       _independent_components)
from .numeric import FieldSample, numeric_evaluate
from .poisson import canonical_pairs, poisson_bracket, smear_y

# ---------------------------------------------------------------------------
# weak reduction


def _match_factor(pf, mf, sigma):
    """Try unifying one pivot factor against one target factor; yields
    extended substitutions."""
    if pf.atom != mf.atom or pf.dot != mf.dot or len(pf.deriv) != len(mf.deriv):
        return
    perms = [p for p, _ in pf.atom.slot_permutations()]
    for perm in perms:
        s1 = _unify(tuple(pf.indices[p] for p in perm), mf.indices, sigma)
        if s1 is None:
            continue
        for dperm in set(itertools.permutations(range(len(pf.deriv)))):
            s2 = _unify(tuple(pf.deriv[d] for d in dperm), mf.deriv, s1)
            if s2 is not None:
                yield s2


def _unify(src, dst, sigma):
    s = dict(sigma)
    for a, b in zip(src, dst):
        if a[0] != b[0]:
            return None
        got = s.get(a)
        if got is None:
            s[a] = b
        elif got != b:
            return None
    return s


def _match_pivot(pivot, m):
    """All substitutions embedding the pivot's factors into monomial m."""
    results = []

    def recurse(pi, used, sigma):
        if pi == len(pivot.factors):
            results.append(sigma)
            return
        pf = pivot.factors[pi]
        for j, mf in enumerate(m.factors):
            if j in used:
                continue
            for s in _match_factor(pf, mf, sigma):
                recurse(pi + 1, used | {j}, s)
                if results:
                    return  # first match is enough

    recurse(0, frozenset(), {})
    return results[0] if results else None


def _instantiate(expr, sigma):
    """Apply an index substitution to a constraint expression, freshening
    untouched dummies."""
    mons = []
    for m in expr.terms:
        counts = _index_counts(m)
        ren = dict(sigma)
        for idx, c in counts.items():
            if idx not in ren and c == 2:
                ren[idx] = (idx[0], fresh_name(idx[0]))

        def rn(i):
            return ren.get(i, i)

        factors = tuple(f._replace(indices=tuple(rn(i) for i in f.indices),
                                   deriv=tuple(rn(i) for i in f.deriv))
                        for f in m.factors)
        mons.append(m._replace(factors=factors))
    return Expression.from_monomials(mons)


_weak_cache = {}


def weak_reduce(e, constraints, max_passes=200, jacobi=True):
    """Rewrite an expression modulo the ideal generated by the constraints."""
    ckey = (e, tuple(c.expression for c in constraints), jacobi)
    hit = _weak_cache.get(ckey)
    if hit is not None:
        return hit
    result = _weak_reduce_impl(e, constraints, max_passes, jacobi)
    _weak_cache[ckey] = result
    return result


def _weak_reduce_impl(e, constraints, max_passes, jacobi):
    if jacobi:
        e = reduce_jacobi(e)
    pivots = []
    for c in constraints:
        terms = c.expression.terms
        if terms:
            pivots.append((_pivot_term(terms), c.expression))
    seen = set()
    for _ in range(max_passes):
        if e.is_zero or e.terms in seen:
            return e
        seen.add(e.terms)
        new = None
        for m in reversed(e.terms):
            for pivot, cexpr in pivots:
                if len(pivot.factors) > len(m.factors):
                    continue
                sigma = _match_pivot(pivot, m)
                if sigma is None:
                    continue
                try:
                    inst = _instantiate(cexpr, sigma)
                except IndexUsageError:
                    continue
                cof = _cofactor(m, pivot, sigma)
                if cof is None:
                    continue
                try:
                    prod = inst * cof
                except IndexUsageError:
                    continue
                hit = next((t for t in prod.terms
                            if monomial_key(t) == monomial_key(m)), None)
                if hit is None:
                    continue
                cand = e - prod.scaled(m.coef / hit.coef)
                if jacobi:
                    cand = reduce_jacobi(cand)
                new = cand
                break
            if new is not None:
                break
        if new is None:
            return e
        e = new
    return e


def _pivot_term(terms):
    """Reduction pivot: the largest term carrying a field factor, so weak
    rewriting eliminates fields in favour of momenta (the standard
    presentation); falls back to the largest term."""
    field_terms = [t for t in terms
                   if any(f.atom.klass == "field" for f in t.factors)]
    return field_terms[-1] if field_terms else terms[-1]


def _cofactor(m, pivot, sigma):
    """Remove one embedded pivot image from m; returns an Expression."""
    used = set()
    factors = list(m.factors)
    for pf in pivot.factors:
        img_idx = tuple(sigma[i] for i in pf.indices)
        found = None
        for j, mf in enumerate(factors):
            if j in used or mf.atom != pf.atom or mf.dot != pf.dot:
                continue
            if len(mf.deriv) != len(pf.deriv):
                continue
            if _same_multiset(img_idx, mf.indices, pf.atom) and \
                    sorted(sigma[i] for i in pf.deriv) == sorted(mf.deriv):
                found = j
                break
        if found is None:
            return None
        used.add(found)
    rest = tuple(f for j, f in enumerate(factors) if j not in used)
    scal = mul_scalars(m.scalars, tuple((n, -p) for n, p in pivot.scalars))
    mono = Monomial(Coef(1), rest, m.delta, scal)
    return Expression((mono,)) if True else None


def _same_multiset(a, b, atom):
    if sorted(a) != sorted(b):
        return False
    return True


def weak_zero(e, constraints):
    return weak_reduce(e, constraints).is_zero


# ---------------------------------------------------------------------------
# stabilization


@dataclass
class TraceEntry:
    constraint: str
    stage: int
    outcome: str  # consistent | fixes-multiplier | new-constraint | inconsistent
    detail: str = ""


@dataclass
class StabilizationResult:
    constraints: list
    multiplier_solutions: dict  # multiplier name -> (slot frees, Expression) or "free"
    trace: list
    h_primary: object


def stabilize(primaries, h_p, dm, max_stages=10):
    pairs = canonical_pairs(dm)
    constraints = list(primaries)
    solutions = {}
    trace = []
    checked = set()

    for stage in range(2, max_stages + 2):
        pending = [c for c in constraints if c.name not in checked]
        if not pending:
            break
        new_found = False
        for c in pending:
            edot = smear_y(poisson_bracket(c.expression, h_p.density, pairs))
            edot = _substitute_solutions(edot, solutions, dm)
            edot = weak_reduce(edot, constraints)
            if edot.is_zero:
                trace.append(TraceEntry(c.name, stage, "consistent"))
                checked.add(c.name)
                continue
            mults = _multiplier_atoms(edot)
            if mults:
                lam, slot_frees, sol = _solve_multiplier(edot, mults, c)
                solutions[lam.name] = (lam, slot_frees, sol)
                from .dsl import dump_expression
                trace.append(TraceEntry(c.name, stage, "fixes-multiplier",
                                        f"{lam.name} = {dump_expression(sol)}"))
                checked.add(c.name)
                continue
            if not any(m.factors for m in edot.terms):
                raise InconsistentTheoryError(
                    f"consistency of {c.name} forces a nonzero constant")
            newc = Constraint(_secondary_name(c), edot.monic(), _frees_of(edot),
                              stage=stage, source=c.name)
            constraints.append(newc)
            trace.append(TraceEntry(c.name, stage, "new-constraint", newc.name))
            checked.add(c.name)
            new_found = True
        if not new_found and not [c for c in constraints if c.name not in checked]:
            break

    # final verification: every consistency condition weakly vanishes
    for c in constraints:
        edot = smear_y(poisson_bracket(c.expression, h_p.density, pairs))
        edot = _substitute_solutions(edot, solutions, dm)
        edot = weak_reduce(edot, constraints)
        if not edot.is_zero and not _multiplier_atoms(edot):
            raise InconsistentTheoryError(
                f"stabilization left a nonvanishing condition for {c.name}")
    for lam, cref in h_p.multipliers:
        if lam.name not in solutions:
            solutions[lam.name] = (lam, None, "free")
    return StabilizationResult(constraints, solutions, trace, h_p)


def _frees_of(e):
    frees = sorted(e.free_indices())
    return tuple(frees)


def _secondary_name(c):
    base = c.name.split("_", 1)[1] if "_" in c.name else c.name
    if c.name.startswith("phi_"):
        return "psi_" + base
    return "chi2_" + base


def _multiplier_atoms(e):
    out = {}
    for m in e.terms:
        for f in m.factors:
            if f.atom.klass == "multiplier":
                out[f.atom.name] = f.atom
    return out


def _substitute_solutions(e, solutions, dm):
    for name, entry in solutions.items():
        if entry[2] == "free":
            continue
        lam, slot_frees, sol = entry
        e = substitute_atom(e, lam, sol, slot_frees)
    return e


def _solve_multiplier(edot, mults, constraint):
    """Solve a consistency condition for one multiplier with a pure scalar
    diagonal coefficient."""
    for name in sorted(mults):
        lam = mults[name]
        pure, rest = [], []
        self_ref = False
        for m in edot.terms:
            lamfacs = [f for f in m.factors if f.atom == lam]
            if not lamfacs:
                rest.append(m)
                continue
            if (len(lamfacs) == 1 and len(m.factors) == 1
                    and not lamfacs[0].deriv and not lamfacs[0].dot):
                pure.append(m)
            else:
                self_ref = True
        if not pure or self_ref:
            continue
        if len(pure) != 1:
            continue
        lead = pure[0]
        slot_frees = lead.factors[0].indices
        c = lead.coef
        sol = Expression.from_monomials(rest).scaled(Coef(-1) / c)
        for s, p in lead.scalars:
            sol = sol.scalar_pow(s, -p)
        return lam, slot_frees, sol
    raise NonLinearMultiplierError(
        f"cannot solve consistency of {constraint.name} for any multiplier")


# ---------------------------------------------------------------------------
# classification


@dataclass
class Classification:
    first_class: list  # dressed Constraint objects (gamma_*)
    second_class: list  # original Constraint objects
    matrix_rank_per_generator: int
    null_count_per_generator: int


def _coefficient_pool(dm, degree, with_f):
    """Coefficient monomials for the dressing ansatz, as factor tuples.

    Only combinations of exactly the requested degree are returned; the
    caller escalates degree by degree.
    """
    atoms = [dm.atom(name) for name in dm.config_atoms]
    atoms += [dm.atom("P_" + name) for name in dm.config_atoms]
    if degree == 0:
        pool = [()]
    elif degree == 1:
        pool = [(a,) for a in atoms]
    else:
        pool = [(a, b) for i, a in enumerate(atoms) for b in atoms[i:]]
    out = []
    f_atom = dm.atom(dm.structure) if dm.structure else None
    for combo in pool:
        out.append((combo, None))
        if with_f and f_atom is not None:
            out.append((combo, f_atom))
    return out


def _wirings(slot_kinds, target_frees):
    """All ways to place target frees into slots and pair the remainder."""
    n = len(slot_kinds)
    positions = range(n)
    free_list = list(target_frees)
    if (n - len(free_list)) % 2:
        return
    for placement in itertools.permutations(positions, len(free_list)):
        if any(slot_kinds[p] != free_list[k][0] for k, p in enumerate(placement)):
            continue
        remaining = [p for p in positions if p not in placement]
        for pairing in _pairings(remaining, slot_kinds):
            yield dict(zip(placement, free_list)), pairing


def _pairings(slots, kinds):
    if not slots:
        yield []
        return
    first = slots[0]
    for k in range(1, len(slots)):
        if kinds[slots[k]] != kinds[first]:
            continue
        rest = slots[1:k] + slots[k + 1:]
        for sub in _pairings(rest, kinds):
            yield [(first, slots[k])] + sub


def ansatz_terms(dm, constraints, seed, degree=2, deriv_order=1, reducibility=False):
    """Candidate dressing terms for one seed constraint: expressions with the
    seed's free-index signature, each linear in some other constraint.
    Coefficient polynomials run over all degrees up to ``degree``."""
    target = seed.frees
    seen = set()
    out = []
    pool = []
    for d in range(degree + 1):
        pool.extend(_coefficient_pool(dm, d, with_f=True))
    for b in constraints:
        if b.name == seed.name and not reducibility:
            continue
        for deriv_slots in range(deriv_order + 1):
            for combo, f_atom in pool:
                slot_kinds = []
                owners = []  # (what, arg)
                for a in combo:
                    for k in a.slots:
                        slot_kinds.append(k)
                        owners.append(("atom", a))
                if f_atom is not None:
                    for _ in range(3):
                        slot_kinds.append(INTERNAL)
                        owners.append(("f", f_atom))
                for _ in range(deriv_slots):
                    slot_kinds.append(SPATIAL)
                    owners.append(("deriv", None))
                for kf, nf in b.frees:
                    slot_kinds.append(kf)
                    owners.append(("constraint", (kf, nf)))
                if len(out) > 4000:
                    return out
                kinds = tuple(slot_kinds)
                for placement, pairing in _wirings(kinds, target):
                    expr = _build_ansatz(b, combo, f_atom, deriv_slots,
                                         kinds, placement, pairing)
                    if expr is None or expr.is_zero:
                        continue
                    if expr.terms in seen:
                        continue
                    seen.add(expr.terms)
                    out.append(expr)
    return out


def _build_ansatz(b, combo, f_atom, deriv_slots, slot_kinds, placement, pairing):
    names = dict(placement)
    for p1, p2 in pairing:
        nm = (slot_kinds[p1], fresh_name(slot_kinds[p1]))
        names[p1] = nm
        names[p2] = nm
    pos = 0
    factors = []
    for a in combo:
        idxs = []
        for _ in a.slots:
            idxs.append(names[pos])
            pos += 1
        factors.append(Factor(a, tuple(idxs)))
    if f_atom is not None:
        factors.append(Factor(f_atom, (names[pos], names[pos + 1], names[pos + 2])))
        pos += 3
    dvs = []
    for _ in range(deriv_slots):
        dvs.append(names[pos])
        pos += 1
    cmap = {}
    for kf, nf in b.frees:
        cmap[(kf, nf)] = names[pos]
        pos += 1
    try:
        inst = b.expression.rename_frees(cmap)
        for dv in dvs:
            inst = derivative(inst, dv)
        if not factors:
            return inst
        coef = Expression.from_monomials([Monomial(Coef(1), tuple(factors))])
        return coef * inst
    except IndexUsageError:
        return None


def classify(constraints, dm, degree=2, deriv_order=1, sample_seeds=range(10),
             samples=10, internal_dim=3):
    """Split the stabilized constraints into first and second class.

    The numeric rank of the weak-reduced delta matrix fixes the number of
    first-class components per generator; dressing attempts stop as soon as
    that count is reached, and seeds whose component count exceeds what is
    still missing (or that carry no numeric null-space support) are skipped.
    """
    pairs = canonical_pairs(dm)
    dim = dm.internal_dim(internal_dim)

    rank_pg, total_comps, null_support, base_rows = _numeric_matrix_rank(
        constraints, dm, pairs, sample_seeds, dim, with_null_support=True)
    expected_fc = total_comps - rank_pg

    dressed_by_name = {}
    remaining = expected_fc
    scheduled = sorted(
        constraints,
        key=lambda c: (0 if all(base_rows[(c.name, b.name)].is_zero
                                for b in constraints) else 1,
                       -c.stage))
    for deg in range(degree + 1):
        if remaining == 0:
            break
        for c in scheduled:
            if remaining == 0:
                break
            if c.name in dressed_by_name:
                continue
            comps = c.components_per_generator()
            if comps > remaining or null_support.get(c.name, 1.0) <= 1e-6:
                continue
            dressed = _dress_first_class(c, constraints, dm, pairs, deg,
                                         deriv_order, base_rows)
            if dressed is not None:
                dressed_by_name[c.name] = dressed
                remaining -= comps

    first, second = [], []
    for c in constraints:
        if c.name in dressed_by_name:
            first.append(Constraint("gamma_" + c.name, dressed_by_name[c.name],
                                    c.frees, c.stage, "first", True, source=c.name))
        else:
            second.append(Constraint(c.name, c.expression, c.frees, c.stage,
                                     "second", True, source=c.source))

    fc_comps = sum(c.components_per_generator() for c in first)
    sc_comps = sum(c.components_per_generator() for c in second)
    if fc_comps != expected_fc or fc_comps + sc_comps != total_comps:
        raise ClassificationIncompleteError(
            f"null-vector ansatz found {fc_comps} first-class components per "
            f"generator, numeric rank demands {expected_fc}")
    _check_second_class_block(second, dm, pairs, sample_seeds, samples, dim)
    return Classification(first, second, rank_pg, expected_fc)


def _renamed_pair(a, b):
    bb = b.expression.rename_frees({f: (f[0], f[1] + "1") for f in b.frees})
    return a, bb


def _bracket_rows(expr, constraints, pairs, ideal):
    """Weak-reduced brackets of expr against every constraint family."""
    rows = {}
    for b in constraints:
        _, bb = _renamed_pair(None, b)
        raw = poisson_bracket(expr, bb, pairs)
        rows[b.name] = weak_reduce(raw, ideal)
    return rows


def _dress_first_class(seed, constraints, dm, pairs, degree, deriv_order,
                       precomputed_rows=None):
    if precomputed_rows is not None:
        base_rows = {b.name: precomputed_rows[(seed.name, b.name)]
                     for b in constraints}
    else:
        base_rows = _bracket_rows(seed.expression, constraints, pairs, constraints)
    if all(r.is_zero for r in base_rows.values()):
        return seed.expression
    terms = ansatz_terms(dm, constraints, seed, degree, deriv_order)
    if not terms:
        return None
    columns, kept = [], []
    for t in terms:
        try:
            col = _bracket_rows(t, constraints, pairs, constraints)
        except UnsupportedDeltaOrderError:
            continue
        if any(not r.is_zero for r in col.values()):
            columns.append(col)
            kept.append(t)
    system = {}

    def add(eqkey, col, coef):
        row = system.setdefault(eqkey, {})
        row[col] = row.get(col, Coef(0)) + coef

    for bname in base_rows:
        for m in base_rows[bname].terms:
            add((bname, monomial_key(m)), -1, m.coef)
        for ci, col in enumerate(columns):
            for m in col[bname].terms:
                add((bname, monomial_key(m)), ci, m.coef)
    sol = _solve_linear(system, len(columns))
    if sol is None:
        return None
    dressed = seed.expression
    for ci, coef in sol.items():
        if not coef.is_zero:
            dressed = dressed + kept[ci].scaled(coef)
    rows = _bracket_rows(dressed, constraints, pairs, constraints)
    if not all(r.is_zero for r in rows.values()):
        return None
    return dressed


def _solve_linear(system, ncols):
    """Solve sum_c x_c * A[eq][c] = A[eq][-1] exactly; particular solution
    with free variables at zero, or None if infeasible."""
    rows = []
    for eq, cols in system.items():
        rhs = -cols.get(-1, Coef(0))
        row = {c: v for c, v in cols.items() if c != -1 and not v.is_zero}
        rows.append((row, rhs))
    assign = {}
    changed = True
    # Gaussian elimination on sparse rows
    pending = rows
    pivots = {}
    for row, rhs in pending:
        r = dict(row)
        b = rhs
        for col, (prow, pb) in list(pivots.items()):
            if col in r:
                factor = r.pop(col)
                for c2, v2 in prow.items():
                    r[c2] = r.get(c2, Coef(0)) - factor * v2
                    if r[c2].is_zero:
                        del r[c2]
                b = b - factor * pb
        if not r:
            if not b.is_zero:
                return None
            continue
        col = min(r)
        lead = r.pop(col)
        prow = {c: v / lead for c, v in r.items()}
        pb = b / lead
        for col2, (qrow, qb) in list(pivots.items()):
            if col in qrow:
                f2 = qrow.pop(col)
                for c2, v2 in prow.items():
                    qrow[c2] = qrow.get(c2, Coef(0)) - f2 * v2
                    if qrow[c2].is_zero:
                        del qrow[c2]
                pivots[col2] = (qrow, qb - f2 * pb)
        pivots[col] = (prow, pb)
    out = {c: Coef(0) for c in range(ncols)}
    for col, (prow, pb) in pivots.items():
        out[col] = pb  # free variables default to zero
    return out


def _constraint_components(constraints, dim):
    basis = []
    for ci, c in enumerate(constraints):
        for comps in _independent_components(c.shape_atom(), dim):
            basis.append((ci, comps))
    return basis


def _numeric_matrix_rank(constraints, dm, pairs, seeds, dim,
                         with_null_support=False):
    basis = _constraint_components(constraints, dim)
    if not basis:
        return (0, 0, {}, {}) if with_null_support else (0, 0)
    entries = {}
    full_rows = {}
    for i, a in enumerate(constraints):
        for j, b in enumerate(constraints):
            _, bb = _renamed_pair(None, b)
            raw = poisson_bracket(a.expression, bb, pairs)
            red = weak_reduce(raw, constraints)
            full_rows[(a.name, b.name)] = red
            mons = [m._replace(delta=None) for m in red.terms if m.delta == ()]
            entries[(i, j)] = Expression.from_monomials(mons)
    ranks = []
    support = {c.name: 0.0 for c in constraints}
    for seed in seeds:
        sample = FieldSample(seed, dim)
        mat = np.zeros((len(basis), len(basis)), dtype=complex)
        for r, (ia, ca) in enumerate(basis):
            a = constraints[ia]
            for cidx, (ib, cb) in enumerate(basis):
                b = constraints[ib]
                e = entries[(ia, ib)]
                if e.is_zero:
                    continue
                frees = dict(zip(a.frees, ca))
                frees.update({(k, n + "1"): v
                              for (k, n), v in zip(b.frees, cb)})
                mat[r, cidx] = numeric_evaluate(e, sample, frees)
        scale = max(1.0, np.abs(mat).max())
        ranks.append(int(np.linalg.matrix_rank(mat, tol=1e-8 * scale)))
        # left null space support per constraint family: v^T M = 0
        _, _, vh = np.linalg.svd(mat.T)
        nullity = len(basis) - ranks[-1]
        if nullity:
            null_vecs = vh[ranks[-1]:]  # rows span the null space
            amp = np.abs(null_vecs).max(axis=0)
            for r, (ia, _) in enumerate(basis):
                name = constraints[ia].name
                support[name] = max(support[name], float(amp[r]))
    rank = max(ranks)
    if dim > 1:
        if rank % dim:
            raise ClassificationIncompleteError(
                f"bracket-matrix rank {rank} not divisible by internal dim {dim}")
        rank //= dim
        total = len(basis) // dim
    else:
        total = len(basis)
    if with_null_support:
        return rank, total, support, full_rows
    return rank, total


def _check_second_class_block(second, dm, pairs, seeds, samples, dim):
    if not second:
        return
    basis = _constraint_components(second, dim)
    exprs = {}
    for i, a in enumerate(second):
        for j, b in enumerate(second):
            _, bb = _renamed_pair(None, b)
            raw = poisson_bracket(a.expression, bb, pairs)
            red = weak_reduce(raw, second)
            mons = [m._replace(delta=None) for m in red.terms if m.delta == ()]
            exprs[(i, j)] = Expression.from_monomials(mons)
    for s in range(samples):
        sample = FieldSample(1000 + s, dim)
        mat = np.zeros((len(basis), len(basis)), dtype=complex)
        for r, (ia, ca) in enumerate(basis):
            a = second[ia]
            for cidx, (ib, cb) in enumerate(basis):
                b = second[ib]
                e = exprs[(ia, ib)]
                if e.is_zero:
                    continue
                frees = dict(zip(a.frees, ca))
                frees.update({(k, n + "1"): v for (k, n), v in zip(b.frees, cb)})
                mat[r, cidx] = numeric_evaluate(e, sample, frees)
        scale = max(1.0, np.abs(mat).max())
        if int(np.linalg.matrix_rank(mat, tol=1e-8 * scale)) != len(basis):
            raise ClassificationIncompleteError(
                "second-class delta-block is not invertible at a generic sample")


# ---------------------------------------------------------------------------
# reducibility


@dataclass
class ReducibilityRelation:
    operator_coefficients: dict  # constraint name -> Expression (op applied form)
    frees: tuple
    witness: object  # Expression: the combination before the f-identity pass


def _reducibility_pool(dm, constraints, target, deriv_order=1):
    """Candidate terms O(constraint) for the strong-identity search.

    Coefficients here may also carry eta and first derivatives of the
    connection, since curvature-valued coefficients occur in the known
    relations.
    """
    out, seen = [], set()
    f_atom = dm.atom(dm.structure) if dm.structure else None
    conn = dm.atom(dm.connection) if dm.connection else None
    # coefficient factor templates: (), (A,), (dA,), (A,A)
    templates = [()]
    if conn is not None:
        templates.append((("atom", conn, 0),))
        templates.append((("atom", conn, 1),))
        templates.append((("atom", conn, 0), ("atom", conn, 0)))
    generics = {c.name: _generic_stand_in(c) for c in constraints}
    for b in constraints:
        bgen = generics[b.name]
        for use_eta in (0, 1):
            for use_f in ((0,) if f_atom is None else (0, 1)):
                for nderiv in range(deriv_order + 1):
                    for tmpl in templates:
                        slot_kinds = []
                        for what, atom, nd in tmpl:
                            slot_kinds.extend(atom.slots)
                            slot_kinds.extend([SPATIAL] * nd)
                        if use_eta:
                            slot_kinds.extend([SPATIAL] * 3)
                        if use_f:
                            slot_kinds.extend([INTERNAL] * 3)
                        slot_kinds.extend([SPATIAL] * nderiv)
                        slot_kinds.extend(k for k, _ in b.frees)
                        kinds = tuple(slot_kinds)
                        if (len(kinds) - len(target)) % 2:
                            continue
                        if len(kinds) > 12:
                            continue
                        for placement, pairing in _wirings(kinds, target):
                            expr = _build_reducibility_term(
                                b, tmpl, use_eta, use_f, nderiv, dm,
                                kinds, placement, pairing)
                            if expr is None or expr.is_zero:
                                continue
                            if expr.terms in seen or (-expr).terms in seen:
                                continue
                            gen = _build_reducibility_term(
                                bgen, tmpl, use_eta, use_f, nderiv, dm,
                                kinds, placement, pairing)
                            if gen is None or gen.is_zero:
                                continue
                            seen.add(expr.terms)
                            out.append((b.name, expr, gen))
                            if len(out) > 6000:
                                return out
    return out


def _generic_stand_in(c):
    """A constraint-shaped object whose expression is a fresh atom family
    carrying the same free signature and index symmetry; used to reject
    operator combinations that annihilate any family of that shape."""
    atom = c.shape_atom("Gen_" + c.name)
    return Constraint(c.name, single(atom, c.frees), c.frees)


def _build_reducibility_term(b, tmpl, use_eta, use_f, nderiv, dm,
                             slot_kinds, placement, pairing):
    names = dict(placement)
    for p1, p2 in pairing:
        nm = (slot_kinds[p1], fresh_name(slot_kinds[p1]))
        names[p1] = nm
        names[p2] = nm
    pos = 0
    factors = []
    try:
        for what, atom, nd in tmpl:
            idxs = []
            for _ in atom.slots:
                idxs.append(names[pos])
                pos += 1
            dvs = []
            for _ in range(nd):
                dvs.append(names[pos])
                pos += 1
            factors.append(Factor(atom, tuple(idxs), tuple(dvs)))
        if use_eta:
            factors.append(Factor(dm.table.lookup("eta"),
                                  (names[pos], names[pos + 1], names[pos + 2])))
            pos += 3
        if use_f:
            factors.append(Factor(dm.atom(dm.structure),
                                  (names[pos], names[pos + 1], names[pos + 2])))
            pos += 3
        dvs = []
        for _ in range(nderiv):
            dvs.append(names[pos])
            pos += 1
        cmap = {}
        for kf, nf in b.frees:
            cmap[(kf, nf)] = names[pos]
            pos += 1
        inst = b.expression.rename_frees(cmap)
        for dv in dvs:
            inst = derivative(inst, dv)
        if not factors:
            return inst
        coef = Expression.from_monomials([Monomial(Coef(1), tuple(factors))])
        return coef * inst
    except IndexUsageError:
        return None


def detect_reducibility(classification, all_constraints, dm,
                        signatures=((), ((INTERNAL, "I"),), ((SPATIAL, "i"),)),
                        deriv_order=1):
    """Differential-operator identities annihilating the first-class set.

    The search solves for rational combinations of candidate terms built on
    every constraint that cancel identically (strong zero after the
    structure-constant rewrite, which realizes the Bianchi identity), then
    keeps solutions with support on at least one first-class constraint.
    """
    fc_names = {c.name for c in classification.first_class}
    pool_constraints = list(classification.first_class) + list(classification.second_class)
    relations = []
    for target in signatures:
        cands = _reducibility_pool(dm, pool_constraints, tuple(target), deriv_order)
        if not cands:
            continue
        basis = _nullspace_of_terms([e for _, e, _ in cands])
        for vec in basis:
            ops, gen_ops = {}, {}
            witness = Expression.zero()
            for i, coef in vec.items():
                if coef.is_zero:
                    continue
                name, expr, gen = cands[i]
                ops[name] = ops.get(name, Expression.zero()) + expr.scaled(coef)
                gen_ops[name] = gen_ops.get(name, Expression.zero()) + gen.scaled(coef)
                witness = witness + expr.scaled(coef)
            genuine = {n for n, e in gen_ops.items() if not e.is_zero}
            if not (genuine & fc_names):
                continue
            ops = {n: e for n, e in ops.items() if not gen_ops[n].is_zero}
            relations.append(ReducibilityRelation(ops, tuple(target), witness))
        if relations:
            break
    return _independent_relations(relations)


def _nullspace_of_terms(exprs):
    """Rational nullspace of sum_i x_i expr_i == 0 (strong, post-jacobi)."""
    reduced = [reduce_jacobi(e) for e in exprs]
    system = {}
    for i, e in enumerate(reduced):
        for m in e.terms:
            row = system.setdefault(monomial_key(m), {})
            row[i] = row.get(i, Coef(0)) + m.coef
    # gaussian elimination to find nullspace vectors
    pivots = {}
    for key, cols in system.items():
        r = {c: v for c, v in cols.items() if not v.is_zero}
        for col, prow in list(pivots.items()):
            if col in r:
                f = r.pop(col)
                for c2, v2 in prow.items():
                    r[c2] = r.get(c2, Coef(0)) - f * v2
                    if r[c2].is_zero:
                        del r[c2]
        if r:
            col = min(r)
            lead = r.pop(col)
            prow = {c: v / lead for c, v in r.items()}
            for col2, qrow in list(pivots.items()):
                if col in qrow:
                    f2 = qrow.pop(col)
                    for c2, v2 in prow.items():
                        qrow[c2] = qrow.get(c2, Coef(0)) - f2 * v2
                        if qrow[c2].is_zero:
                            del qrow[c2]
            pivots[col] = prow
    free_cols = [i for i in range(len(exprs)) if i not in pivots]
    basis = []
    for fc in free_cols:
        vec = {fc: Coef(1)}
        for col, prow in pivots.items():
            v = prow.get(fc)
            if v is not None and not v.is_zero:
                vec[col] = -v
        basis.append(vec)
    return basis


def _independent_relations(relations):
    """Drop duplicate relations (same operator support up to scale)."""
    out = []
    seen = set()
    for r in relations:
        key = tuple(sorted((n, e.monic().terms) for n, e in r.operator_coefficients.items()))
        if key in seen:
            continue
        seen.add(key)
        out.append(r)
    return out


# ---------------------------------------------------------------------------
# degrees of freedom


def count_dof(dm, classification, relations, internal_dim=3):
    p = dm.phase_space_dim_per_generator()
    f_total = sum(c.components_per_generator() for c in classification.first_class)
    fake_counts = 0
    for r in relations:
        fake = AtomSymbol("_r", tuple(k for k, _ in r.frees))
        fake_counts += _component_total(fake)  # relation signatures carry no pair symmetry
    f_ind = f_total - fake_counts
    s = sum(c.components_per_generator() for c in classification.second_class)
    if s % 2:
        raise DofCountError(f"odd number of second-class components: {s}")
    num = p - 2 * f_ind - s
    if num < 0 or num % 2:
        raise DofCountError(f"bad degree-of-freedom count ({p} - 2*{f_ind} - {s})/2")
    return num // 2, f_ind, s


def _component_total(fake):
    from .split import component_count
    return component_count(fake)


# ---------------------------------------------------------------------------
# extended action and equations of motion


@dataclass
class Extended:
    h_base: object  # H_c with solved primary multipliers substituted in
    h_extended: object  # h_base + first-class multiplier terms
    action_density: object  # kinetic - h_base - lambda.gamma - u.chi terms
    multipliers: list  # (atom, constraint, role)


def extended_action(dm, defs, h_p, stab, classification):
    """Assemble S_E and H_E with solved multipliers substituted.

    H = H_c + lambda_solved * phi for each fixed primary multiplier; the
    extended Hamiltonian adds fresh multipliers for the first class only,
    while the action density also couples fresh u/v multipliers to the
    second class.
    """
    h_base = h_p.canonical
    for lam, cref in h_p.multipliers:
        entry = stab.multiplier_solutions.get(lam.name)
        if entry is None or entry[2] == "free":
            continue
        _, slot_frees, sol = entry
        h_base = h_base + _contract(sol, slot_frees, cref.expression, cref.frees)

    mults = []
    h_ext = h_base
    action = Expression.zero()
    for d in defs:
        mult = Fraction(1) / d.config.weight
        action = action + (single(d.config, d.frees, dot=1)
                           * single(d.momentum, d.frees)).scaled(mult)
    action = action - h_base
    for c in classification.first_class:
        lam = multiplier_atom(c, prefix="lam")
        dm.table._atoms[lam.name] = lam
        mults.append((lam, c, "first"))
        action = action - single(lam, c.frees) * c.expression
        h_ext = h_ext + single(lam, c.frees) * c.expression
    for c in classification.second_class:
        prefix = "u" if c.stage == 1 else "v"
        lam = multiplier_atom(c, prefix=prefix)
        dm.table._atoms[lam.name] = lam
        mults.append((lam, c, "second"))
        action = action - single(lam, c.frees) * c.expression
    return Extended(h_base, h_ext, action, mults)


def _contract(a, a_frees, b, b_frees):
    """Product of two expressions with their free families contracted."""
    shared = tuple((k, fresh_name(k)) for k, _ in a_frees)
    aa = a.rename_frees(dict(zip(a_frees, shared)))
    bb = b.rename_frees(dict(zip(b_frees, shared)))
    return aa * bb


@dataclass
class MotionEquation:
    varied: str  # atom name varied in S_E
    lhs: str  # "dot:<atom>" or "constraint"
    rhs: object  # Expression


def equations_of_motion(dm, defs, extended):
    """Variations of the extended action for every phase-space atom and
    multiplier.  Canonical-pair variations are presented in Hamilton form
    (qdot = weight * dH'/dp etc.), multiplier variations as constraints."""
    from .calculus import functional_derivative

    out = []
    hphase = extended.h_extended
    for d in defs:
        w = d.config.weight
        # qdot from varying the momentum
        rhs = el_strip(functional_derivative(hphase, d.momentum, d.frees))
        rhs = _add_second_class_velocity_terms(rhs, extended, d, vary="momentum")
        out.append(MotionEquation(d.momentum.name, "dot:" + d.config.name,
                                  rhs.scaled(Fraction(w))))
        # pidot from varying the field
        rhs2 = el_strip(functional_derivative(hphase, d.config, d.frees))
        rhs2 = _add_second_class_velocity_terms(rhs2, extended, d, vary="field")
        out.append(MotionEquation(d.config.name, "dot:" + d.momentum.name,
                                  (-rhs2).scaled(Fraction(w))))
    for lam, c, role in extended.multipliers:
        out.append(MotionEquation(lam.name, "constraint", c.expression))
    return out


def _add_second_class_velocity_terms(rhs, extended, d, vary):
    """Multiplier terms enter the canonical variations through -u.chi in S_E;
    they are already inside h_extended only for first class, so add the
    second-class multiplier contributions here."""
    from .calculus import functional_derivative
    total = rhs
    for lam, c, role in extended.multipliers:
        if role != "second":
            continue
        term = _contract(single(lam, c.frees), c.frees, c.expression, c.frees)
        atom = d.momentum if vary == "momentum" else d.config
        got = el_strip(functional_derivative(term, atom, d.frees))
        total = total + got
    return total


def el_strip(e):
    return Expression.from_monomials(tuple(m._replace(delta=None) for m in e.terms))
