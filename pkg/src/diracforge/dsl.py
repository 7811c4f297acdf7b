"""Model-file and expression grammar.

Model files are line-oriented statements terminated by ``;``::

    model bf_ym;
    option signature lorentzian;
    field A[mu; I];
    field B[mu nu; I] antisym(mu,nu);
    const f[I J K] totally-antisym jacobi;
    coupling g2;
    lagrangian = 1/4 * B[mu nu; I] * B[mu nu; I] - ... ;

Expressions use ``d(mu, X)`` for derivatives, ``dt(X)`` for time
derivatives of split atoms, ``i`` for the imaginary unit, ``delta3`` for
the equal-time Dirac delta, and ``name^p`` for scalar coupling powers.
Index kinds are inferred from index names: mu/nu/al/be/... are spacetime,
i..n spatial, single uppercase letters internal.  The same grammar is used
to emit canonical dumps, so every serialized expression re-parses.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction

from .atoms import (AtomSymbol, SymbolTable, kind_of_index_name,
                    SPACETIME, SPATIAL, INTERNAL)
from .coeff import Coef
from .errors import ParseError, ValidationError
from .expr import (DIMG, Expression, Monomial, Factor, number, derivative,
                   monomial_frees)

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<comment>\#[^\n]*)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<int>\d+)
  | (?P<sym>[-+*/()\[\];,=^])
""", re.VERBOSE)


@dataclass
class Token:
    kind: str
    text: str
    line: int
    col: int


def tokenize(text):
    tokens = []
    line, col = 1, 1
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        chunk = m.group()
        if kind not in ("ws", "comment"):
            tokens.append(Token(kind, chunk, line, col))
        nl = chunk.count("\n")
        if nl:
            line += nl
            col = len(chunk) - chunk.rfind("\n")
        else:
            col += len(chunk)
        pos = m.end()
    tokens.append(Token("eof", "", line, col))
    return tokens


class _Stream:
    def __init__(self, tokens):
        self.tokens = tokens
        self.pos = 0

    def peek(self, ahead=0):
        return self.tokens[min(self.pos + ahead, len(self.tokens) - 1)]

    def next(self):
        tok = self.peek()
        self.pos += 1
        return tok

    def expect(self, text):
        tok = self.next()
        if tok.text != text:
            raise ParseError(f"expected {text!r}, found {tok.text!r}", tok.line, tok.col)
        return tok

    def error(self, msg):
        tok = self.peek()
        raise ParseError(msg, tok.line, tok.col)


# ---------------------------------------------------------------------------
# expression parsing


def _parse_index(tok):
    kind = kind_of_index_name(tok.text)
    if kind is None:
        raise ParseError(f"cannot infer index kind of {tok.text!r}", tok.line, tok.col)
    return (kind, tok.text)


def _parse_index_list(ts):
    ts.expect("[")
    idxs = []
    while True:
        tok = ts.peek()
        if tok.text == "]":
            ts.next()
            return tuple(idxs)
        if tok.text in (";", ","):
            ts.next()
            continue
        if tok.kind != "name":
            ts.error(f"expected index name, found {tok.text!r}")
        idxs.append(_parse_index(ts.next()))


class ExpressionParser:
    def __init__(self, table):
        self.table = table

    def parse(self, text):
        ts = _Stream(tokenize(text))
        e = self._expr(ts)
        if ts.peek().kind != "eof":
            ts.error(f"trailing input {ts.peek().text!r}")
        return e

    def _expr(self, ts, stop=()):
        sign = 1
        while ts.peek().text in ("+", "-"):
            if ts.next().text == "-":
                sign = -sign
        total = self._term(ts).scaled(sign)
        while True:
            tok = ts.peek()
            if tok.text in ("+", "-") and tok.text not in stop:
                sign = 1 if ts.next().text == "+" else -1
                while ts.peek().text in ("+", "-"):
                    if ts.next().text == "-":
                        sign = -sign
                total = total + self._term(ts).scaled(sign)
            else:
                return total

    def _term(self, ts):
        e = self._primary(ts)
        while ts.peek().text == "*":
            ts.next()
            e = e * self._primary(ts)
        return e

    def _primary(self, ts):
        tok = ts.peek()
        if tok.text == "(":
            ts.next()
            e = self._expr(ts)
            ts.expect(")")
            return e
        if tok.kind == "int":
            ts.next()
            val = Fraction(int(tok.text))
            if ts.peek().text == "/":
                ts.next()
                den = ts.next()
                if den.kind != "int":
                    ts.error("expected integer denominator")
                val /= int(den.text)
            return number(Coef(val))
        if tok.kind != "name":
            ts.error(f"expected a factor, found {tok.text!r}")
        name = ts.next().text
        if name == "i" and ts.peek().text != "[":
            return number(Coef(0, 1))
        if name == "delta3":
            return Expression.from_monomials([Monomial(Coef(1), (), ())])
        if name == "d":
            ts.expect("(")
            idx_tok = ts.next()
            idx = _parse_index(idx_tok)
            ts.expect(",")
            sub = self._expr(ts)
            ts.expect(")")
            return derivative(sub, idx)
        if name == "dt":
            ts.expect("(")
            sub = self._primary(ts)
            ts.expect(")")
            if len(sub.terms) != 1 or len(sub.terms[0].factors) != 1:
                ts.error("dt() takes a single atom reference")
            f = sub.terms[0].factors[0]
            if f.dot:
                raise ValidationError("second time derivative in dt()")
            mon = sub.terms[0]
            return Expression.from_monomials(
                [mon._replace(factors=(f._replace(dot=1),))])
        is_coupling = False
        if name != "kd" and name in self.table and ts.peek().text != "[":
            a = self.table.lookup(name)
            is_coupling = not a.slots and a.klass == "constant" and "coupling" in a.tags
        if name == DIMG or is_coupling:
            power = 1
            if ts.peek().text == "^":
                ts.next()
                neg = False
                if ts.peek().text == "-":
                    ts.next()
                    neg = True
                p = ts.next()
                if p.kind != "int":
                    ts.error("expected integer power")
                power = -int(p.text) if neg else int(p.text)
            return number(1).scalar_pow(name, power)
        # atom reference
        if ts.peek().text == "[":
            idxs = _parse_index_list(ts)
        else:
            idxs = ()
        kinds = tuple(k for k, _ in idxs)
        atom = self.table.lookup(name, kinds)
        if atom.slots != kinds:
            ts.error(f"atom {name!r} expects slots {atom.slots}, got {kinds}")
        return Expression.from_monomials(
            [Monomial(Coef(1), (Factor(atom, idxs),))])


def parse_expression(text, table):
    return ExpressionParser(table).parse(text)


# ---------------------------------------------------------------------------
# dumping


def _dump_factor(f):
    if f.indices:
        parts = []
        for pos, (kind, name) in enumerate(f.indices):
            if kind == INTERNAL and pos and f.indices[pos - 1][0] != INTERNAL:
                parts.append(";")
            parts.append(name)
        body = f"{f.atom.name}[" + " ".join(parts).replace(" ; ", "; ") + "]"
    else:
        body = f.atom.name
    if f.dot:
        body = f"dt({body})"
    for kind, name in f.deriv:
        body = f"d({name}, {body})"
    return body


def dump_monomial(m):
    pieces = []
    for name, power in m.scalars:
        pieces.append(name if power == 1 else f"{name}^{power}")
    for f in m.factors:
        pieces.append(_dump_factor(f))
    if m.delta is not None:
        body = "delta3"
        for kind, name in m.delta:
            body = f"d({name}, {body})"
        pieces.append(body)
    coef = m.coef.dump()
    if not pieces:
        return coef
    if coef == "1":
        return "*".join(pieces)
    if coef == "-1":
        return "-" + "*".join(pieces)
    return "*".join([coef] + pieces)


def dump_expression(e):
    if e.is_zero:
        return "0"
    out = dump_monomial(e.terms[0])
    for m in e.terms[1:]:
        s = dump_monomial(m)
        if s.startswith("-"):
            out += " - " + s[1:]
        else:
            out += " + " + s
    return out


# ---------------------------------------------------------------------------
# model files


@dataclass
class ModelSpec:
    """A parsed model declaration, before the 3+1 split."""

    name: str
    table: SymbolTable
    fields: list
    constants: list
    couplings: list
    options: dict
    lagrangian: Expression
    source: str = ""

    @property
    def signature(self):
        return self.options.get("signature", "lorentzian")

    @property
    def group_tag(self):
        return self.options.get("group", "su_n")

    def has_internal(self):
        return any(INTERNAL in self.table.lookup(f).slots for f in self.fields)


_RESERVED = {"d", "dt", "i", "kd", "delta3", DIMG, "eta"}


def _parse_decl_indices(ts, name_tok):
    idxs = _parse_index_list(ts)
    seen = set()
    for kind, nm in idxs:
        if nm in seen:
            raise ParseError(f"repeated declaration index {nm!r}", name_tok.line, name_tok.col)
        seen.add(nm)
    return idxs


def _merge_hyphen_keyword(ts):
    """Recognize 'totally-antisym' spelled with a hyphen."""
    if (ts.peek().text == "totally" and ts.peek(1).text == "-"
            and ts.peek(2).text == "antisym"):
        ts.next(), ts.next(), ts.next()
        return True
    return False


def parse_model(text, name="model"):
    """Parse a model document into a validated ModelSpec."""
    ts = _Stream(tokenize(text))
    table = SymbolTable()
    fields, constants, couplings = [], [], []
    options = {}
    lagrangian = None
    model_name = name

    while ts.peek().kind != "eof":
        head = ts.next()
        if head.kind != "name":
            raise ParseError(f"expected a statement, found {head.text!r}", head.line, head.col)
        if head.text == "model":
            tok = ts.next()
            model_name = tok.text
            ts.expect(";")
        elif head.text == "option":
            key = ts.next().text
            val = ts.next().text
            if key == "signature" and val not in ("lorentzian", "euclidean"):
                raise ParseError(f"unknown signature {val!r}", head.line, head.col)
            options[key] = val
            ts.expect(";")
        elif head.text in ("field", "const"):
            name_tok = ts.next()
            if name_tok.kind != "name" or name_tok.text in _RESERVED:
                raise ParseError(f"bad atom name {name_tok.text!r}", name_tok.line, name_tok.col)
            idxs = _parse_decl_indices(ts, name_tok) if ts.peek().text == "[" else ()
            slots = tuple(k for k, _ in idxs)
            names = [nm for _, nm in idxs]
            symmetry = []
            tags = set()
            while ts.peek().text != ";":
                if _merge_hyphen_keyword(ts):
                    symmetry.append(("anti", tuple(range(len(slots)))))
                    continue
                word = ts.next()
                if word.text == "antisym":
                    ts.expect("(")
                    a = ts.next().text
                    ts.expect(",")
                    b = ts.next().text
                    ts.expect(")")
                    try:
                        symmetry.append(("anti", (names.index(a), names.index(b))))
                    except ValueError:
                        raise ParseError(f"antisym() names unknown index", word.line, word.col)
                elif word.text == "jacobi":
                    tags.add("jacobi")
                else:
                    raise ParseError(f"unknown attribute {word.text!r}", word.line, word.col)
            ts.expect(";")
            klass = "field" if head.text == "field" else "constant"
            atom = AtomSymbol(name_tok.text, slots, tuple(symmetry), klass,
                              tags=frozenset(tags))
            table.register(atom)
            (fields if klass == "field" else constants).append(atom.name)
        elif head.text == "coupling":
            name_tok = ts.next()
            atom = AtomSymbol(name_tok.text, (), (), "constant",
                              tags=frozenset({"coupling"}))
            table.register(atom)
            couplings.append(atom.name)
            ts.expect(";")
        elif head.text == "lagrangian":
            ts.expect("=")
            start = ts.pos
            depth = 0
            while not (ts.peek().text == ";" and depth == 0):
                t = ts.peek()
                if t.kind == "eof":
                    raise ParseError("unterminated lagrangian", t.line, t.col)
                if t.text in ("(", "["):
                    depth += 1
                elif t.text in (")", "]"):
                    depth -= 1
                ts.next()
            sub = _Stream(ts.tokens[start:ts.pos] + [Token("eof", "", 0, 0)])
            lagrangian = ExpressionParser(table)._expr(sub)
            if sub.peek().kind != "eof":
                sub.error("trailing input in lagrangian")
            ts.expect(";")
        else:
            raise ParseError(f"unknown statement {head.text!r}", head.line, head.col)

    if lagrangian is None:
        raise ValidationError("missing lagrangian")
    if lagrangian.free_indices():
        raise ValidationError(
            f"lagrangian is not a scalar; free indices {sorted(lagrangian.free_indices())}")
    return ModelSpec(model_name, table, fields, constants, couplings, options,
                     lagrangian, source=text)


def emit_model(spec):
    """Render a ModelSpec back to model-file text."""
    lines = [f"model {spec.name};"]
    for key in sorted(spec.options):
        lines.append(f"option {key} {spec.options[key]};")
    for name in spec.fields + spec.constants:
        atom = spec.table.lookup(name)
        fake = Factor(atom, tuple((k, _decl_index_name(k, i)) for i, k in enumerate(atom.slots)))
        head = "field" if atom.klass == "field" else "const"
        attrs = []
        for tag, group in atom.symmetry:
            if tag == "anti" and len(group) == len(atom.slots) and len(group) > 2:
                attrs.append("totally-antisym")
            elif tag == "anti":
                nm = [fake.indices[g][1] for g in group]
                attrs.append(f"antisym({','.join(nm)})")
        if "jacobi" in atom.tags:
            attrs.append("jacobi")
        body = _dump_factor(fake)
        lines.append(f"{head} {body}" + ("".join(" " + a for a in attrs)) + ";")
    for name in spec.couplings:
        lines.append(f"coupling {name};")
    lines.append(f"lagrangian = {dump_expression(spec.lagrangian)};")
    return "\n".join(lines) + "\n"


def _decl_index_name(kind, position):
    pools = {SPACETIME: ("mu", "nu", "al", "be"), SPATIAL: ("i", "j", "k"),
             INTERNAL: ("I", "J", "K", "L")}
    return pools[kind][position % 4]
