"""Report serialization: text, JSON, and LaTeX, plus golden-report diffs.

The JSON schema is stable: top-level keys model,
phase_space_dim_per_generator, constraints, reducibilities, multipliers,
dof_per_generator, hamiltonians, equations_of_motion, gauge.  Expression
strings are canonical dumps in the model grammar, so a report can be
re-parsed against the model's symbol table.
"""

from __future__ import annotations

import json

from .atoms import INTERNAL, SPATIAL
from .dsl import dump_expression

SCHEMA_VERSION = 1


def report_to_dict(rep):
    stab = rep.stabilization
    d = {
        "schema": SCHEMA_VERSION,
        "model": rep.spec.name,
        "options": dict(rep.spec.options),
        "seed": rep.config.seed,
        "phase_space_dim_per_generator": rep.decomposed.phase_space_dim_per_generator(),
        "hessian_rank_per_generator": rep.hessian_rank_per_generator,
        "momenta": [
            {"momentum": m.momentum.name, "config": m.config.name,
             "definition": dump_expression(m.expression),
             "invertible": m.velocity_solution is not None}
            for m in rep.momenta],
        "primaries": [c.name for c in rep.primaries],
        "trace": [
            {"constraint": t.constraint, "stage": t.stage,
             "outcome": t.outcome, "detail": t.detail}
            for t in stab.trace],
        "constraints": [
            {"name": c.name, "stage": c.stage, "class": c.klass,
             "independent": c.independent, "source": c.source,
             "expression": dump_expression(c.expression),
             "components_per_generator": c.components_per_generator()}
            for c in rep.constraints],
        "first_class_per_generator": sum(
            c.components_per_generator() for c in rep.classification.first_class),
        "second_class_per_generator": rep.second_class_count,
        "independent_first_class_per_generator": rep.independent_first_class,
        "reducibilities": [
            {"frees": [n for _, n in r.frees],
             "operators": {n: dump_expression(e)
                           for n, e in sorted(r.operator_coefficients.items())},
             "witness": dump_expression(r.witness)}
            for r in rep.reducibilities],
        "multipliers": {
            name: (dump_expression(entry[2]) if entry[2] != "free" else "free")
            for name, entry in sorted(stab.multiplier_solutions.items())},
        "dof_per_generator": rep.dof_per_generator,
        "hamiltonians": {
            "canonical": dump_expression(rep.h_canonical),
            "primary": dump_expression(rep.h_primary.density),
            "extended_base": dump_expression(rep.extended.h_base),
            "extended": dump_expression(rep.extended.h_extended),
        },
        "extended_action_density": dump_expression(rep.extended.action_density),
        "equations_of_motion": [
            {"varied": e.varied, "lhs": e.lhs, "rhs": dump_expression(e.rhs)}
            for e in rep.equations],
        "gauge": {
            "generator": dump_expression(rep.gauge_generator.density),
            "parameters": [a.name for a, _, _ in rep.gauge_generator.parameters],
            "transformations": {
                name: dump_expression(e)
                for name, (fr, e) in sorted(rep.transformations.items())},
            "merged": {
                name: dump_expression(e)
                for name, (fr, e) in sorted(rep.merged.items())},
        },
    }
    return d


def to_json(rep):
    return json.dumps(report_to_dict(rep), indent=2, sort_keys=True) + "\n"


def to_text(rep):
    d = report_to_dict(rep)
    lines = []
    w = lines.append
    w(f"model: {d['model']}")
    w(f"phase space per generator: {d['phase_space_dim_per_generator']}")
    w(f"hessian rank per generator: {d['hessian_rank_per_generator']}")
    w("")
    w("momenta:")
    for m in d["momenta"]:
        inv = " (invertible)" if m["invertible"] else ""
        w(f"  {m['momentum']} := {m['definition']}{inv}")
    w("")
    w("stabilization:")
    for t in d["trace"]:
        detail = f" [{t['detail']}]" if t["detail"] else ""
        w(f"  stage {t['stage']}: {t['constraint']} -> {t['outcome']}{detail}")
    w("")
    w("constraints:")
    for c in d["constraints"]:
        w(f"  [{c['class']:>6}] {c['name']} (stage {c['stage']}, "
          f"{c['components_per_generator']}/gen) = {c['expression']}")
    w("")
    if d["reducibilities"]:
        w("reducibility relations:")
        for r in d["reducibilities"]:
            for n, e in r["operators"].items():
                w(f"  {n}: {e}")
            w("  == 0")
    else:
        w("reducibility relations: none")
    w("")
    w("multipliers:")
    for n, v in d["multipliers"].items():
        w(f"  {n} = {v}")
    w("")
    w(f"counting: ({d['phase_space_dim_per_generator']} - "
      f"2*{d['independent_first_class_per_generator']} - "
      f"{d['second_class_per_generator']})/2 = {d['dof_per_generator']} per generator")
    w("")
    w("hamiltonians:")
    for k in ("canonical", "primary", "extended_base", "extended"):
        w(f"  {k}: {d['hamiltonians'][k]}")
    w("")
    w("equations of motion:")
    for e in d["equations_of_motion"]:
        lhs = e["lhs"].replace("dot:", "d/dt ")
        if e["lhs"] == "constraint":
            w(f"  delta {e['varied']}: 0 = {e['rhs']}")
        else:
            w(f"  delta {e['varied']}: {lhs} = {e['rhs']}")
    w("")
    w("gauge generator: " + d["gauge"]["generator"])
    w("gauge transformations:")
    for n, e in d["gauge"]["transformations"].items():
        w(f"  delta0 {n} = {e}")
    w("merged transformations:")
    for n, e in d["gauge"]["merged"].items():
        w(f"  {n} -> {n} + ({e})")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# LaTeX


_GLYPHS = {
    "A0": r"A_{0}", "A": r"A", "B0": r"B_{0}", "B": r"B",
    "P_A0": r"\Pi^{0}", "P_A": r"\Pi", "P_B0": r"\Pi^{0\cdot}", "P_B": r"\Pi",
    "eta": r"\eta", "f": r"f", "kd": r"\delta", "phi": r"\phi",
}


def _latex_atom(f):
    name = f.atom.name
    if name.startswith("P_"):
        base = r"\Pi"
    elif name.startswith("lam"):
        base = r"\lambda"
    elif name.startswith("u_"):
        base = r"u"
    elif name.startswith("v_"):
        base = r"v"
    elif name.startswith("eps"):
        base = r"\epsilon"
    elif name == "eta":
        base = r"\eta"
    elif name == "kd":
        base = r"\delta"
    elif name == "f":
        base = r"f"
    else:
        base = name.rstrip("0")
        base = base if base else name
    lower, upper = [], []
    for kind, nm in f.indices:
        (upper if kind == INTERNAL else lower).append(nm)
    if name.endswith("0") and name not in ("A0",):
        lower.insert(0, "0")
    if name in ("A0", "B0"):
        lower.insert(0, "0")
    if name.startswith("P_") and f.atom.conjugate and f.atom.conjugate.endswith("0"):
        upper.insert(0, "0")
    sub = "{" + " ".join(lower) + "}" if lower else ""
    sup = "{" + " ".join(upper) + "}" if upper else ""
    out = base
    if sub:
        out += f"_{sub}"
    if sup:
        out += f"^{sup}"
    body = out
    for kind, nm in f.deriv:
        body = rf"\partial_{{{nm}}} {body}"
    if f.dot:
        body = rf"\dot{{{body}}}"
    return body


def _latex_monomial(m):
    parts = []
    coef = m.coef.dump().replace("*i", "i")
    if coef == "1" and (m.factors or m.scalars or m.delta is not None):
        coef = ""
    elif coef == "-1" and (m.factors or m.scalars):
        coef = "-"
    parts.append(coef)
    for name, power in m.scalars:
        nm = "g^{2}" if name == "g2" else name
        parts.append(nm if power == 1 else f"{nm}^{{{power}}}")
    for f in m.factors:
        parts.append(_latex_atom(f))
    if m.delta is not None:
        d = r"\delta^{3}(x-y)"
        for kind, nm in m.delta:
            d = rf"\partial_{{{nm}}} {d}"
        parts.append(d)
    return r"\, ".join(p for p in parts if p)


def latex_expression(e):
    if e.is_zero:
        return "0"
    out = _latex_monomial(e.terms[0])
    for m in e.terms[1:]:
        s = _latex_monomial(m)
        out += " - " + s[1:].lstrip() if s.startswith("-") else " + " + s
    return out


def to_latex(rep):
    d = report_to_dict(rep)
    lines = [r"% canonical analysis of " + d["model"],
             r"\begin{align*}"]
    for c in rep.constraints:
        glyph = {"first": r"\gamma", "second": r"\chi"}.get(c.klass, r"\phi")
        idx = "".join(n for _, n in c.frees)
        lines.append(rf"{glyph}^{{{idx}}} &= {latex_expression(c.expression)} \approx 0 \\")
    lines.append(rf"H_c &= {latex_expression(rep.h_canonical)} \\")
    lines.append(rf"H_E &= {latex_expression(rep.extended.h_extended)} \\")
    lines.append(rf"G &= {latex_expression(rep.gauge_generator.density)} \\")
    lines.append(r"\end{align*}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# diffs


def diff_report(report_dict, golden_dict):
    """Structured comparison of two report dictionaries.

    Returns a list of difference records; empty means the reports agree on
    every constraint, count, multiplier, Hamiltonian, and gauge output.
    """
    diffs = []

    def check(path, a, b):
        if a != b:
            diffs.append({"path": path, "report": a, "golden": b})

    for key in ("model", "phase_space_dim_per_generator", "dof_per_generator",
                "first_class_per_generator", "second_class_per_generator",
                "independent_first_class_per_generator",
                "hessian_rank_per_generator"):
        check(key, report_dict.get(key), golden_dict.get(key))

    mine = {c["name"]: c for c in report_dict.get("constraints", ())}
    gold = {c["name"]: c for c in golden_dict.get("constraints", ())}
    for name in sorted(set(mine) | set(gold)):
        a, b = mine.get(name), gold.get(name)
        if a is None or b is None:
            diffs.append({"path": f"constraints[{name}]",
                          "report": a and a["expression"],
                          "golden": b and b["expression"]})
            continue
        for fieldname in ("stage", "class", "expression"):
            check(f"constraints[{name}].{fieldname}", a[fieldname], b[fieldname])

    check("reducibilities", report_dict.get("reducibilities"),
          golden_dict.get("reducibilities"))
    check("multipliers", report_dict.get("multipliers"), golden_dict.get("multipliers"))
    check("hamiltonians", report_dict.get("hamiltonians"), golden_dict.get("hamiltonians"))
    check("equations_of_motion", report_dict.get("equations_of_motion"),
          golden_dict.get("equations_of_motion"))
    check("gauge", report_dict.get("gauge"), golden_dict.get("gauge"))
    return diffs
