"""End-to-end analysis: parse -> split -> Legendre -> stabilize ->
classify -> reducibility -> DOF -> extended action -> equations of motion
-> gauge generator."""

from __future__ import annotations

import importlib.resources
import os
from dataclasses import dataclass, field

from .dsl import parse_model
from .engine import (classify, count_dof, detect_reducibility, equations_of_motion,
                     extended_action, stabilize)
from .gauge import castellani_generator, gauge_transformations, merged_transformations
from .legendre import (canonical_hamiltonian, compute_momenta, hessian_rank,
                       primary_constraints, primary_hamiltonian)
from .split import split_3plus1

BUILTIN_MODELS = ("bf_ym", "s1_bb", "s2_topological", "martellini", "maxwell",
                  "yang_mills_2nd_order", "free_scalar")


@dataclass
class RunConfig:
    model: str = "bf_ym"
    fmt: str = "text"
    ansatz_degree: int = 2
    ansatz_deriv: int = 1
    seed: int = 0
    samples: int = 10
    max_stages: int = 10
    out: str = None

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("sample count must be >= 1")
        if self.max_stages < 1:
            raise ValueError("stage cutoff must be >= 1")


@dataclass
class AnalysisReport:
    config: RunConfig
    spec: object
    decomposed: object
    momenta: list
    hessian_rank_total: int
    hessian_rank_per_generator: int
    primaries: list
    h_canonical: object
    h_primary: object
    stabilization: object
    classification: object
    reducibilities: list
    dof_per_generator: int
    independent_first_class: int
    second_class_count: int
    extended: object
    equations: list
    gauge_generator: object
    transformations: dict
    merged: dict

    @property
    def constraints(self):
        return list(self.classification.first_class) + list(self.classification.second_class)


def load_model_text(source):
    """Resolve a builtin name or a path to model-file text."""
    if source in BUILTIN_MODELS or (source + ".model") in [
            p.name for p in (importlib.resources.files("diracforge") / "models").iterdir()]:
        ref = importlib.resources.files("diracforge") / "models" / f"{source}.model"
        if ref.is_file():
            return ref.read_text(), source
    if os.path.exists(source):
        with open(source) as fh:
            return fh.read(), os.path.splitext(os.path.basename(source))[0]
    raise FileNotFoundError(f"model source {source!r} is neither builtin nor a file")


def analyze(config):
    text, name = load_model_text(config.model)
    spec = parse_model(text, name)
    dm = split_3plus1(spec)
    defs = compute_momenta(dm)
    _, rank_total, rank_pg = hessian_rank(
        dm, seeds=[config.seed + k for k in range(5)])
    prim = primary_constraints(defs)
    h_c = canonical_hamiltonian(dm, defs)
    h_p = primary_hamiltonian(h_c, prim, dm)
    stab = stabilize(prim, h_p, dm, max_stages=config.max_stages)
    cls = classify(stab.constraints, dm,
                   degree=config.ansatz_degree, deriv_order=config.ansatz_deriv,
                   sample_seeds=[config.seed + k for k in range(5)],
                   samples=config.samples)
    rels = detect_reducibility(cls, stab.constraints, dm,
                               deriv_order=config.ansatz_deriv)
    dof, f_ind, s_count = count_dof(dm, cls, rels)
    ext = extended_action(dm, defs, h_p, stab, cls)
    eom = equations_of_motion(dm, defs, ext)
    gen = castellani_generator(cls, dm)
    trans = gauge_transformations(gen, dm, defs)
    merged = merged_transformations(trans, gen, dm)
    return AnalysisReport(
        config=config, spec=spec, decomposed=dm, momenta=defs,
        hessian_rank_total=rank_total, hessian_rank_per_generator=rank_pg,
        primaries=prim, h_canonical=h_c, h_primary=h_p, stabilization=stab,
        classification=cls, reducibilities=rels, dof_per_generator=dof,
        independent_first_class=f_ind, second_class_count=s_count,
        extended=ext, equations=eom, gauge_generator=gen,
        transformations=trans, merged=merged)
