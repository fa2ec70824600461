"""Experiment configuration: one JSON document, validated against ``SCHEMA``.

Matrices are row-major nested arrays; generator columns are "from" states
(see :mod:`mfbsde.chain`).  Example::

    {
      "problem": {
        "T": 1.0,
        "generator": {"segments": [{"t_start": 0.0, "A": [[-1, 1], [1, -1]]}]},
        "mu0": [0.5, 0.5],
        "terminal": [1.0, 1.0]
      },
      "driver": {"expr": "yp", "lipschitz": 1.0},
      "solver": {"steps": 200, "tol": 1e-9, "max_iter": 60, "variant": "y"},
      "verify": {"n_paths": 100000, "seed": 0}
    }

``compare`` describes the second (dominated) problem of a comparison: its
``terminal`` and ``driver`` replace those of ``problem``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import jsonschema

from .bsde import NAMED_DRIVERS, Driver, MeanFieldProblem, TerminalCondition
from .chain import Generator, validate_generator
from .dsl import DriverExpr, terminal_vector
from .errors import ConfigError, DimensionMismatch

_matrix = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}
_terminal = {
    "oneOf": [
        {"type": "array", "items": {"type": "number"}, "minItems": 2},
        {"type": "object", "required": ["expr"], "additionalProperties": False,
         "properties": {"expr": {"type": "string", "minLength": 1}}},
    ]
}
_driver = {
    "oneOf": [
        {"type": "object", "required": ["name"], "additionalProperties": False,
         "properties": {"name": {"enum": sorted(NAMED_DRIVERS)}}},
        {"type": "object", "required": ["expr", "lipschitz"], "additionalProperties": False,
         "properties": {"expr": {"type": "string", "minLength": 1},
                        "lipschitz": {"type": "number", "minimum": 0}}},
    ]
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["problem", "driver"],
    "additionalProperties": False,
    "properties": {
        "problem": {
            "type": "object",
            "required": ["T", "generator", "mu0", "terminal"],
            "additionalProperties": False,
            "properties": {
                "N": {"type": "integer", "minimum": 2},
                "T": {"type": "number", "exclusiveMinimum": 0},
                "generator": {
                    "type": "object",
                    "required": ["segments"],
                    "additionalProperties": False,
                    "properties": {
                        "segments": {
                            "type": "array",
                            "minItems": 1,
                            "items": {
                                "type": "object",
                                "required": ["t_start", "A"],
                                "additionalProperties": False,
                                "properties": {"t_start": {"type": "number"}, "A": _matrix},
                            },
                        }
                    },
                },
                "mu0": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "terminal": _terminal,
            },
        },
        "driver": _driver,
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "steps": {"type": "integer", "minimum": 2},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": {"type": "integer", "minimum": 1},
                "variant": {"enum": ["y", "zprime"]},
            },
        },
        "verify": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_paths": {"type": "integer", "minimum": 2},
                "seed": {"type": "integer", "minimum": 0},
                "x0": {"type": "integer", "minimum": 0},
            },
        },
        "compare": {
            "type": "object",
            "required": ["terminal", "driver"],
            "additionalProperties": False,
            "properties": {"terminal": _terminal, "driver": _driver,
                           "tol": {"type": "number", "exclusiveMinimum": 0}},
        },
        "converge": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "steps": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 2},
                "reference_steps": {"type": "integer", "minimum": 2},
            },
        },
        "oracle": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "K": {"type": "integer", "minimum": 1},
                "mode": {"enum": ["auto", "full", "lattice"]},
                "closed_form": {
                    "type": "object",
                    "required": ["name"],
                    "additionalProperties": False,
                    "properties": {
                        "name": {"enum": ["zero_driver", "pure_meanfield_exp", "linear_decay"]},
                        "c": {"type": "number"},
                    },
                },
            },
        },
        "output": {"type": "string"},
    },
}

DEFAULTS = {
    "solver": {"steps": 200, "tol": 1e-9, "max_iter": 60, "variant": "y"},
    "verify": {"n_paths": 100_000, "seed": 0},
    "converge": {"steps": [25, 50, 100, 200], "reference_steps": 2000},
    "oracle": {"K": 8, "mode": "auto"},
}


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path)


def validate_config(doc: dict) -> dict:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as e:
        best = jsonschema.exceptions.best_match([e]) or e
        raise ConfigError(best.message, _pointer(best.absolute_path)) from None
    return doc


def config_hash(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def build_generator(doc: dict) -> Generator:
    prob = doc["problem"]
    segs = prob["generator"]["segments"]
    gen = validate_generator([s["A"] for s in segs], prob["T"], starts=[s["t_start"] for s in segs])
    if "N" in prob and prob["N"] != gen.N:
        raise ConfigError(f"N={prob['N']} but generator is {gen.N}x{gen.N}", "/problem/N")
    return gen


def build_terminal(entry, N: int, pointer: str) -> TerminalCondition:
    if isinstance(entry, dict):
        return TerminalCondition.markovian(terminal_vector(entry["expr"], N))
    if len(entry) != N:
        raise ConfigError(f"terminal vector has {len(entry)} entries, expected {N}", pointer)
    return TerminalCondition.markovian(entry)


def build_driver(entry: dict, gen: Generator) -> Driver:
    if "name" in entry:
        return NAMED_DRIVERS[entry["name"]]()
    return DriverExpr.parse(entry["expr"], entry["lipschitz"], gen.N).to_driver(gen)


@dataclass
class Experiment:
    doc: dict
    problem: MeanFieldProblem
    second: MeanFieldProblem | None

    def section(self, name: str) -> dict:
        out = dict(DEFAULTS.get(name, {}))
        out.update(self.doc.get(name, {}))
        return out


def load_experiment(doc: dict) -> Experiment:
    validate_config(doc)
    gen = build_generator(doc)
    N = gen.N
    if len(doc["problem"]["mu0"]) != N:
        raise ConfigError(f"mu0 has {len(doc['problem']['mu0'])} entries, expected {N}", "/problem/mu0")
    try:
        p = MeanFieldProblem(gen, doc["problem"]["mu0"],
                             build_terminal(doc["problem"]["terminal"], N, "/problem/terminal"),
                             build_driver(doc["driver"], gen))
        second = None
        if "compare" in doc:
            c = doc["compare"]
            second = p.with_(xi=build_terminal(c["terminal"], N, "/compare/terminal"),
                             f=build_driver(c["driver"], gen))
    except DimensionMismatch as e:
        raise ConfigError(str(e)) from None
    return Experiment(doc, p, second)


def read_config(path) -> dict:
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON: {e.msg} (line {e.lineno}, column {e.colno})") from None
