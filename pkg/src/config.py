"""
Configuración de corridas: archivos JSON validados contra SCHEMA, valores por
defecto y los constructores que convierten una config validada en red, modelo,
grilla y ventana.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from jsonschema import Draft7Validator

from src.errors import ConfigError
from src.lattice import KGrid, Lattice, make_lattice
from src.models import DiracPW, ModelSpec, SchrodingerPW, make_basis, make_explicit, make_potential

logger = logging.getLogger(__name__)

NUMBER_LIST = {"type": "array", "items": {"type": "number"}, "minItems": 1, "maxItems": 3}

SCHEMA = {
    "type": "object",
    "properties": {
        "lattice": {
            "type": "object",
            "properties": {
                "generators": {
                    "oneOf": [
                        {"type": "number"},
                        {"type": "array", "items": NUMBER_LIST, "minItems": 1, "maxItems": 3},
                    ]
                },
            },
            "required": ["generators"],
            "additionalProperties": False,
        },
        "model": {
            "type": "object",
            "properties": {
                "variant": {"type": "string", "enum": ["schrodinger", "dirac", "explicit"]},
                "cutoff": {"type": "number", "exclusiveMinimum": 0},
                "kinetic_prefactor": {"type": "number", "exclusiveMinimum": 0},
                "mass": {"type": "number"},
                "potential": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "properties": {
                            "m": {"type": "array", "items": {"type": "integer"}, "minItems": 1, "maxItems": 3},
                            "re": {"type": "number"},
                            "im": {"type": "number"},
                        },
                        "required": ["m"],
                        "additionalProperties": False,
                    },
                },
                "family": {"type": "string"},
                "params": {"type": "object"},
            },
            "required": ["variant"],
            "additionalProperties": False,
            "allOf": [
                {"if": {"properties": {"variant": {"const": "explicit"}}},
                 "then": {"required": ["family"]},
                 "else": {"required": ["cutoff"]}},
            ],
        },
        "grid": {
            "type": "object",
            "properties": {"shape": {"type": "array", "items": {"type": "integer"}, "minItems": 1, "maxItems": 3}},
            "required": ["shape"],
            "additionalProperties": False,
        },
        "window": {
            "type": "object",
            "properties": {"first": {"type": "integer"}, "count": {"type": "integer", "minimum": 1}},
            "required": ["first", "count"],
            "additionalProperties": False,
        },
        "options": {
            "type": "object",
            "properties": {
                "count": {"type": "integer", "minimum": 1},
                "stencil_order": {"type": "integer", "enum": [2, 4]},
                "correct": {"type": "boolean"},
                "cells": {"type": "integer", "minimum": 1},
                "resolution": {"type": "integer", "minimum": 1},
                "random_gauge": {"type": "boolean"},
                "kramers_tolerance": {"type": "number", "exclusiveMinimum": 0},
                "save_blocks": {"type": "boolean"},
                "path": {
                    "type": "object",
                    "properties": {
                        "start": NUMBER_LIST,
                        "stop": NUMBER_LIST,
                        "points": {"type": "integer", "minimum": 2},
                    },
                    "required": ["start", "stop"],
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "output": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
    },
    "required": ["lattice", "model", "grid"],
    "additionalProperties": False,
}

DEFAULT_OPTIONS = {
    "stencil_order": 2,
    "correct": True,
    "cells": 8,
    "resolution": 16,
    "random_gauge": False,
    "kramers_tolerance": 1e-8,
    "save_blocks": True,
}


def _location(path) -> str:
    location = ""
    for part in path:
        location += f"[{part}]" if isinstance(part, int) else (f".{part}" if location else str(part))
    return location or "<root>"


def validate_config(data: dict):
    """Lanza ConfigError en la primera violación del esquema (orden determinista)"""
    errors = sorted(Draft7Validator(SCHEMA).iter_errors(data), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        error = errors[0]
        raise ConfigError(error.message, location=_location(error.absolute_path))


@dataclass(eq=False)
class RunSetup:
    config: dict
    lattice: Lattice
    model: ModelSpec
    grid: KGrid
    window: tuple[int, int] | None
    options: dict = field(default_factory=dict)
    seed: int = 0
    output: str = "runs"


def build_lattice(config: dict) -> Lattice:
    return make_lattice(config["lattice"]["generators"])


def build_model(config: dict, lattice: Lattice) -> ModelSpec:
    block = config["model"]
    variant = block["variant"]
    if variant == "explicit":
        return make_explicit(lattice, block["family"], block.get("params"))
    potential = make_potential(block.get("potential", []), lattice.dim)
    if variant == "dirac":
        basis = make_basis(lattice, block["cutoff"], spin_components=4)
        return DiracPW(basis=basis, potential=potential, mass=float(block.get("mass", 1.0)))
    basis = make_basis(lattice, block["cutoff"])
    return SchrodingerPW(basis=basis, potential=potential, kinetic_prefactor=float(block.get("kinetic_prefactor", 0.5)))


def build_grid(config: dict, lattice: Lattice) -> KGrid:
    return KGrid(lattice=lattice, shape=tuple(config["grid"]["shape"]))


def build_run(config: dict) -> RunSetup:
    """Valida ``config`` y construye los objetos que necesita un comando; los chequeos físicos fallan con ubicación"""
    validate_config(config)
    lattice = build_lattice(config)
    model = build_model(config, lattice)
    grid = build_grid(config, lattice)
    window = None
    if "window" in config:
        window = (config["window"]["first"], config["window"]["count"])
        if model.variant != "dirac" and window[0] < 0:
            raise ConfigError(f"window.first debe ser >= 0, se recibió {window[0]}", location="window.first")
    if model.variant == "dirac" and "mass" not in config["model"]:
        logger.info("No se indicó la masa de Dirac, se usa 1")
    options = {**DEFAULT_OPTIONS, **config.get("options", {})}
    return RunSetup(config=config, lattice=lattice, model=model, grid=grid, window=window, options=options,
                    seed=int(config.get("seed", 0)), output=config.get("output", "runs"))


def load_config(path) -> RunSetup:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigError(f"no se encontró el archivo de configuración: {path}", location="<file>") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"JSON inválido en la línea {e.lineno}: {e.msg}", location="<file>") from e
    if not isinstance(data, dict):
        raise ConfigError("la configuración debe ser un objeto JSON", location="<root>")
    logger.info(f"Configuración cargada desde {path}")
    return build_run(data)
