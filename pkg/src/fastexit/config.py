"""Experiment configuration: schema, validation, resolution, and system building.

Configs are single JSON documents.  Validation is schema-based; resolution
materializes every default into the returned copy, so the config written next
to the results re-validates and re-runs to the same outputs.  rho_bar = inf
is encoded as the string "inf" (JSON has no infinity literal).
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np
from jsonschema import Draft202012Validator

from .coefficients import AveragedModel, CoefficientSet, make_coefficient_set
from .errors import ConfigError
from .noise import CovarianceSpectrumB, CovarianceSpectrumQ, make_b_spectrum, make_q_spectrum
from .operator import Field, SpectralOperator, build_neumann_laplacian_1d
from .solver import MultiscaleParams

_COEFF_SCHEMA = {"type": "object", "required": ["kind"], "properties": {"kind": {"type": "string"}}}
_SPECTRUM_SCHEMA = {"type": "object", "required": ["kind"], "properties": {"kind": {"type": "string"}}}
_LAW_SCHEMA = {
    "type": "object",
    "required": ["coeff", "exponent"],
    "properties": {"coeff": {"type": "number"}, "exponent": {"type": "number"}},
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["coefficients", "experiment"],
    "additionalProperties": False,
    "properties": {
        "operator": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "builder": {"enum": ["neumann_laplacian_1d"]},
                "n_modes": {"type": "integer", "minimum": 2},
                "grid_factor": {"type": "integer", "minimum": 2},
            },
        },
        "coefficients": {
            "type": "object",
            "required": ["f", "g", "sigma"],
            "additionalProperties": False,
            "properties": {"f": _COEFF_SCHEMA, "g": _COEFF_SCHEMA, "sigma": _COEFF_SCHEMA},
        },
        "noise": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "q_spectrum": _SPECTRUM_SCHEMA,
                "b_spectrum": _SPECTRUM_SCHEMA,
                "dimension": {"type": "integer", "minimum": 1},
                "e_sup_norms": {"type": ["array", "null"], "items": {"type": "number"}},
            },
        },
        "multiscale": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "eps": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
                "alpha_law": _LAW_SCHEMA,
                "beta_law": _LAW_SCHEMA,
                "rho_bar": {"anyOf": [{"type": "number", "minimum": 0}, {"const": "inf"}]},
                "delta0": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "t_final": {"type": "number", "exclusiveMinimum": 0},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "delta": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "experiment": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["check", "simulate", "average", "action", "quasipotential", "exit"]},
                "x0": {
                    "type": "object",
                    "required": ["kind"],
                    "properties": {"kind": {"enum": ["constant", "cosine_plus_constant", "modes"]}},
                },
                "domain": {
                    "type": "object",
                    "required": ["level"],
                    "properties": {
                        "kind": {"enum": ["quadratic"]},
                        "scale": {"type": "number", "exclusiveMinimum": 0},
                        "center": {"type": "number"},
                        "level": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
                "t_max": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "t_max_cap": {"type": "number", "exclusiveMinimum": 0},
                "rho_ball": {"type": ["number", "null"]},
                "y_values": {"type": "array", "items": {"type": "number"}},
                "horizons": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                "n_nodes": {"type": "integer", "minimum": 3},
                "path_file": {"type": ["string", "null"]},
                "nondegeneracy_floor": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "n_paths": {"type": "integer", "minimum": 1},
        "threads": {"type": "integer", "minimum": 1},
        "output_dir": {"type": "string"},
    },
}

DEFAULTS = {
    "operator": {"builder": "neumann_laplacian_1d", "n_modes": 16, "grid_factor": 4},
    "noise": {
        "q_spectrum": {"kind": "flat", "value": 1.0},
        "b_spectrum": {"kind": "flat", "value": 1.0},
        "dimension": 1,
        "e_sup_norms": None,
    },
    "multiscale": {
        "eps": [0.01],
        "alpha_law": {"coeff": 1.0, "exponent": 0.5},
        "beta_law": {"coeff": 1.0, "exponent": 0.5},
        "rho_bar": 1.0,
        "delta0": 1.0,
    },
    "solver": {"t_final": 1.0, "dt": 1e-3, "delta": 0.5},
    "seed": 12345,
    "n_paths": 100,
    "threads": 1,
    "output_dir": "results",
}

_EXPERIMENT_DEFAULTS = {
    "x0": {"kind": "constant", "value": 0.0},
    "t_max": None,
    "t_max_cap": 1e5,
    "rho_ball": None,
    "y_values": [0.25, 0.5, 1.0],
    "horizons": [2.0, 4.0, 8.0],
    "n_nodes": 200,
    "path_file": None,
    "nondegeneracy_floor": 1e-8,
}


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"not valid JSON: {exc}") from exc


def validate_config(raw: dict) -> None:
    validator = Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        path = ".".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(path, e.message)


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(raw: dict) -> dict:
    """Validate and materialize all defaults into a self-describing copy."""
    validate_config(raw)
    resolved = _merge(DEFAULTS, raw)
    if "domain" in resolved.get("experiment", {}):
        resolved["experiment"]["domain"] = _merge(
            {"kind": "quadratic", "scale": 1.0, "center": 0.0}, resolved["experiment"]["domain"]
        )
    resolved["experiment"] = _merge(_EXPERIMENT_DEFAULTS, resolved["experiment"])
    validate_config(resolved)
    return resolved


def config_hash(resolved: dict) -> str:
    return hashlib.sha256(json.dumps(resolved, sort_keys=True).encode()).hexdigest()


def parse_rho_bar(value) -> float:
    return math.inf if value == "inf" else float(value)


def rho_bar_limit(alpha_law: dict, beta_law: dict) -> float:
    """Limit of beta(eps)/alpha(eps) as eps -> 0 from the power laws."""
    pa, pb = alpha_law["exponent"], beta_law["exponent"]
    ca, cb = alpha_law["coeff"], beta_law["coeff"]
    if cb == 0:
        return 0.0
    if ca == 0:
        return math.inf
    if pb > pa:
        return 0.0
    if pb < pa:
        return math.inf
    return cb / ca


@dataclass
class BuiltSystem:
    """Everything the experiment drivers need, assembled from one config."""

    op: SpectralOperator
    cs: CoefficientSet
    spec_q: CovarianceSpectrumQ
    spec_b: CovarianceSpectrumB
    model: AveragedModel
    params_list: list[MultiscaleParams]
    x0: Field
    config: dict


def _build_x0(spec: dict, op: SpectralOperator) -> Field:
    try:
        kind = spec["kind"]
        if kind == "constant":
            return op.constant_field(float(spec["value"]))
        if kind == "cosine_plus_constant":
            amp, freq, offset = spec.get("amp", 1.0), spec.get("freq", 1), spec.get("offset", 0.0)
            return op.project(lambda xi: amp * np.cos(freq * np.pi * xi) + offset)
        coeffs = np.zeros(op.n_modes)
        vals = np.asarray(spec["coeffs"], dtype=float)
        coeffs[: len(vals)] = vals
        return Field(coeffs)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError("experiment.x0", str(exc)) from exc


def build_system(resolved: dict) -> BuiltSystem:
    op_cfg = resolved["operator"]
    if op_cfg["builder"] != "neumann_laplacian_1d":
        raise ConfigError("operator.builder", f"unknown builder {op_cfg['builder']!r}")
    op = build_neumann_laplacian_1d(op_cfg["n_modes"], op_cfg["grid_factor"])
    c = resolved["coefficients"]
    try:
        cs = make_coefficient_set(c["f"], c["g"], c["sigma"])
    except (ValueError, KeyError) as exc:
        raise ConfigError("coefficients", str(exc)) from exc
    try:
        spec_q = make_q_spectrum(resolved["noise"]["q_spectrum"], op.n_modes)
        spec_b = make_b_spectrum(resolved["noise"]["b_spectrum"])
    except (ValueError, KeyError) as exc:
        raise ConfigError("noise", str(exc)) from exc
    ms = resolved["multiscale"]
    rho = parse_rho_bar(ms["rho_bar"])
    model = AveragedModel(
        op=op, coeffs=cs, q_lambdas=spec_q.lambdas, b_thetas=spec_b.thetas,
        rho_bar=rho, delta0=ms["delta0"],
    )
    params_list = [
        MultiscaleParams.from_schedule(e, ms["alpha_law"], ms["beta_law"], rho) for e in ms["eps"]
    ]
    x0 = _build_x0(resolved["experiment"]["x0"], op)
    return BuiltSystem(
        op=op, cs=cs, spec_q=spec_q, spec_b=spec_b, model=model,
        params_list=params_list, x0=x0, config=resolved,
    )
