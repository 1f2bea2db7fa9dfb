"""JSON schema and defaults for experiment configs."""
from __future__ import annotations

import copy
import math
from dataclasses import asdict

import jsonschema

from .solver import SolverConfig

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int_pos = {"type": "integer", "minimum": 1}

GRID_GEOMETRY = {
    "type": "object",
    "additionalProperties": False,
    "required": ["type", "points", "metric"],
    "properties": {
        "type": {"const": "grid"},
        "points": {"type": "array", "items": {"type": "integer", "minimum": 8}, "minItems": 2, "maxItems": 6},
        "periods": {"type": "array", "items": _pos},
        "metric": {"enum": ["flat", "conformally_flat", "negative_torus", "perturbed"]},
        "amplitude": _num,
        "axis": {"type": "integer", "minimum": 0},
        "max_mode": _int_pos,
    },
}

PRODUCT_GEOMETRY = {
    "type": "object",
    "additionalProperties": False,
    "required": ["type", "n", "L"],
    "properties": {
        "type": {"const": "product"},
        "n": {"type": "integer", "minimum": 3},
        "L": _pos,
        "m": {"type": "integer", "minimum": 16, "multipleOf": 2},
        "method": {"enum": ["spectral", "fd4"]},
    },
}

SOLVER = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "newton_tol": _pos, "max_newton": _int_pos, "descent_steps": {"type": "integer", "minimum": 0},
        "multistart_count": {"type": "integer", "minimum": 0}, "seed": {"type": "integer", "minimum": 0},
        "descent_tol": _pos, "dedup_tol": _pos, "init_amplitude": _pos, "init_max_mode": _int_pos,
    },
}

H_SAMPLES = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "count": _int_pos, "amplitude": _pos, "max_mode": _int_pos, "modes": _int_pos, "mean": _num,
    },
}

CHECKS = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "max_abs_scalar": _pos, "min_order": _num, "adjoint_rel_error": _pos, "psi_rel_error": _pos,
        "cotton_min_order": _num, "residual": _pos, "volume": _pos, "multistart_spread": _pos,
        "phi_diagnostic": _pos, "bifurcation_L": _pos, "energy_margin": _num, "relative_error": _pos,
        "linearity": _pos, "min_law_rel": _pos, "vol_quantity": _pos,
        "gap_order": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
        "min_slack": _num, "uniqueness_ratio": _pos, "uniqueness_at_one": {"type": "number", "minimum": 0},
    },
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "yamabe_lab experiment",
    "type": "object",
    "additionalProperties": False,
    "required": ["kind", "geometry"],
    "properties": {
        "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
        "kind": {"enum": ["curvature", "solve", "branch", "derivative", "identities", "localmax"]},
        "seed": {"type": "integer", "minimum": 0},
        "geometry": {"oneOf": [GRID_GEOMETRY, PRODUCT_GEOMETRY]},
        "solver": SOLVER,
        "h_samples": H_SAMPLES,
        "t_list": {"type": "array", "items": _pos, "minItems": 1},
        "measure": {"type": "array", "items": {"enum": ["scalar", "order", "adjoint", "psi", "cotton"]}},
        "resolutions": {"type": "array", "items": {"type": "integer", "minimum": 8}, "minItems": 2},
        "pairs": _int_pos,
        "psi_samples": _int_pos,
        "L_range": {"type": "array", "items": _pos, "minItems": 2, "maxItems": 2},
        "L_eval": _pos,
        "orbit_samples": _int_pos,
        "random_factors": {"type": "integer", "minimum": 0},
        "linearity_coefficients": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
        "write_phi": {"type": "boolean"},
        "checks": CHECKS,
        "outputs": {
            "type": "object", "additionalProperties": False,
            "properties": {"dir": {"type": "string"}},
        },
    },
}

MANIFEST_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "yamabe_lab suite manifest",
    "type": "object",
    "additionalProperties": False,
    "required": ["experiments"],
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "experiments": {"type": "array", "items": {"type": "string"}},
    },
}

_GRID_ONLY = {"curvature", "solve", "identities"}
_PRODUCT_ONLY = {"branch"}


class ConfigError(ValueError):
    pass


def validate(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {exc.message}") from None
    gtype = cfg["geometry"]["type"]
    if cfg["kind"] in _GRID_ONLY and gtype != "grid":
        raise ConfigError(f"kind {cfg['kind']!r} needs a grid geometry")
    if cfg["kind"] in _PRODUCT_ONLY and gtype != "product":
        raise ConfigError(f"kind {cfg['kind']!r} needs a product geometry")
    t = cfg.get("t_list")
    if t is not None and list(t) != sorted(t, reverse=True):
        raise ConfigError("t_list must be decreasing")
    if gtype == "grid":
        geo = cfg["geometry"]
        if "periods" in geo and len(geo["periods"]) != len(geo["points"]):
            raise ConfigError("geometry/periods must match geometry/points")
        if any(p % 2 for p in geo["points"]):
            raise ConfigError("geometry/points must be even")
    try:
        SolverConfig(**cfg.get("solver", {}))
    except ValueError as exc:
        raise ConfigError(f"solver: {exc}") from None


def validate_manifest(manifest: dict) -> None:
    try:
        jsonschema.validate(manifest, MANIFEST_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"manifest: {exc.message}") from None


def with_defaults(cfg: dict) -> dict:
    """Copy of ``cfg`` with every default the runner would use written out."""
    out = copy.deepcopy(cfg)
    out.setdefault("name", cfg["kind"])
    out.setdefault("seed", 0)
    out["solver"] = {**asdict(SolverConfig()), **cfg.get("solver", {})}
    out.setdefault("checks", {})
    kind, gtype = cfg["kind"], cfg["geometry"]["type"]
    if gtype == "product":
        out["geometry"] = {"m": 128, "method": "spectral", **cfg["geometry"]}
    else:
        out["geometry"] = {"amplitude": 0.2, "axis": 0, **cfg["geometry"]}
    if kind == "curvature":
        out.setdefault("measure", ["scalar"])
        out.setdefault("resolutions", [16, 32, 64])
        out.setdefault("pairs", 10)
        out.setdefault("psi_samples", 1000)
    if kind == "solve":
        out.setdefault("write_phi", True)
    if kind == "derivative":
        if gtype == "product":
            out.setdefault("t_list", [4e-3, 2e-3, 1e-3])
            out.setdefault("orbit_samples", 16)
            out["h_samples"] = {"count": 1, "amplitude": 0.1, "modes": 3, "mean": 0.2, **cfg.get("h_samples", {})}
        else:
            out.setdefault("t_list", [4e-4, 2e-4, 1e-4])
            out.setdefault("linearity_coefficients", [0.7, -0.4])
            out["h_samples"] = {"count": 5, "amplitude": 1.0, "max_mode": 2, **cfg.get("h_samples", {})}
    if kind == "identities":
        out.setdefault("t_list", [1e-2, 1e-3, 1e-4])
        out.setdefault("random_factors", 20)
        out["h_samples"] = {"count": 1, "amplitude": 0.1, "max_mode": 2, **cfg.get("h_samples", {})}
    if kind == "localmax":
        if gtype == "product":
            out.setdefault("orbit_samples", 16)
            out["h_samples"] = {"count": 3, "amplitude": 0.1, "modes": 3, "mean": 0.2, **cfg.get("h_samples", {})}
        else:
            out["h_samples"] = {"count": 3, "amplitude": 1.0, "max_mode": 2, **cfg.get("h_samples", {})}
    if kind == "branch":
        geo = out["geometry"]
        out.setdefault("L_range", [math.pi / math.sqrt(geo["n"] - 2), geo["L"]])
    return out
