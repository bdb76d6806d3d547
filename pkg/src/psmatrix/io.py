"""On-disk formats: JSON input files, run records and CSV tables.

Complex numbers are written as ``[re, im]`` pairs; plain numbers are read as
real.  Every input file is validated against a JSON schema before use.
"""

import json
import math
import os
import tempfile
from datetime import datetime, timezone

import jsonschema
import numpy as np

from .core import PhasePoint
from .detector import DetectorModel, SchemeConfig
from .optimize import Bound, SearchSpec
from .states import KINDS, StateSpec

FORMAT_VERSION = "1"

__all__ = ["InputError", "FORMAT_VERSION", "load_json", "parse_state", "parse_points",
           "parse_detector", "parse_scheme", "parse_search", "parse_scan",
           "encode", "run_record", "write_text", "csv_text"]


class InputError(ValueError):
    """An input file failed to parse or validate."""


_COMPLEX = {"oneOf": [{"type": "number"},
                      {"type": "array", "items": {"type": "number"},
                       "minItems": 2, "maxItems": 2}]}
_COMPLEX_OR_LIST = {"anyOf": [_COMPLEX, {"type": "array", "items": _COMPLEX, "minItems": 1}]}
_NONNEG = {"type": "number", "minimum": 0}
_NONNEG_OR_LIST = {"anyOf": [_NONNEG, {"type": "array", "items": _NONNEG, "minItems": 1}]}

STATE_SCHEMA = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": list(KINDS)},
        "cutoff": {"type": "integer", "minimum": 1},
        "n": {"oneOf": [{"type": "integer", "minimum": 0},
                        {"type": "array", "items": {"type": "integer", "minimum": 0},
                         "minItems": 1}]},
        "beta": _COMPLEX_OR_LIST,
        "nbar": _NONNEG_OR_LIST,
        "r": {"type": "number"},
        "phi": {"type": "number"},
        "gamma": _COMPLEX,
        "modes": {"type": "integer", "minimum": 1},
        "parity": {"enum": [1, -1]},
        "lam": _COMPLEX,
        "betas": {"type": "array", "items": _COMPLEX_OR_LIST, "minItems": 1},
        "weights": {"type": "array", "items": _NONNEG, "minItems": 1},
    },
    "additionalProperties": False,
}

POINTS_SCHEMA = {
    "type": "object",
    "required": ["points"],
    "properties": {
        "points": {"type": "array", "minItems": 1, "items": {
            "type": "object", "required": ["alpha", "sigma"],
            "properties": {"alpha": _COMPLEX_OR_LIST, "sigma": _NONNEG_OR_LIST},
            "additionalProperties": False}},
        "tolerance": {"type": "number", "exclusiveMinimum": 0},
    },
    "additionalProperties": False,
}

DETECTOR_SCHEMA = {
    "type": "object",
    "required": ["eta"],
    "properties": {
        "eta": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "delta": _NONNEG,
        "chi": _NONNEG,
        "cutoff": {"type": "integer", "minimum": 1},
    },
    "additionalProperties": False,
}

SCHEME_SCHEMA = {
    "type": "object",
    "properties": {
        "t": _COMPLEX,
        "r": _COMPLEX,
        "lo_amplitudes": {"type": "array", "items": _COMPLEX, "minItems": 1},
        "points": {"type": "array", "items": _COMPLEX, "minItems": 1},
        "transmissivity": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "shots": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "resamples": {"type": "integer", "minimum": 100},
    },
    "oneOf": [{"required": ["t", "r", "lo_amplitudes"]}, {"required": ["points"]}],
    "additionalProperties": False,
}

_FIXED = {"type": "object", "additionalProperties": _COMPLEX_OR_LIST}

SEARCH_SCHEMA = {
    "type": "object",
    "required": ["criterion", "free"],
    "properties": {
        "criterion": {"type": "string"},
        "free": {"type": "array", "minItems": 1, "items": {
            "type": "object", "required": ["handle", "low", "high"],
            "properties": {"handle": {"type": "string"}, "low": {"type": "number"},
                           "high": {"type": "number"}},
            "additionalProperties": False}},
        "fixed": _FIXED,
        "strategy": {"enum": ["grid", "simplex", "grid_then_simplex"]},
        "grid_resolution": {"type": "integer", "minimum": 3},
        "max_iters": {"type": "integer", "minimum": 1},
        "restarts": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "phase_reduce": {"type": "boolean"},
    },
    "additionalProperties": False,
}

SCAN_SCHEMA = {
    "type": "object",
    "required": ["criterion", "axes"],
    "properties": {
        "criterion": {"type": "string"},
        "axes": {"type": "array", "minItems": 1, "maxItems": 2, "items": {
            "type": "object", "required": ["handle", "start", "stop", "num"],
            "properties": {"handle": {"type": "string"}, "start": {"type": "number"},
                           "stop": {"type": "number"},
                           "num": {"type": "integer", "minimum": 1}},
            "additionalProperties": False}},
        "fixed": _FIXED,
    },
    "additionalProperties": False,
}


def load_json(path, schema, what: str):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise InputError(f"{what} file {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{what} file {path}: line {exc.lineno}, column {exc.colno}: "
                         f"{exc.msg}") from exc
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for err in errors:
            where = "/".join(str(p) for p in err.absolute_path) or "<root>"
            lines.append(f"  {where}: {err.message}")
        raise InputError(f"{what} file {path} does not match the schema:\n" + "\n".join(lines))
    return data


def decode_complex(value):
    if isinstance(value, list):
        return complex(value[0], value[1])
    return complex(value)


def _decode_list(value):
    """Complex scalar, or list of complex values (a list of two numbers stays a scalar)."""
    if isinstance(value, list) and value and isinstance(value[0], list):
        return [decode_complex(v) for v in value]
    if isinstance(value, list) and len(value) != 2:
        return [decode_complex(v) for v in value]
    return decode_complex(value)


def parse_state(data: dict, cutoff: int | None = None) -> StateSpec:
    params = {}
    for key, value in data.items():
        if key in ("kind", "cutoff"):
            continue
        if key in ("beta", "gamma", "lam"):
            params[key] = _decode_list(value)
        elif key == "betas":
            params[key] = [_decode_list(v) for v in value]
        else:
            params[key] = value
    return StateSpec(data["kind"], params, cutoff if cutoff is not None else data.get("cutoff"))


def parse_points(data: dict) -> list:
    pts = []
    for p in data["points"]:
        alpha = p["alpha"]
        if isinstance(alpha, list) and alpha and isinstance(alpha[0], list):
            amps = [decode_complex(a) for a in alpha]
        elif isinstance(alpha, list) and len(alpha) != 2:
            amps = [decode_complex(a) for a in alpha]
        else:
            amps = [decode_complex(alpha)]
        pts.append(PhasePoint(amps, p["sigma"]))
    return pts


def parse_detector(data: dict) -> DetectorModel:
    return DetectorModel(data["eta"], data.get("delta", 0.0), data.get("chi", 0.0),
                         data.get("cutoff", 32))


def parse_scheme(data: dict, seed: int | None = None) -> SchemeConfig:
    shots = data.get("shots", 10 ** 6)
    seed = data.get("seed", 0) if seed is None else seed
    if "points" in data:
        return SchemeConfig.for_points([decode_complex(a) for a in data["points"]],
                                       data.get("transmissivity", 0.999), shots=shots, seed=seed)
    return SchemeConfig(decode_complex(data["t"]), decode_complex(data["r"]),
                        tuple(decode_complex(b) for b in data["lo_amplitudes"]),
                        shots=shots, seed=seed)


def _fixed(data):
    return {k: _decode_list(v) for k, v in data.get("fixed", {}).items()}


def parse_search(data: dict, seed: int | None = None) -> SearchSpec:
    spec = SearchSpec(
        data["criterion"],
        tuple(Bound(f["handle"], f["low"], f["high"]) for f in data["free"]),
        _fixed(data),
        data.get("strategy", "grid_then_simplex"),
        data.get("grid_resolution", 41),
        data.get("max_iters", 2000),
        data.get("seed", 0) if seed is None else seed,
        data.get("restarts", 3),
    )
    return spec.phase_reduced() if data.get("phase_reduce", False) else spec


def parse_scan(data: dict):
    axes = {a["handle"]: np.linspace(a["start"], a["stop"], a["num"]) for a in data["axes"]}
    return data["criterion"], axes, _fixed(data)


def encode(obj):
    """JSON-ready copy of ``obj`` with complex numbers as ``[re, im]`` and arrays as lists."""
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.ndarray):
        return encode(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, dict):
        return {str(k): encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [encode(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def run_record(command: str, state_spec, parameters: dict, outputs: dict, seed, version: str):
    return encode({
        "command": command,
        "state_spec": state_spec.to_dict() if state_spec is not None else None,
        "parameters": parameters,
        "outputs": outputs,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "tool_version": version,
        "seed": seed,
    })


def write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` atomically (temp file in the same directory, then rename)."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, ".17g")


def csv_text(header, rows, meta: dict) -> str:
    """CSV with ``# key: value`` metadata lines, a header row and 17-digit floats."""
    lines = [f"# format_version: {FORMAT_VERSION}"]
    lines += [f"# {k}: {v}" for k, v in meta.items()]
    lines.append(",".join(header))
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"
