"""Run configuration: YAML documents checked against a JSON schema.

Powers are linear and noise levels are absolute; ``snr_db`` is ``P/N0`` in
decibels and sets the power of any prior that does not state its own. It is
converted once, here, at parse time.

Every problem is reported as :class:`~mimocdma.errors.ConfigError` naming the
offending key and, when the document came from text, its line.
"""

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import priors as pr
from .errors import ConfigError

VERSION = 1

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}

_PRIOR = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["gaussian", "qpsk", "bpsk", "discrete"]},
        "power": {"type": "number", "minimum": 0},
        "points": {"type": "array", "minItems": 1,
                   "items": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}},
        "probs": {"type": "array", "items": {"type": "number", "minimum": 0}},
    },
}

_GRID = {
    "oneOf": [
        {"type": "array", "items": _NUM},
        {"type": "object", "additionalProperties": False, "required": ["start", "stop", "step"],
         "properties": {"start": _NUM, "stop": _NUM, "step": _POS}},
    ]
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["version", "scenario"],
    "properties": {
        "version": {"const": VERSION},
        "scenario": {
            "type": "object",
            "additionalProperties": False,
            "required": ["scheme", "n_rx", "antennas", "true_prior"],
            "properties": {
                "scheme": {"enum": ["STS", "TS"]},
                "beta": {"type": "number", "minimum": 0},
                "n_rx": _POS_INT,
                "antennas": _POS_INT,
                "snr_db": _NUM,
                "n0": _POS,
                "nt0": {"oneOf": [_POS, {"type": "null"}]},
                "true_prior": _PRIOR,
                "post_prior": {"oneOf": [_PRIOR, {"type": "null"}]},
                "channel_samples": _POS_INT,
                "sampler": {"enum": ["mc", "qmc"]},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"beta": _GRID, "snr_db": _GRID},
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "damping": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "tol": _POS,
                "max_iter": _POS_INT,
                "seed": {"type": "integer", "minimum": 0},
                "dedup_tol": _POS,
                "integrator": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "method": {"enum": ["gauss-hermite", "monte-carlo", "quasi-monte-carlo"]},
                        "order": _POS_INT,
                        "samples": _POS_INT,
                    },
                },
            },
        },
        "simulation": {
            "type": "object",
            "additionalProperties": False,
            "required": ["K", "L"],
            "properties": {
                "K": _POS_INT,
                "L": _POS_INT,
                "trials": _POS_INT,
                "detector": {"enum": ["auto", "lmmse", "exact"]},
                "chip_law": {"enum": ["qpsk", "gaussian"]},
                "fresh": {"type": "boolean"},
                "user": {"oneOf": [{"type": "integer", "minimum": 0}, {"const": "pooled"}]},
                "max_order": {"type": "integer", "minimum": 1, "maximum": 4},
                "write_trials": {"type": "boolean"},
            },
        },
        "validate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "z_max": _POS,
                "rel_tol": _POS,
                "eig_samples": _POS_INT,
                "lmmse_check": {"type": "boolean"},
                "prediction": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"n0": _POS, "nt0": _POS, "snr_db": _NUM},
                },
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directory": {"type": "string"},
                "formats": {"type": "array", "items": {"enum": ["csv", "json", "png"]}},
            },
        },
    },
}

DEFAULTS = {
    "scenario": {"beta": 1.0, "snr_db": 10.0, "n0": 1.0, "nt0": None, "post_prior": None,
                 "channel_samples": 2000, "sampler": "qmc"},
    "sweep": {},
    "solver": {"damping": 0.5, "tol": 1e-9, "max_iter": 5000, "seed": 0, "dedup_tol": 1e-5,
               "integrator": {"method": "gauss-hermite", "order": 64, "samples": 4096}},
    "simulation": {"trials": 10000, "detector": "auto", "chip_law": "qpsk", "fresh": True,
                   "user": 0, "max_order": 2, "write_trials": False},
    "validate": {"z_max": 3.0, "rel_tol": 1e-2, "eig_samples": 100000, "lmmse_check": True,
                 "prediction": {}},
    "output": {"directory": "out", "formats": ["csv"]},
}


@dataclass
class RunConfig:
    """Validated configuration with defaults filled in.

    ``data`` is the normalised document; ``source`` is the file it came from.
    """

    data: dict
    source: str = "<string>"

    def __getitem__(self, key):
        return self.data[key]

    def __contains__(self, key):
        return key in self.data

    @property
    def present(self):
        """Blocks that appeared in the original document."""
        return self.data["_present"]

    def canonical(self):
        body = {k: v for k, v in self.data.items() if k != "_present"}
        return json.dumps(body, sort_keys=True, separators=(",", ":"))

    def hash(self):
        """Short SHA-256 digest of the normalised configuration."""
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:12]

    def with_seed(self, seed):
        data = json.loads(json.dumps(self.data))
        data["solver"]["seed"] = int(seed)
        return RunConfig(data, self.source)


def _line_map(text):
    """Map dotted key paths to 1-based line numbers using the YAML node tree."""
    lines = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return lines

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                p = f"{path}.{k.value}" if path else str(k.value)
                lines[p] = k.start_mark.line + 1
                walk(v, p)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                p = f"{path}[{i}]"
                lines[p] = v.start_mark.line + 1
                walk(v, p)

    if root is not None:
        walk(root, "")
    return lines


def _dotted(path):
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


def _merge(defaults, given):
    out = dict(defaults)
    for k, v in given.items():
        out[k] = _merge(defaults[k], v) if isinstance(v, dict) and isinstance(defaults.get(k), dict) else v
    return out


def parse(text, source="<string>"):
    """Parse and validate a YAML configuration document."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"{source}: invalid YAML: {getattr(exc, 'problem', exc)}",
                          line=None if mark is None else mark.line + 1) from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: the document must be a mapping")
    lines = _line_map(text)
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.path), list(map(str, e.path))))
    if errors:
        err = errors[0]
        key = _dotted(err.path)
        if err.validator == "additionalProperties":
            extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
            key = f"{key}.{extra[0]}" if key else extra[0]
            msg = f"unknown key '{extra[0]}'"
        elif err.validator == "required":
            msg = err.message
        else:
            msg = f"invalid value: {err.message}"
        probe, line = key, lines.get(key)
        while line is None and "." in probe:
            probe = probe.rsplit(".", 1)[0]
            line = lines.get(probe)
        raise ConfigError(f"{source}: {msg}", key=key or None, line=line)
    data = {k: _merge(DEFAULTS.get(k, {}), v) if isinstance(v, dict) else v for k, v in doc.items()}
    for k, v in DEFAULTS.items():
        data.setdefault(k, json.loads(json.dumps(v)))
    data["_present"] = sorted(doc)
    cfg = RunConfig(data, source)
    _check_semantics(cfg, lines)
    return cfg


def load(path):
    """Read and validate a configuration file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse(text, str(path))


def _check_semantics(cfg, lines):
    for name in ("true_prior", "post_prior"):
        spec = cfg["scenario"][name]
        if spec is None:
            continue
        key = f"scenario.{name}"
        try:
            build_prior(spec, 1.0)
        except ValueError as exc:
            raise ConfigError(f"{cfg.source}: {exc}", key=key, line=lines.get(key)) from None
    for block in ("beta", "snr_db"):
        spec = cfg["sweep"].get(block)
        if spec is not None and isinstance(spec, dict) and spec["stop"] < spec["start"]:
            key = f"sweep.{block}"
            raise ConfigError(f"{cfg.source}: grid stop is below start", key=key, line=lines.get(key))


# ---------------------------------------------------------------------------
# builders


def power_from_snr(snr_db, n0):
    """Linear symbol power for ``P/N0 = snr_db`` decibels."""
    return float(n0 * 10.0 ** (snr_db / 10.0))


def build_prior(spec, default_power):
    """Construct a :class:`~mimocdma.priors.Prior` from a config mapping."""
    P = float(spec.get("power", default_power))
    kind = spec["kind"]
    if kind == "gaussian":
        return pr.gaussian(P)
    if kind == "qpsk":
        return pr.qpsk(P)
    if kind == "bpsk":
        return pr.bpsk(P)
    if "points" not in spec:
        raise ValueError("a discrete prior needs 'points'")
    pts = np.array([complex(a, b) for a, b in spec["points"]])
    probs = spec.get("probs")
    if probs is not None and len(probs) != pts.size:
        raise ValueError("'probs' must have one entry per point")
    prior = pr.discrete(pts, probs)
    if "power" in spec:
        # explicit power rescales the constellation
        prior = pr.discrete(pts * np.sqrt(P / max(prior.P, 1e-300)), probs)
    return prior


def grid(spec):
    """Expand a grid spec (list, or start/stop/step inclusive of stop) to floats."""
    if spec is None:
        return None
    if isinstance(spec, list):
        return [float(v) for v in spec]
    n = int(np.floor((spec["stop"] - spec["start"]) / spec["step"] + 1e-9)) + 1
    return [float(np.round(spec["start"] + i * spec["step"], 12)) for i in range(max(n, 0))]
