"""Experiment configuration files.

A configuration is a YAML mapping::

    experiment: stabilize        # one of EXPERIMENTS
    seed: 0
    output_dir: out/stabilize
    model:    {nu: 1.0, lam: 2.5}
    spectral: {M: 32, a: 0.7853981633974483, b: 2.356194490192345, N_noise: 16}
    noise:    {power: 2.0, scale: 1.0}    # or {amplitudes: [...]}
    params:   {N: 16, beta: 1.0e-6}       # experiment specific, see PARAMS

Every field is checked before any computation; problems are reported as
:class:`ConfigError` carrying the dotted path of the offending field.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .dynamics import ModelParams
from .spectral import NoiseSpec, SpectralConfig

__all__ = [
    "EXPERIMENTS",
    "PARAMS",
    "OUTPUT_ENV",
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "set_field",
    "config_hash",
]

OUTPUT_ENV = "ACMIX_OUTPUT_DIR"

_POS = "positive"
_NONNEG = "nonnegative"

# name -> (kind, default, constraint); kind is int, float, bool, str or "opt_int"
PARAMS: dict[str, dict[str, tuple]] = {
    "steady_states": {
        "export_points": (int, 201, _POS),
    },
    "stabilize": {
        "N": (int, 16, _NONNEG),
        "beta": (float, 1e-6, _POS),
        "s": (float, 0.0, None),
        "t": (float, 1.0, None),
        "dt": (float, 1e-3, _POS),
        "path_amplitude": (float, 1.0, None),
        "z0": (str, "e1", ("e1", "random")),
    },
    "quasistatic": {
        "start": (int, 0, None),
        "end": (int, 1, None),
        "epsilon": (float, 0.05, _POS),
        "dt": (float, 1e-3, _POS),
        "tau_steps": (int, 64, _POS),
        "N": ("opt_int", None, _POS),
        "pole_rate": (float, 6.0, _POS),
        "save_every": (int, 10, _POS),
    },
    "irreducibility": {
        "target": (int, 1, None),
        "leg_epsilon": (float, 0.1, _POS),
        "pole_rate": (float, 6.0, _POS),
        "N": ("opt_int", None, _POS),
        "slots": (int, 20, _POS),
        "eps": (float, 0.1, _POS),
        "amplitude_scale": (float, 0.05, _NONNEG),
        "trials": (int, 200, _POS),
        "starts": (int, 5, _POS),
        "radius": (float, 3.0, _POS),
        "relax": (float, 10.0, _NONNEG),
        "dt": (float, 2e-3, _POS),
    },
    "rho_decay": {
        "N": (int, 8, _NONNEG),
        "beta": (float, 1e-6, _POS),
        "delta": (float, 0.25, _POS),
        "horizon_n": (int, 10, _POS),
        "ensemble": (int, 100, _POS),
        "dt": (float, 1e-3, _POS),
        "u0_amplitude": (float, 1.0, None),
    },
    "mixing": {
        "horizon": (float, 30.0, _POS),
        "ensemble": (int, 500, _POS),
        "gamma": (float, 0.05, _POS),
        "dt": (float, 2e-3, _POS),
        "sample_every": (float, 0.1, _POS),
        "u0_amplitude": (float, 2.0, None),
        "u0b_amplitude": (float, -2.0, None),
    },
    "moments": {
        "horizon": (float, 50.0, _POS),
        "ensemble": (int, 200, _POS),
        "gamma": (float, 0.05, _POS),
        "dt": (float, 2e-3, _POS),
        "sample_every": (float, 0.1, _POS),
        "u0_amplitude": (float, 2.0, None),
    },
}
EXPERIMENTS = tuple(PARAMS)

_MODEL = {"nu": (float, 1.0, _POS), "lam": (float, 2.5, None), "cubic": (bool, True, None)}
_SPECTRAL = {
    "M": (int, 32, _POS),
    "a": (float, math.pi / 4, None),
    "b": (float, 3 * math.pi / 4, None),
    "N_noise": (int, 16, _POS),
    "quad_points": ("opt_int", None, _POS),
}
_NOISE = {"power": (float, 2.0, None), "scale": (float, 1.0, None), "amplitudes": ("opt_list", None, None)}
_TOP = {"experiment", "seed", "output_dir", "model", "spectral", "noise", "params"}


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class ExperimentConfig:
    experiment: str
    model: ModelParams
    spectral: SpectralConfig
    noise: NoiseSpec
    params: dict
    output_dir: Path
    seed: int
    raw: dict = field(default_factory=dict, repr=False)


def _coerce(path: str, value, spec):
    kind, _, constraint = spec
    if kind == "opt_int":
        if value is None:
            return None
        kind = int
    if kind == "opt_list":
        if value is None:
            return None
        if not isinstance(value, list) or not value:
            raise ConfigError(path, "expected a non-empty list of numbers")
        return [_coerce(f"{path}[{i}]", v, (float, None, None)) for i, v in enumerate(value)]
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, "expected true or false")
        return value
    if kind is int:
        if isinstance(value, bool) or not (
            isinstance(value, int) or (isinstance(value, float) and value.is_integer())
        ):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        value = int(value)
    elif kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        value = float(value)
        if not math.isfinite(value):
            raise ConfigError(path, "must be finite")
    elif kind is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
    if constraint == _POS and not value > 0:
        raise ConfigError(path, "must be positive")
    if constraint == _NONNEG and value < 0:
        raise ConfigError(path, "must be nonnegative")
    if isinstance(constraint, tuple) and value not in constraint:
        raise ConfigError(path, f"must be one of {', '.join(constraint)}")
    return value


def _section(raw, name: str, schema: dict) -> dict:
    block = raw.get(name, {}) if isinstance(raw, dict) else None
    if block is None:
        block = {}
    if not isinstance(block, dict):
        raise ConfigError(name, "expected a mapping")
    unknown = sorted(set(block) - set(schema))
    if unknown:
        raise ConfigError(f"{name}.{unknown[0]}", "unknown field")
    return {key: _coerce(f"{name}.{key}", block.get(key, spec[1]), spec) for key, spec in schema.items()}


def parse_config(raw) -> ExperimentConfig:
    """Validate a parsed mapping and build the typed configuration."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a mapping")
    unknown = sorted(set(raw) - _TOP)
    if unknown:
        raise ConfigError(unknown[0], "unknown field")
    exp = raw.get("experiment")
    if exp not in PARAMS:
        raise ConfigError("experiment", f"must be one of {', '.join(EXPERIMENTS)}")
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed", "expected an unsigned integer")
    out = raw.get("output_dir", f"out/{exp}")
    if not isinstance(out, str) or not out:
        raise ConfigError("output_dir", "expected a path")

    m = _section(raw, "model", _MODEL)
    s = _section(raw, "spectral", _SPECTRAL)
    n = _section(raw, "noise", _NOISE)
    params = _section(raw, "params", PARAMS[exp])

    if not 0 <= s["a"] < math.pi:
        raise ConfigError("spectral.a", "must lie in [0, pi)")
    if not s["b"] > s["a"]:
        raise ConfigError("spectral.b", "must exceed spectral.a")
    if s["b"] > math.pi:
        raise ConfigError("spectral.b", "must not exceed pi")
    if s["quad_points"] is not None and s["quad_points"] < 2 * s["M"]:
        raise ConfigError("spectral.quad_points", "must be at least 2 M for exact dealiasing")
    if n["amplitudes"] is not None and len(n["amplitudes"]) != s["N_noise"]:
        raise ConfigError("noise.amplitudes", f"needs exactly N_noise={s['N_noise']} entries")
    for key in ("N",):
        if key in params and params[key] is not None and params[key] > s["N_noise"]:
            raise ConfigError(f"params.{key}", "must not exceed spectral.N_noise")
    if exp == "stabilize" and not params["t"] > params["s"]:
        raise ConfigError("params.t", "must exceed params.s")
    if exp == "rho_decay" and not params["delta"] < 0.5:
        raise ConfigError("params.delta", "must lie in (0, 1/2)")
    if exp == "quasistatic" and not params["epsilon"] <= 1:
        raise ConfigError("params.epsilon", "must lie in (0, 1]")
    if exp == "mixing" and params["ensemble"] < 100:
        raise ConfigError("params.ensemble", "must be at least 100")

    model = ModelParams(nu=m["nu"], lam=m["lam"], cubic=m["cubic"])
    spectral = SpectralConfig(M=s["M"], a=s["a"], b=s["b"], N_noise=s["N_noise"], quad_points=s["quad_points"])
    if n["amplitudes"] is not None:
        noise = NoiseSpec(np.array(n["amplitudes"]), seed=seed)
    else:
        noise = NoiseSpec.power_law(s["N_noise"], power=n["power"], scale=n["scale"], seed=seed)

    env = os.environ.get(OUTPUT_ENV)
    out_path = Path(env) if env else Path(out)
    return ExperimentConfig(exp, model, spectral, noise, params, out_path, seed, raw=copy.deepcopy(raw))


def load_config(path) -> ExperimentConfig:
    """Read and validate a YAML file; relative output paths resolve against the cwd."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML: {exc}") from exc
    return parse_config(raw)


def set_field(raw: dict, dotted: str, value) -> dict:
    """Copy of ``raw`` with the dotted field replaced; the field must be numeric."""
    parts = dotted.split(".")
    out = copy.deepcopy(raw)
    node = out
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(dotted, "does not name a field")
    leaf = parts[-1]
    schema = {"model": _MODEL, "spectral": _SPECTRAL, "noise": _NOISE}
    if len(parts) == 2 and parts[0] in schema:
        spec = schema[parts[0]].get(leaf)
    elif len(parts) == 2 and parts[0] == "params":
        spec = PARAMS.get(raw.get("experiment"), {}).get(leaf)
    elif dotted == "seed":
        spec = (int, 0, _NONNEG)
    else:
        spec = None
    if spec is None or spec[0] not in (int, float, "opt_int"):
        raise ConfigError(dotted, "is not a numeric config field")
    node[leaf] = int(value) if spec[0] in (int, "opt_int") and float(value).is_integer() else value
    return out


def config_hash(raw: dict) -> str:
    """SHA-256 of the canonical JSON form of the configuration mapping."""
    text = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
