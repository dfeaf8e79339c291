"""
Run configuration: layered resolution, validation, hashing and object builders.

Precedence is flag > config file > preset > default. The resolved mapping is
what gets hashed and written next to every output.
"""
import copy
import hashlib
import json
import logging
import os

import numpy as np

from .contour import CltOptions
from .errors import ConfigError
from .fixed_point import FunctionSpec, SolverOptions
from .model import NestedDesign, SpectrumSpec, build_model, model_from_design, random_full_sib_design

logger = logging.getLogger(__name__)

RESOLVED_CONFIG_NAME = "resolved_config.json"
HASH_LENGTH = 16


def load_config_file(path):
    """Read a JSON config file; parse errors name the line and column."""
    try:
        with open(path, "r") as f:
            data = json.load(f)
    except json.JSONDecodeError as error:
        raise ConfigError(f"{path}:{error.lineno}:{error.colno}: {error.msg}") from error
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def merge(base, override):
    """Recursive dictionary merge; override wins, lists are replaced whole."""
    result = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(result.get(key), dict):
            result[key] = merge(result[key], value)
        else:
            result[key] = copy.deepcopy(value)
    return result


def resolve_config(defaults, preset=None, file_config=None, overrides=None):
    """
    Layer the configuration sources and validate the result.

    Args:
        defaults: Mapping holding every known field
        preset: Optional preset mapping
        file_config: Optional mapping read from a config file
        overrides: Optional mapping built from command-line flags

    Returns:
        Resolved config dict
    """
    config = copy.deepcopy(defaults)
    for layer in (preset, file_config, overrides):
        if layer:
            unknown = sorted(set(layer) - set(defaults) - {"name"})
            if unknown:
                raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
            config = merge(config, layer)
    return config


def config_hash(config):
    """First 16 hex digits of SHA-256 over canonical JSON, output location excluded."""
    content = {key: value for key, value in config.items() if key != "output_dir"}
    canonical = json.dumps(content, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:HASH_LENGTH]


def write_resolved_config(config, output_dir):
    os.makedirs(output_dir, exist_ok=True)
    path = os.path.join(output_dir, RESOLVED_CONFIG_NAME)
    with open(path, "w") as f:
        json.dump(config, f, indent=2, sort_keys=True)
    return path


def _field(section, key, where):
    if key not in section:
        raise ConfigError(f"missing field '{where}.{key}'")
    return section[key]


def spectrum_from_config(entry, n):
    """SpectrumSpec from a config entry; "random-wishart" draws a dense seeded matrix."""
    if isinstance(entry, dict) and entry.get("kind") == "random-wishart":
        df = int(entry.get("df", 2 * n))
        rng = np.random.Generator(np.random.PCG64(entry.get("seed", 0)))
        G = rng.standard_normal((n, df))
        return SpectrumSpec.dense_matrix(G @ G.T / df)
    return SpectrumSpec.from_dict(entry)


def scaling_from_config(entry, N):
    """Length-N scaling diagonal from a list, {"constant": v} or {"uniform": [lo, hi], "seed": s}."""
    if isinstance(entry, dict):
        if "constant" in entry:
            return np.full(N, float(entry["constant"]))
        if "uniform" in entry:
            low, high = entry["uniform"]
            rng = np.random.Generator(np.random.PCG64(entry.get("seed", 0)))
            return rng.uniform(low, high, size=N)
        raise ConfigError(f"unknown scaling entry {entry}")
    return np.asarray(entry, dtype=float)


def design_from_config(entry):
    kind = _field(entry, "kind", "model.design")
    if kind == "random-full-sib":
        return random_full_sib_design(_field(entry, "F", "model.design"),
                                      _field(entry, "sibling_probs", "model.design"),
                                      entry.get("seed", 0))
    if kind == "group-sizes":
        return NestedDesign.from_group_sizes(_field(entry, "group_sizes", "model.design"))
    raise ConfigError(f"unknown design kind '{kind}'")


def build_model_from_config(config):
    """
    VarianceModel described by config["model"].

    Either {n, N, spectra, scalings[, rotate_seed, aspect_lower, aspect_upper]}
    or {design, p, spectra}.
    """
    section = config.get("model")
    if not section:
        raise ConfigError("missing field 'model'")
    bounds = {key: section[key] for key in ("aspect_lower", "aspect_upper") if section.get(key) is not None}
    if "design" in section:
        p = int(_field(section, "p", "model"))
        spectra = [spectrum_from_config(entry, p) for entry in _field(section, "spectra", "model")]
        return model_from_design(design_from_config(section["design"]), spectra, p, **bounds)

    n = int(_field(section, "n", "model"))
    N = int(_field(section, "N", "model"))
    spectra = [spectrum_from_config(entry, n) for entry in _field(section, "spectra", "model")]
    scalings = [scaling_from_config(entry, N) for entry in _field(section, "scalings", "model")]
    return build_model(n, N, spectra, scalings, rotate_seed=section.get("rotate_seed"), **bounds)


def functions_from_config(config):
    entries = config.get("functions") or []
    if not entries:
        raise ConfigError("missing field 'functions'")
    return [FunctionSpec.from_dict(entry) for entry in entries]


def solver_options_from_config(config):
    section = config.get("solver") or {}
    try:
        return SolverOptions(**section)
    except TypeError as error:
        raise ConfigError(f"solver: {error}") from error


def clt_options_from_config(config, workers=None):
    section = config.get("contour") or {}
    known = {"nodes", "margin", "relative_margin", "radius_ratio", "mode"}
    unknown = sorted(set(section) - known)
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join('contour.' + key for key in unknown)}")
    return CltOptions(solver=solver_options_from_config(config), workers=workers, **section)


def z_points_from_config(config):
    """Complex evaluation points from config["solve"]["z"] ([re, im] pairs)."""
    points = (config.get("solve") or {}).get("z") or []
    try:
        return [complex(float(re), float(im)) for re, im in points]
    except (TypeError, ValueError) as error:
        raise ConfigError(f"solve.z must be a list of [re, im] pairs: {error}") from error
