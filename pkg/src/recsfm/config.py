"""Run configuration: INI files, flag overrides, and seed resolution.

Every command resolves its settings from three layers, highest priority
first:

    1. command-line flags,
    2. the command's section in an INI config file (``--config``),
    3. built-in defaults (for ``seed``: the ``DRO_SEED`` environment
       variable slots in between the config file and the default).

Resolved settings are written back out as a single-section INI file next
to the command's outputs so a run can always be reproduced from its
artifacts alone.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import fields as _dc_fields

from .data import SceneSpec
from .errors import ConfigError
from .network import ModelConfig

ENV_SEED = "DRO_SEED"

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


_SPEC_DEFAULTS = {f.name: f.default for f in _dc_fields(SceneSpec)}
_MODEL_DEFAULTS = {f.name: f.default for f in _dc_fields(ModelConfig)}

# Per-command schema: option name -> (converter, default).  None defaults
# mark required settings the resolver refuses to leave unset; the seed's
# None default is special-cased through DRO_SEED.
SCHEMA: dict[str, dict[str, tuple]] = {
    "gen": {
        "out": (str, None),
        "count": (int, 100),
        "seed": (int, None),
        "width": (int, _SPEC_DEFAULTS["width"]),
        "height": (int, _SPEC_DEFAULTS["height"]),
        "views": (int, _SPEC_DEFAULTS["n_views"]),
        "geometry": (str, _SPEC_DEFAULTS["geometry"]),
        "texture": (str, _SPEC_DEFAULTS["texture"]),
        "max_rotation_deg": (float, _SPEC_DEFAULTS["max_rotation_deg"]),
        "max_translation": (float, _SPEC_DEFAULTS["max_translation"]),
        "depth_min": (float, _SPEC_DEFAULTS["depth_min"]),
        "depth_max": (float, _SPEC_DEFAULTS["depth_max"]),
        "noise_std": (float, _SPEC_DEFAULTS["noise_std"]),
        "supersample": (int, _SPEC_DEFAULTS["supersample"]),
        "gt_depth": (parse_bool, True),
        "gt_poses": (parse_bool, True),
        "force": (parse_bool, False),
    },
    "train": {
        "dataset": (str, None),
        "out": (str, None),
        "mode": (str, "supervised"),
        "epochs": (int, 2),
        "seed": (int, None),
        "limit": (int, 0),
        "views": (int, 0),
        "lr_start": (float, 2e-4),
        "lr_end": (float, 5e-5),
        "clip_norm": (float, 100.0),
        "gamma": (float, 0.85),
        "alpha": (float, 0.85),
        "lam": (float, 0.01),
        "stages": (int, 3),
        "updates_per_stage": (int, 4),
        "opt_mode": (str, "alternate"),
        "use_cost": (parse_bool, True),
        "feat_channels": (int, _MODEL_DEFAULTS["feat_channels"]),
        "context_channels": (int, _MODEL_DEFAULTS["context_channels"]),
        "hidden_channels": (int, _MODEL_DEFAULTS["hidden_channels"]),
        "pv_channels": (int, _MODEL_DEFAULTS["pv_channels"]),
        "pc_channels": (int, _MODEL_DEFAULTS["pc_channels"]),
        "d_min": (float, _MODEL_DEFAULTS["d_min"]),
        "d_max": (float, _MODEL_DEFAULTS["d_max"]),
        "resume": (str, ""),
    },
    "infer": {
        "checkpoint": (str, None),
        "data": (str, None),
        "out": (str, None),
        "views": (int, 0),
        "iters": (int, -1),
        "limit": (int, 0),
        "opt_mode": (str, ""),
        "use_cost": (str, ""),
    },
    "eval": {
        "pred": (str, None),
        "gt": (str, None),
        "out": (str, ""),
        "median_scale": (parse_bool, False),
    },
    "bench": {
        "checkpoint": (str, None),
        "data": (str, None),
        "out": (str, None),
        "iters": (str, "0,4,8,12"),
        "runs": (int, 5),
        "limit": (int, 4),
        "views": (int, 0),
    },
}


def read_config(path: str | None, command: str) -> dict[str, str]:
    """Parse an INI file, validate every section/key, return one section.

    The whole file is checked — a typo in any section is rejected even if
    the current command never reads it.
    """
    if command not in SCHEMA:
        raise ConfigError(f"unknown command {command!r}")
    if path is None:
        return {}
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(
                f"{path}: unknown section [{section}] "
                f"(known: {', '.join(sorted(SCHEMA))})")
        for key in parser[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(
                    f"{path}: unknown key {key!r} in section [{section}]")
    if parser.has_section(command):
        return dict(parser[command])
    return {}


def resolve(command: str, flags: dict, file_values: dict[str, str]) -> dict:
    """Merge defaults <- config file <- flags into typed settings."""
    schema = SCHEMA[command]
    out: dict = {}
    for key, (conv, default) in schema.items():
        flag = flags.get(key)
        if flag is not None:
            out[key] = conv(flag) if isinstance(flag, str) and conv is not str else flag
        elif key in file_values:
            try:
                out[key] = conv(file_values[key])
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(
                    f"bad value for {key!r}: {file_values[key]!r}") from exc
        else:
            out[key] = default
    if "seed" in schema and out["seed"] is None:
        env = os.environ.get(ENV_SEED)
        if env is not None:
            try:
                out["seed"] = int(env)
            except ValueError as exc:
                raise ConfigError(f"{ENV_SEED} must be an integer, got {env!r}") from exc
        else:
            out["seed"] = 0
    return out


def write_resolved(path: str, command: str, values: dict) -> None:
    """Dump resolved settings as a one-section INI file, keys in schema order."""
    lines = [f"[{command}]"]
    for key in SCHEMA[command]:
        if key in values:
            lines.append(f"{key} = {_fmt(values[key])}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
