"""Run configuration: an INI file with a fixed schema.

Every section and key is declared in ``SCHEMA``; anything else is rejected.
Values are parsed into Python types once, so the same RunConfig can be
rebuilt from the JSON metadata written next to each result table.
"""
from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .errors import ConfigError
from .models import ModelKind


def _items(text) -> list:
    if isinstance(text, (list, tuple)):
        return list(text)
    return [v.strip() for v in str(text).replace(";", ",").split(",") if v.strip()]


def _floats(text) -> list[float]:
    return [float(v) for v in _items(text)]


def _ints(text) -> list[int]:
    return [int(v) for v in _items(text)]


def _strs(text) -> list[str]:
    return [str(v).strip() for v in _items(text)]


def _kind(text: str) -> str:
    text = str(text).strip().lower()
    if text == "custom":
        return text
    return ModelKind.parse(text).value


def _matrix(text):
    if isinstance(text, list):
        return text
    value = json.loads(text)
    if not isinstance(value, list):
        raise ValueError("expected a JSON list")
    return value


def _optional_float(text):
    if text is None or str(text).strip().lower() in ("", "none", "auto"):
        return None
    return float(text)


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple[Callable[[Any], Any], Any]]] = {
    "model": {
        "kind": (_kind, "transformed"),
        "basis_size": (int, 64),
        # custom kind: H0 and h as JSON matrices; complex entries as [re, im]
        "h0": (_matrix, None),
        "h": (_matrix, None),
    },
    "physics": {
        "hbar": (float, 1.0),
        "mass": (float, 1.0),
        "l0": (float, 1.0),
    },
    "perturbation": {
        "order": (int, 2),
        "levels": (_ints, [1]),
        "wall": (float, 1.0),
        "rate": (float, 0.0),
        "eps": (_floats, [1e-3, 1e-2, 1e-1]),
        "coefficient_rows": (int, 8),
    },
    "path": {
        "shape": (str, "rectangle"),
        "l_range": (_floats, [1.0, 1.2]),
        "r_range": (_floats, [0.0, 0.01]),
        "points_per_edge": (int, 40),
        "levels": (_ints, [1]),
    },
    "schedule": {
        "shape": (str, "cosine-loop"),
        "l_start": (float, 1.0),
        "l_end": (float, 1.2),
        "amplitude": (float, 0.1),
        "tau": (float, 10.0),
        "levels": (_ints, [1]),
    },
    "numerics": {
        "dt": (_optional_float, None),
        "sample_dt": (_optional_float, None),
        "step": (_optional_float, None),
        "grid_points": (int, 4096),
        "leak_threshold": (float, 1e-3),
        "reference_samples": (int, 2001),
    },
    "compare": {
        "kinds": (_strs, ["transformed", "effective-plus", "effective-minus"]),
    },
    "sweep": {
        "command": (str, "evolve"),
        "parameter": (str, "schedule.tau"),
        "values": (_floats, []),
    },
    "output": {
        "dir": (str, "."),
        "prefix": (str, "run"),
    },
    "run": {
        "seed": (int, 0),
    },
}


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration; ``values[section][key]`` holds parsed values."""

    values: dict

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def get(self, dotted: str):
        section, key = _split(dotted)
        return self.values[section][key]

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        """Build from a (possibly partial) nested mapping, filling defaults."""
        unknown = set(raw) - set(SCHEMA)
        if unknown:
            raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
        values = {}
        for section, keys in SCHEMA.items():
            given = dict(raw.get(section, {}))
            bad = set(given) - set(keys)
            if bad:
                raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(bad))}")
            values[section] = {}
            for key, (parse, default) in keys.items():
                if key in given and given[key] is not None:
                    try:
                        values[section][key] = parse(given[key])
                    except (ValueError, TypeError, json.JSONDecodeError) as exc:
                        raise ConfigError(f"[{section}] {key} = {given[key]!r}: {exc}") from None
                    except Exception as exc:  # model-kind parse errors
                        raise ConfigError(f"[{section}] {key} = {given[key]!r}: {exc}") from None
                else:
                    values[section][key] = default
        cfg = cls(values)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
        parser.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        return cls.from_dict({s: dict(parser.items(s)) for s in parser.sections()})

    def with_overrides(self, **dotted) -> "RunConfig":
        raw = self.to_dict()
        for key, value in dotted.items():
            if value is None:
                continue
            section, name = _split(key)
            if section not in SCHEMA or name not in SCHEMA[section]:
                raise ConfigError(f"unknown setting {key}")
            raw[section][name] = value
        return RunConfig.from_dict(raw)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(self.values))

    def canonical_json(self) -> str:
        return json.dumps(self.values, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def validate(self) -> None:
        v = self.values
        model = v["model"]
        if model["kind"] == "custom":
            if model["h0"] is None or model["h"] is None:
                raise ConfigError("[model] kind = custom needs h0 and h")
        elif model["basis_size"] < 4:
            raise ConfigError("[model] basis_size must be >= 4")
        for key in ("hbar", "mass", "l0"):
            if not v["physics"][key] > 0:
                raise ConfigError(f"[physics] {key} must be > 0")
        if v["perturbation"]["order"] < 0:
            raise ConfigError("[perturbation] order must be >= 0")
        if not v["perturbation"]["wall"] > 0:
            raise ConfigError("[perturbation] wall must be > 0")
        if any(n < 1 for n in v["perturbation"]["levels"] + v["path"]["levels"] + v["schedule"]["levels"]):
            raise ConfigError("levels are 1-based")
        if v["path"]["shape"] not in ("rectangle", "retrace", "wall-loop"):
            raise ConfigError("[path] shape must be rectangle, retrace or wall-loop")
        for key in ("l_range", "r_range"):
            if len(v["path"][key]) != 2:
                raise ConfigError(f"[path] {key} needs two values")
        if min(v["path"]["l_range"]) <= 0:
            raise ConfigError("[path] l_range must be positive")
        if v["path"]["points_per_edge"] < 2:
            raise ConfigError("[path] points_per_edge must be >= 2")
        if v["schedule"]["shape"] not in ("cosine-loop", "linear", "static"):
            raise ConfigError("[schedule] shape must be cosine-loop, linear or static")
        if not v["schedule"]["tau"] > 0:
            raise ConfigError("[schedule] tau must be > 0")
        for kind in v["compare"]["kinds"]:
            try:
                ModelKind.parse(kind)
            except Exception:
                raise ConfigError(f"[compare] unknown kind {kind!r}") from None
        if v["sweep"]["command"] not in ("perturb", "connection", "evolve", "compare"):
            raise ConfigError("[sweep] command must be perturb, connection, evolve or compare")
        try:
            section, key = _split(v["sweep"]["parameter"])
        except ConfigError:
            raise ConfigError("[sweep] parameter must look like section.key") from None
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"[sweep] unknown parameter {v['sweep']['parameter']}")

    def output_path(self, suffix: str) -> Path:
        out = self.values["output"]
        return Path(out["dir"]) / f"{out['prefix']}_{suffix}"


def _split(dotted: str) -> tuple[str, str]:
    parts = str(dotted).split(".")
    if len(parts) != 2:
        raise ConfigError(f"expected section.key, got {dotted!r}")
    return parts[0], parts[1]
