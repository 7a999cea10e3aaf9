"""Experiment configuration: a versioned JSON document checked against a schema.

Unknown keys are rejected everywhere.  Validation errors name the offending
field as a slash-separated path, e.g. ``system/workers/3/tx_rate``.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema

from .cost_model import AlgoParams, LearnConstants, NodeProfile, SystemProfile
from .engine import config_hash
from .optimizer import Mode, OptSpec
from .quantizer import INFINITE

SCHEMA_VERSION = 1

_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}
_LEVELS = {"oneOf": [_POS_INT, {"const": "inf"}]}


def _obj(properties: dict, required=()) -> dict:
    return {"type": "object", "properties": properties, "required": list(required), "additionalProperties": False}


_NODE = _obj({
    "cpu_freq": _POS, "cycles": _POS, "capacitance": _POS, "tx_power": _POS, "tx_rate": _POS,
    "quant_variance": _NONNEG, "quant_bits": _POS, "levels": _LEVELS,
}, required=["cpu_freq", "cycles", "capacitance", "tx_power", "tx_rate", "quant_variance", "quant_bits"])

_PARAMS = _obj({"K0": _POS_INT, "K": {"type": "array", "items": _POS_INT, "minItems": 1}, "B": _POS_INT},
               required=["K0", "K", "B"])

_TASK = _obj({
    "kind": {"enum": ["mnist", "quadratic", "logistic"]},
    "images": {"type": "string"},
    "labels": {"type": "string"},
    "fallback": {"enum": ["quadratic", "logistic"]},
    "dimension": _POS_INT,
    "samples_per_worker": _POS_INT,
    "spread": _POS,
    "data_seed": {"type": "integer", "minimum": 0},
}, required=["kind"])

_QUANT_LEVELS = _obj({"server": _LEVELS, "worker": _LEVELS}, required=["server", "worker"])

SCHEMA = _obj({
    "version": {"const": SCHEMA_VERSION},
    "system": _obj({
        "server": _NODE,
        "workers": {"type": "array", "items": _NODE, "minItems": 1},
    }, required=["server", "workers"]),
    "learning": _obj({
        "lipschitz": _POS, "sigma": _POS, "second_moment": _POS, "step_size": _POS,
        "init_gap": _NONNEG, "dimension": _POS_INT,
    }, required=["lipschitz", "sigma", "second_moment", "step_size", "init_gap", "dimension"]),
    "optimizer": _obj({
        "t_max": _POS, "c_max": _POS,
        "samples_per_worker": {"type": "array", "items": _POS_INT, "minItems": 1},
        "solver_tol": _POS, "outer_tol": _POS, "max_outer": _POS_INT, "fedavg_max_epochs": _POS_INT,
        "baseline_quantization": {"enum": ["shared", "remark2"]},
        "min_value": _NONNEG,
    }, required=["t_max", "c_max"]),
    "sweep": _obj({
        "cmax": {"type": "array", "items": _POS, "minItems": 1},
        "tmax": {"type": "array", "items": _POS, "minItems": 1},
        "modes": {"type": "array", "items": {"enum": [m.value for m in Mode]}, "minItems": 1},
    }),
    "task": _TASK,
    "simulation": _obj({
        "levels": _QUANT_LEVELS,
        "step_size": _NONNEG,
        "init_scale": _NONNEG,
        "params": _PARAMS,
    }),
    "verify": _obj({
        "tasks": {"type": "array", "items": _TASK, "minItems": 1},
        "n_workers": _POS_INT,
        "settings": {"type": "array", "items": _PARAMS, "minItems": 1},
        "seeds": _POS_INT,
        "levels": _QUANT_LEVELS,
        "step_size": {"type": "object", "additionalProperties": _POS},
        "probe_count": {"type": "integer", "minimum": 2},
        "init_scale": _NONNEG,
    }, required=["tasks", "n_workers", "settings", "seeds"]),
    "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
}, required=["version", "system", "learning", "optimizer"])


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


def levels_value(v) -> float:
    return INFINITE if v == "inf" else int(v)


def params_from(d: dict) -> AlgoParams:
    return AlgoParams(int(d["K0"]), [int(k) for k in d["K"]], int(d["B"]))


@dataclass
class ExperimentConfig:
    data: dict
    source: Path | None = None

    @property
    def hash(self) -> str:
        return config_hash(self.data)

    @property
    def n_workers(self) -> int:
        return len(self.data["system"]["workers"])

    def profile(self) -> SystemProfile:
        sysd = self.data["system"]

        def node(d):
            d = dict(d)
            if "levels" in d:
                d["levels"] = levels_value(d["levels"])
            return NodeProfile(**d)

        return SystemProfile(node(sysd["server"]), [node(w) for w in sysd["workers"]])

    def constants(self) -> LearnConstants:
        return LearnConstants(n_workers=self.n_workers, **self.data["learning"])

    def opt_spec(self, t_max: float | None = None, c_max: float | None = None) -> OptSpec:
        opt = dict(self.data["optimizer"])
        opt["t_max"] = opt["t_max"] if t_max is None else t_max
        opt["c_max"] = opt["c_max"] if c_max is None else c_max
        return OptSpec(profile=self.profile(), constants=self.constants(), **opt)

    def spec_hash(self, t_max: float | None = None, c_max: float | None = None) -> str:
        opt = dict(self.data["optimizer"])
        opt.update({k: v for k, v in (("t_max", t_max), ("c_max", c_max)) if v is not None})
        return config_hash({"system": self.data["system"], "learning": self.data["learning"], "optimizer": opt})

    @property
    def seeds(self) -> list[int]:
        return list(self.data.get("seeds", [0]))

    def resolve(self, path: str) -> Path:
        """Paths in the config are relative to the config file."""
        p = Path(path)
        if not p.is_absolute() and self.source is not None:
            p = self.source.parent / p
        return p


def _json_path(err: jsonschema.ValidationError) -> str:
    return "/".join(str(p) for p in err.absolute_path)


def _check_consistency(data: dict) -> None:
    n = len(data["system"]["workers"])
    spw = data["optimizer"].get("samples_per_worker")
    if spw is not None and len(spw) != n:
        raise ConfigError(f"expected {n} entries (one per worker), got {len(spw)}", "optimizer/samples_per_worker")
    lr = data["learning"]
    if lr["step_size"] > 1.0 / lr["lipschitz"]:
        raise ConfigError(f"step size {lr['step_size']} exceeds 1/L", "learning/step_size")
    sim = data.get("simulation", {})
    if "params" in sim and len(sim["params"]["K"]) != n:
        raise ConfigError(f"expected {n} local step counts, got {len(sim['params']['K'])}", "simulation/params/K")
    ver = data.get("verify")
    if ver is not None:
        for i, s in enumerate(ver["settings"]):
            if len(s["K"]) != ver["n_workers"]:
                raise ConfigError(f"expected {ver['n_workers']} local step counts", f"verify/settings/{i}/K")
        for i, t in enumerate(ver["tasks"]):
            if t["kind"] == "mnist":
                raise ConfigError("bound checks need a synthetic task", f"verify/tasks/{i}/kind")


def validate(data: dict) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = errors[0]
        # report the deepest error of a oneOf/anyOf branch, it names the actual field
        if err.context:
            err = max(err.context, key=lambda e: len(e.absolute_path))
        raise ConfigError(err.message, _json_path(err) or "<root>")
    for value in _numbers(data):
        if not math.isfinite(value):
            raise ConfigError("non-finite number in config")
    _check_consistency(data)


def _numbers(obj):
    if isinstance(obj, dict):
        for v in obj.values():
            yield from _numbers(v)
    elif isinstance(obj, list):
        for v in obj:
            yield from _numbers(v)
    elif isinstance(obj, float):
        yield obj


def from_dict(data: dict, source: Path | None = None) -> ExperimentConfig:
    validate(data)
    return ExperimentConfig(copy.deepcopy(data), source)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return from_dict(data, path)


def save_config(config: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(config.data, indent=2, sort_keys=True) + "\n")


def default_config_path() -> Path:
    return Path(str(resources.files("fedopt") / "data" / "default_config.json"))


def load_default_config() -> ExperimentConfig:
    return load_config(default_config_path())
