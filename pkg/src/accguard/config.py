"""
Scenario files, presets and model files (YAML).

A scenario file mirrors :class:`SimConfig` field by field, plus ``preset``
(which supplies every value not given in the file) and ``output`` paths.
Unknown keys anywhere are rejected.
"""

from __future__ import annotations

import copy
import dataclasses
import enum
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .attack import AttackSpec, Scenario
from .controller import Mode
from .errors import ConfigError, InvalidParameter
from .ids import IdentifierModel, IdsBundle, ThresholdSet
from .sim import SimConfig

MODEL_FORMAT = "accguard-ids"
MODEL_VERSION = 1

PRESETS = {
    "nominal": {"attack": {"scenario": "none"}, "compensate": False},
    "attack1_nocomp": {"attack": {"scenario": "spike"}, "compensate": False},
    "attack1_comp": {"attack": {"scenario": "spike"}, "compensate": True},
    # the bias ramp needs t_attack + 60 s of simulated time
    "attack2_nocomp": {"attack": {"scenario": "reference_bias"}, "compensate": False,
                       "duration": 100.0},
    "attack2_comp": {"attack": {"scenario": "reference_bias"}, "compensate": True,
                     "duration": 100.0},
}


@dataclass(frozen=True)
class OutputPaths:
    trace: str | None = None
    metrics: str | None = None
    model: str | None = None


@dataclass(frozen=True)
class ScenarioFile:
    sim: SimConfig
    preset: str | None = None
    output: OutputPaths = field(default_factory=OutputPaths)


# -- dataclass <-> plain data ---------------------------------------------------

def to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (tuple, list)):
        return [to_plain(x) for x in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _coerce(tp, value, where: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, getattr(__import__("types"), "UnionType", None)):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, where)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a mapping")
        return from_plain(tp, value, where)
    if isinstance(tp, type) and issubclass(tp, enum.Enum):
        try:
            return tp(value)
        except ValueError:
            choices = ", ".join(m.value for m in tp)
            raise ConfigError(f"{where}: {value!r} is not one of {choices}") from None
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{where}: expected an integer")
        return int(value)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v, f"{where}[{i}]") for i, v in enumerate(value))
        if len(args) != len(value):
            raise ConfigError(f"{where}: expected {len(args)} items")
        return tuple(_coerce(a, v, f"{where}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    return value


def from_plain(cls, data: dict, where: str = ""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(_join(where, k) for k in unknown)}")
    kwargs = {k: _coerce(hints[k], v, _join(where, k)) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except InvalidParameter as exc:
        raise ConfigError(f"{where or cls.__name__}: {exc}") from exc


def _join(prefix: str, key: str) -> str:
    return f"{prefix}.{key}" if prefix else key


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


# -- scenario files -------------------------------------------------------------

def preset_dict(name: str | None) -> dict:
    base = to_plain(SimConfig())
    if name is None:
        return base
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return _merge(base, PRESETS[name])


def preset_config(name: str) -> SimConfig:
    return from_plain(SimConfig, preset_dict(name))


def parse_scenario(doc: dict) -> ScenarioFile:
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("scenario file must be a mapping")
    doc = dict(doc)
    preset = doc.pop("preset", None)
    output = doc.pop("output", None) or {}
    if not isinstance(output, dict):
        raise ConfigError("output: expected a mapping")
    sim = from_plain(SimConfig, _merge(preset_dict(preset), doc))
    return ScenarioFile(sim=sim, preset=preset, output=from_plain(OutputPaths, output, "output"))


def scenario_to_dict(sf: ScenarioFile) -> dict:
    doc = {"preset": sf.preset}
    doc.update(to_plain(sf.sim))
    doc["output"] = to_plain(sf.output)
    return doc


def load_scenario(path) -> ScenarioFile:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file {path}: {exc.strerror}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parse_scenario(doc)


def dump_scenario(sf: ScenarioFile) -> str:
    return yaml.safe_dump(scenario_to_dict(sf), sort_keys=False)


def parse_override(text: str):
    """``a.b=value`` -> (["a", "b"], parsed value)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"bad override value {raw!r}") from exc
    return key.strip().split("."), value


def resolve_key(doc: dict, key: str) -> list[str]:
    """Dotted path of a config leaf; a bare leaf name must be unique."""
    parts = key.split(".")
    node = doc
    try:
        for p in parts:
            node = node[p]
        return parts
    except (KeyError, TypeError):
        pass
    if len(parts) == 1:
        hits = list(_find_leaf(doc, key, []))
        if len(hits) == 1:
            return hits[0]
        if len(hits) > 1:
            raise ConfigError(f"ambiguous parameter {key!r}: "
                              + ", ".join(".".join(h) for h in hits))
    raise ConfigError(f"unknown parameter {key!r}")


def _find_leaf(doc, name, prefix):
    for k, v in doc.items():
        if isinstance(v, dict):
            yield from _find_leaf(v, name, prefix + [k])
        elif k == name:
            yield prefix + [k]


def with_overrides(sf: ScenarioFile, overrides: dict) -> ScenarioFile:
    """Apply ``{dotted_key: value}`` overrides and re-validate."""
    doc = to_plain(sf.sim)
    for key, value in overrides.items():
        path = resolve_key(doc, key)
        node = doc
        for p in path[:-1]:
            node = node[p]
        node[path[-1]] = value
    return ScenarioFile(sim=from_plain(SimConfig, doc), preset=sf.preset, output=sf.output)


def is_numeric_field(sf: ScenarioFile, key: str) -> bool:
    doc = to_plain(sf.sim)
    path = resolve_key(doc, key)
    node = doc
    for p in path:
        node = node[p]
    return isinstance(node, (int, float)) and not isinstance(node, bool)


# -- model files ----------------------------------------------------------------

def bundle_to_dict(bundle: IdsBundle) -> dict:
    m, th = bundle.model, bundle.thresholds
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "model": {
            "n_u": m.n_u,
            "n_y": m.n_y,
            "W1": np.asarray(m.W1).tolist(),
            "b1": np.asarray(m.b1).tolist(),
            "w2": np.asarray(m.w2).tolist(),
            "b2": float(m.b2),
            "w_lin": np.asarray(m.w_lin).tolist(),
            "x_mean": np.asarray(m.x_mean).tolist(),
            "x_scale": np.asarray(m.x_scale).tolist(),
            "y_mean": float(m.y_mean),
            "y_scale": float(m.y_scale),
            "train_rmse": float(m.train_rmse),
            "val_rmse": float(m.val_rmse),
        },
        "thresholds": {
            "k": float(th.k),
            "mu": {mode.value: float(th.mu[mode]) for mode in Mode},
            "sigma": {mode.value: float(th.sigma[mode]) for mode in Mode},
            "fallback": [mode.value for mode in th.fallback],
        },
    }


def bundle_from_dict(doc: dict) -> IdsBundle:
    try:
        if doc.get("format") != MODEL_FORMAT:
            raise ConfigError("not an IDS model file")
        if doc.get("version") != MODEL_VERSION:
            raise ConfigError(f"unsupported model file version {doc.get('version')!r}")
        md, td = doc["model"], doc["thresholds"]
        model = IdentifierModel(
            W1=np.array(md["W1"], dtype=float), b1=np.array(md["b1"], dtype=float),
            w2=np.array(md["w2"], dtype=float), b2=float(md["b2"]),
            w_lin=np.array(md["w_lin"], dtype=float),
            x_mean=np.array(md["x_mean"], dtype=float),
            x_scale=np.array(md["x_scale"], dtype=float),
            y_mean=float(md["y_mean"]), y_scale=float(md["y_scale"]),
            n_u=int(md["n_u"]), n_y=int(md["n_y"]),
            train_rmse=float(md["train_rmse"]), val_rmse=float(md["val_rmse"]))
        thresholds = ThresholdSet(
            mu={Mode(k): float(v) for k, v in td["mu"].items()},
            sigma={Mode(k): float(v) for k, v in td["sigma"].items()},
            k=float(td["k"]), fallback=tuple(Mode(x) for x in td.get("fallback", ())))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed model file: {exc}") from exc
    return IdsBundle(model, thresholds)


def save_bundle(bundle: IdsBundle, path) -> None:
    Path(path).write_text(yaml.safe_dump(bundle_to_dict(bundle), sort_keys=False))


def load_bundle(path) -> IdsBundle:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read model file {path}: {exc.strerror}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse model file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("model file must be a mapping")
    return bundle_from_dict(doc)


__all__ = [
    "AttackSpec", "OutputPaths", "PRESETS", "Scenario", "ScenarioFile", "bundle_from_dict",
    "bundle_to_dict", "dump_scenario", "load_bundle", "load_scenario", "parse_scenario",
    "preset_config", "save_bundle", "scenario_to_dict", "with_overrides",
]
