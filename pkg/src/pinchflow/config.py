"""Run configuration: dataclass schema, strict loading and presets."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from typing import get_type_hints

from .pinching import PinchingParams, default_alpha, default_eta
from .profile import MeshConfig, StepperConfig
from .surgery import SurgeryConfig


class ConfigError(ValueError):
    pass


@dataclass
class AmbientConfig:
    n: int = 8
    ell: int = 1
    K: float = 1.0


@dataclass
class PinchingConfig:
    m: int = 2
    alpha: float | None = None
    sigma: float = 0.05
    eta: float | None = None

    def params(self, n: int) -> PinchingParams:
        return PinchingParams(self.m, default_alpha(n) if self.alpha is None else self.alpha)


@dataclass
class InitialConfig:
    kind: str = "dumbbell"
    phi: float = math.pi / 3
    neck_ratio: float = 0.4
    separation: float = 4.6
    bulb: float = 0.5
    slope: float = -0.3
    amplitude: float = 0.1
    mode: int = 3
    phi0: float = math.pi / 2 - 0.05
    require_pinched: bool = True


@dataclass
class FlowConfig:
    ambient: AmbientConfig = field(default_factory=AmbientConfig)
    pinching: PinchingConfig = field(default_factory=PinchingConfig)
    mesh: MeshConfig = field(default_factory=MeshConfig)
    stepper: StepperConfig = field(default_factory=StepperConfig)
    surgery: SurgeryConfig = field(default_factory=SurgeryConfig)
    initial: InitialConfig = field(default_factory=InitialConfig)
    with_surgery: bool = True
    output_dt: float = 1e-5
    snapshots: bool = True
    seed: int = 0


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    hints = get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown key(s) {', '.join(unknown)}")
    kw = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        v = data[f.name]
        sub = hints[f.name]
        if is_dataclass(sub):
            kw[f.name] = _build(sub, v, f"{path}.{f.name}" if path else f.name)
        else:
            kw[f.name] = _coerce(v, sub, f"{path}.{f.name}" if path else f.name)
    try:
        return cls(**kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path or 'config'}: {e}") from None


def _coerce(v, tp, path):
    s = str(tp)
    if v is None:
        if "None" in s:
            return None
        raise ConfigError(f"{path}: null not allowed")
    if tp is bool:
        if not isinstance(v, bool):
            raise ConfigError(f"{path}: expected a boolean")
        return v
    if tp is int or s.startswith("int"):
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"{path}: expected an integer")
        return v
    if tp is float or "float" in s:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        return float(v)
    if tp is str:
        if not isinstance(v, str):
            raise ConfigError(f"{path}: expected a string")
        return v
    return v


def load_flow_config(data: dict) -> FlowConfig:
    return _build(FlowConfig, data, "")


def effective(cfg) -> dict:
    return asdict(cfg)


def merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out


def set_path(d: dict, dotted: str, value) -> dict:
    keys = dotted.split(".")
    cur = d
    for k in keys[:-1]:
        cur = cur.setdefault(k, {})
    cur[keys[-1]] = value
    return d


def parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    k, v = text.split("=", 1)
    try:
        return k.strip(), json.loads(v)
    except json.JSONDecodeError:
        return k.strip(), v


PRESETS = {
    # long-necked dumbbell: the neck is an exact tube at t = 0 and pinches
    # well before the bulbs do
    "dumbbell-n8": {
        "ambient": {"n": 8, "K": 1.0},
        "pinching": {"m": 2, "alpha": 0.01},
        "mesh": {"nodes": 1024, "refine_at": 0.025},
        "initial": {"kind": "dumbbell", "neck_ratio": 0.4, "separation": 4.6, "bulb": 0.5},
    },
    "geodesic-sphere": {
        "ambient": {"n": 8, "K": 1.0},
        "pinching": {"m": 2, "alpha": 0.01},
        "mesh": {"nodes": 256, "refine_at": 0.025},
        "initial": {"kind": "geodesic-sphere", "phi": math.pi / 3},
    },
    "equator": {
        "ambient": {"n": 8, "K": 1.0},
        "pinching": {"m": 2, "alpha": 0.01},
        "mesh": {"nodes": 128},
        "stepper": {"t_max": 0.2},
        "output_dt": 0.01,
        "initial": {"kind": "geodesic-sphere", "phi": math.pi / 2},
    },
    "perturbed-sphere": {
        "ambient": {"n": 8, "K": 1.0},
        "pinching": {"m": 2, "alpha": 0.01},
        "mesh": {"nodes": 256},
        "stepper": {"t_max": 0.3},
        "output_dt": 0.005,
        "with_surgery": False,
        "initial": {"kind": "perturbed-sphere", "amplitude": 0.1, "mode": 3},
    },
    "clifford": {
        "ambient": {"n": 8, "K": 1.0},
        "pinching": {"m": 2, "alpha": 0.01},
        "mesh": {"nodes": 256},
        "stepper": {"t_max": 0.05},
        "output_dt": 0.001,
        "with_surgery": False,
        "initial": {"kind": "clifford", "phi": 0.3, "require_pinched": False},
    },
}


def preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}")
    return copy.deepcopy(PRESETS[name])


def pinching_eta(cfg: FlowConfig) -> float:
    return default_eta(cfg.ambient.n) if cfg.pinching.eta is None else cfg.pinching.eta
