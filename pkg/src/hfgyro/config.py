"""YAML run configuration.

Every physical value carries a unit (see :mod:`hfgyro.units`), unknown keys
are rejected, and the document declares ``schema: 1``. A minimal file::

    schema: 1
    scenario:
      B: "50 G"
      omega: "2pi*100 Hz"
      duration: "5 ms"

Optional top-level sections: ``params`` (NV constants), ``noise``,
``sensitivity``, ``fit`` and ``sweep``.
"""

from __future__ import annotations

import copy
import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .evolution import NoiseModel, Scenario
from .hamiltonian import FieldSpec, NVParams, RotationSpec
from .metrology import SensitivityInputs
from .units import UnitError, parse_quantity

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted path when known."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None, column: int | None = None):
        self.key = key
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}, column {column}: "
        super().__init__(f"{where}{key + ': ' if key else ''}{message}")


# key -> quantity kind; "int", "float", "bool", "str" for unitless values
_SCENARIO_KEYS = {
    "B": "field",
    "dB": "field3",
    "co_rotating": "bool",
    "omega": "frequency",
    "frame": "str",
    "initial_state": "state",
    "duration": "time",
    "dt": "time",
    "angle_per_step": "float",
    "T1e": "time",
    "seed": "int",
    "stride": "int",
    "tol": "float",
}
_PARAM_KEYS = {"D": "frequency", "A_zz": "frequency", "A_perp": "frequency", "gamma_e": "gyromagnetic", "gamma_n": "gyromagnetic"}
_NOISE_KEYS = {"sigma_Bx": "field", "sigma_By": "field", "sigma_Bz": "field", "samples": "int", "co_rotating": "bool"}
_SENS_KEYS = {"C": "float", "N": "float", "t_d": "time", "tau": "time", "t": "time"}
_FIT_KEYS = {"model": "str", "observable": "str"}
_SWEEP_KEYS = {"key": "str", "values": "list", "start": "any", "stop": "any", "num": "int", "log": "bool", "axes": "list"}
_TOP_KEYS = {"schema", "scenario", "params", "noise", "sensitivity", "fit", "sweep"}

FIT_MODELS = ("exp_envelope", "stretched_exp_cos")
FIT_OBSERVABLES = ("S_z", "S_x", "envelope")


def _check_keys(section: dict, allowed, prefix: str):
    if not isinstance(section, dict):
        raise ConfigError("expected a mapping", prefix)
    for k in section:
        if k not in allowed:
            raise ConfigError(f"unknown key (allowed: {', '.join(sorted(allowed))})", f"{prefix}.{k}" if prefix else str(k))


def _value(raw, kind: str, key: str):
    try:
        if kind in ("field", "frequency", "time", "gyromagnetic"):
            return parse_quantity(raw, kind, key)
        if kind == "field3":
            if not isinstance(raw, (list, tuple)) or len(raw) != 3:
                raise ConfigError("expected a list of three fields", key)
            return tuple(parse_quantity(v, "field", f"{key}[{i}]") for i, v in enumerate(raw))
    except UnitError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1], exc.key or key) from None
    if kind == "int":
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise ConfigError(f"expected an integer, got {raw!r}", key)
        return raw
    if kind == "float":
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ConfigError(f"expected a number, got {raw!r}", key)
        return float(raw)
    if kind == "bool":
        if not isinstance(raw, bool):
            raise ConfigError(f"expected true or false, got {raw!r}", key)
        return raw
    if kind == "str":
        if not isinstance(raw, str):
            raise ConfigError(f"expected a string, got {raw!r}", key)
        return raw
    if kind == "state":
        if not isinstance(raw, dict) or set(raw) != {"ms", "mI"}:
            raise ConfigError("expected {ms: <-1|0|1>, mI: <0.5|-0.5>}", key)
        return (raw["ms"], raw["mI"])
    return raw


@dataclass(frozen=True)
class FitSpec:
    model: str = "exp_envelope"
    observable: str = "S_z"


@dataclass(frozen=True)
class SweepAxis:
    key: str
    values: tuple


@dataclass(frozen=True)
class Config:
    scenario: Scenario
    sensitivity: SensitivityInputs | None
    fit: FitSpec | None
    sweep: tuple[SweepAxis, ...]
    raw: dict


def _parse_sweep(raw) -> tuple[SweepAxis, ...]:
    if raw is None:
        return ()
    _check_keys(raw, _SWEEP_KEYS, "sweep")
    specs = raw["axes"] if "axes" in raw else [raw]
    if not isinstance(specs, list) or not 1 <= len(specs) <= 2:
        raise ConfigError("expected one or two sweep axes", "sweep.axes")
    axes = []
    for n, spec in enumerate(specs):
        prefix = f"sweep.axes[{n}]" if "axes" in raw else "sweep"
        _check_keys(spec, _SWEEP_KEYS.keys() - {"axes"}, prefix)
        if "key" not in spec:
            raise ConfigError("missing sweep key", prefix)
        if "values" in spec:
            values = spec["values"]
            if not isinstance(values, list):
                raise ConfigError("expected a list", f"{prefix}.values")
        elif {"start", "stop", "num"} <= spec.keys():
            values = _range_values(spec, prefix)
        else:
            raise ConfigError("give 'values' or 'start', 'stop' and 'num'", prefix)
        if len(values) == 0:
            raise ConfigError("empty sweep list", f"{prefix}.values")
        axes.append(SweepAxis(str(spec["key"]), tuple(values)))
    return tuple(axes)


def _range_values(spec, prefix):
    """Numeric range with the unit of ``start`` (e.g. ``start: "2pi*10 Hz"``)."""
    start, stop, num = spec["start"], spec["stop"], spec["num"]
    if not isinstance(num, int) or num < 1:
        raise ConfigError("num must be a positive integer", f"{prefix}.num")
    if isinstance(start, str):
        head, unit = start.rsplit(" ", 1)
        head2, unit2 = str(stop).rsplit(" ", 1)
        if unit != unit2:
            raise ConfigError("start and stop must share a unit", prefix)
        twopi = head.startswith("2pi*")
        if twopi != head2.startswith("2pi*"):
            raise ConfigError("start and stop must both or neither use 2pi*", prefix)
        a = float(head.removeprefix("2pi*"))
        b = float(head2.removeprefix("2pi*"))
        grid = np.geomspace(a, b, num) if spec.get("log") else np.linspace(a, b, num)
        return [f"{'2pi*' if twopi else ''}{v!r} {unit}" for v in grid.tolist()]
    grid = np.geomspace(start, stop, num) if spec.get("log") else np.linspace(start, stop, num)
    return grid.tolist()


def build_config(raw: dict) -> Config:
    """Validate a parsed document and build the run objects."""
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping")
    _check_keys(raw, _TOP_KEYS, "")
    if raw.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema {raw.get('schema')!r}; expected {SCHEMA_VERSION}", "schema")
    if "scenario" not in raw:
        raise ConfigError("missing section", "scenario")
    sc = raw["scenario"]
    _check_keys(sc, _SCENARIO_KEYS, "scenario")
    v = {k: _value(sc[k], kind, f"scenario.{k}") for k, kind in _SCENARIO_KEYS.items() if k in sc}
    params = NVParams()
    if "params" in raw:
        _check_keys(raw["params"], _PARAM_KEYS, "params")
        pv = {k: _value(raw["params"][k], kind, f"params.{k}") for k, kind in _PARAM_KEYS.items() if k in raw["params"]}
        params = _build(NVParams, pv, "params")
    noise = None
    if "noise" in raw:
        _check_keys(raw["noise"], _NOISE_KEYS, "noise")
        nv = {k: _value(raw["noise"][k], kind, f"noise.{k}") for k, kind in _NOISE_KEYS.items() if k in raw["noise"]}
        noise = _build(NoiseModel, nv, "noise")
    field = _build(FieldSpec, {k: v.pop(k) for k in ("B", "dB", "co_rotating") if k in v}, "scenario")
    rotation = RotationSpec(v.pop("omega", 0.0))
    scenario = _build(Scenario, dict(v, params=params, field=field, rotation=rotation, noise=noise), "scenario")
    # resolve the step now so physics errors surface as config errors
    try:
        scenario.step_size()
    except ValueError as exc:
        raise ConfigError(str(exc), "scenario.dt") from None
    sens = None
    if "sensitivity" in raw:
        _check_keys(raw["sensitivity"], _SENS_KEYS, "sensitivity")
        sv = {k: _value(raw["sensitivity"][k], kind, f"sensitivity.{k}") for k, kind in _SENS_KEYS.items() if k in raw["sensitivity"]}
        sens = _build(SensitivityInputs, sv, "sensitivity")
    fit = None
    if "fit" in raw:
        _check_keys(raw["fit"], _FIT_KEYS, "fit")
        fit = FitSpec(**{k: _value(raw["fit"][k], "str", f"fit.{k}") for k in raw["fit"]})
        if fit.model not in FIT_MODELS:
            raise ConfigError(f"model must be one of {', '.join(FIT_MODELS)}", "fit.model")
        if fit.observable not in FIT_OBSERVABLES:
            raise ConfigError(f"observable must be one of {', '.join(FIT_OBSERVABLES)}", "fit.observable")
    return Config(scenario, sens, fit, _parse_sweep(raw.get("sweep")), raw)


def _build(cls, kwargs, key):
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), key) from None


def parse_config(text: str) -> Config:
    """Parse YAML text; syntax errors carry line and column (1-based)."""
    try:
        raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        raise ConfigError(f"YAML syntax error: {exc.problem}", line=mark.line + 1, column=mark.column + 1) from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"YAML error: {exc}") from None
    return build_config(raw)


def load_config(path) -> Config:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None
    return parse_config(text)


def with_override(raw: dict, key: str, value) -> dict:
    """Copy of ``raw`` with dotted ``key`` (e.g. ``scenario.T1e``) set to ``value``."""
    out = copy.deepcopy(raw)
    parts = key.split(".")
    node = out
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError("not a section", key)
    node[parts[-1]] = value
    return out


def sweep_points(cfg: Config):
    """Yield ``(assignment, Config)`` over the sweep grid in row-major order."""
    if not cfg.sweep:
        raise ConfigError("no sweep section", "sweep")
    base = {k: v for k, v in cfg.raw.items() if k != "sweep"}
    for combo in itertools.product(*(ax.values for ax in cfg.sweep)):
        raw = base
        for ax, val in zip(cfg.sweep, combo):
            raw = with_override(raw, ax.key, val)
        yield dict(zip((ax.key for ax in cfg.sweep), combo)), build_config(raw)
