"""Experiment configuration: YAML schema, validation with line numbers, presets.

A configuration is a mapping with the sections below (defaults in brackets)::

    name: fig3                      # run label, also the default output folder
    model:
      id: spin                      # spin | lz
      params: {L: 1.0}              # constructor arguments
    protocol:
      kind: linear                  # linear | quadratic | square-wave-rate | lz-sweep | piecewise
      params: {rate: 1.0e-5}        # constructor arguments of the kind
    time:
      start: 0.0                    # [protocol start, or 0]
      end: 6283.2                   # [protocol end for lz-sweep]
      chunk: 20000.0                # [20000] integration/analysis chunk length
    integration:
      primary: hamilton             # [hamilton] | schrodinger
      oracle: true                  # [true] also run the other path and report the distance
      rtol: 1.0e-11                 # [1e-11] in [1e-13, 1e-6]
      atol: 1.0e-13                 # [rtol / 100]
      samples_per_period: 64        # [64], at least 40
    hierarchy:
      order: 1                      # K in 1..3
      branch: 1                     # [0] ascending-eigenvalue label
    initial:
      state: eigenstate             # [eigenstate] | adiabatic | [[re, im], ...]
    output:
      dir: runs/fig3                # [see resolve_output_dir]
      stride: 1                     # [1] keep every stride-th sample
    sweep:
      workers: 2                    # [1]
    checks:                         # [] evaluated by ``--check``
      - {stat: orders.1.I.mean, target: 2.5e-11, rtol: 0.02}
      - {stat: breakdown, equals: true}
      - {stat: orders.1.I.max, below: 1.0e-13}
"""
from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from ..dynamics.integrate import MAX_TOL, MIN_SAMPLES_PER_PERIOD, MIN_TOL, SAMPLES_PER_PERIOD
from ..dynamics.protocol import PROTOCOL_KINDS, Protocol
from ..hierarchy import K_MAX
from ..models import BUILTIN_MODELS

OUTPUT_ENV = "ADIABATIC_HIERARCHY_OUT"
DEFAULT_CHUNK = 2e4
PRIMARY_PATHS = ("hamilton", "schrodinger")
CHECK_OPS = ("target", "below", "above", "equals")

_SECTIONS = {
    "name": None,
    "model": {"id", "params"},
    "protocol": {"kind", "params", "discontinuities"},
    "time": {"start", "end", "chunk"},
    "integration": {"primary", "oracle", "rtol", "atol", "samples_per_period"},
    "hierarchy": {"order", "branch"},
    "initial": {"state"},
    "output": {"dir", "stride"},
    "sweep": {"workers"},
    "checks": None,
}

_PROTOCOL_PARAMS = {
    "linear": ({"rate"}, {"R0", "t0"}),
    "quadratic": ({"accel"}, {"R0", "rate0", "t0"}),
    "square-wave-rate": ({"rate", "nu"}, {"R0", "t0", "t_end"}),
    "lz-sweep": ({"V", "Z0"}, set()),
    "piecewise": ({"times", "values"}, set()),
}

_MODEL_PARAMS = {"spin": {"L"}, "lz": {"x"}}


class ConfigError(ValueError):
    """Invalid experiment configuration; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.message = message
        self.line = line
        self.source = source
        where = ""
        if source:
            where = f"{source}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}".strip())


def _line_index(node, path=(), out=None) -> dict:
    """Map of key paths to 1-based line numbers for every mapping value and list item."""
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            _line_index(value, path + (key.value,), out)
    elif isinstance(node, yaml.SequenceNode):
        for i, value in enumerate(node.value):
            _line_index(value, path + (i,), out)
    return out


@dataclass
class ExperimentConfig:
    """Validated experiment configuration (see the module docstring for the schema)."""

    name: str
    model_id: str
    model_params: dict
    protocol_kind: str
    protocol_params: dict
    t_start: float
    t_end: float
    chunk: float = DEFAULT_CHUNK
    primary: str = "hamilton"
    oracle: bool = True
    rtol: float = 1e-11
    atol: float | None = None
    samples_per_period: int = SAMPLES_PER_PERIOD
    order: int = 1
    branch: int = 0
    initial: object = "eigenstate"
    output_dir: str | None = None
    stride: int = 1
    workers: int = 1
    checks: list = field(default_factory=list)
    discontinuities: list = field(default_factory=list)
    raw: dict = field(default_factory=dict, repr=False)

    def model(self):
        return BUILTIN_MODELS[self.model_id](**self.model_params)

    def protocol(self) -> Protocol:
        kind, params = self.protocol_kind, dict(self.protocol_params)
        if kind == "linear":
            return Protocol.linear(**params)
        if kind == "quadratic":
            return Protocol.quadratic(**params)
        if kind == "square-wave-rate":
            params.setdefault("t_end", self.t_end)
            return Protocol.square_wave_rate(**params)
        if kind == "lz-sweep":
            return Protocol.lz_sweep(**params)
        return Protocol.piecewise(params["times"], params["values"])

    def with_value(self, path: str, value) -> "ExperimentConfig":
        """Copy with one dotted raw-config entry replaced, re-validated."""
        raw = copy.deepcopy(self.raw)
        keys = path.split(".")
        node = raw
        for key in keys[:-1]:
            if not isinstance(node, dict) or key not in node:
                raise ConfigError(f"unknown parameter '{path}'")
            node = node[key]
        if not isinstance(node, dict) or keys[-1] not in node:
            raise ConfigError(f"unknown parameter '{path}'")
        try:
            _number(node[keys[-1]], (), {})
        except ConfigError:
            raise ConfigError(f"parameter '{path}' is not numeric") from None
        node[keys[-1]] = value
        return config_from_dict(raw)

    def override(self, *, order: int | None = None, rtol: float | None = None,
                 output_dir: str | None = None) -> "ExperimentConfig":
        """Copy with command-line overrides applied and re-validated."""
        raw = copy.deepcopy(self.raw)
        if order is not None:
            raw.setdefault("hierarchy", {})["order"] = order
        if rtol is not None:
            raw.setdefault("integration", {})["rtol"] = rtol
            raw["integration"].pop("atol", None)
        if output_dir is not None:
            raw.setdefault("output", {})["dir"] = str(output_dir)
        return config_from_dict(raw)


def _number(value, where, lines, *, integer=False, positive=False):
    line = lines.get(where)
    if isinstance(value, str):
        # YAML 1.1 reads exponents without a mantissa dot ("1e-5") as strings
        try:
            value = float(value)
        except ValueError:
            pass
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"'{'.'.join(map(str, where))}' must be a number, got {value!r}", line)
    if integer and int(value) != value:
        raise ConfigError(f"'{'.'.join(map(str, where))}' must be an integer", line)
    if not np.isfinite(value):
        raise ConfigError(f"'{'.'.join(map(str, where))}' must be finite", line)
    if positive and value <= 0:
        raise ConfigError(f"'{'.'.join(map(str, where))}' must be positive", line)
    return int(value) if integer else float(value)


def config_from_dict(raw: dict, lines: dict | None = None, source: str | None = None) -> ExperimentConfig:
    """Validate a parsed configuration mapping."""
    lines = lines or {}

    def fail(message, where=()):
        raise ConfigError(message, lines.get(tuple(where)), source)

    if not isinstance(raw, dict):
        fail("configuration must be a mapping")
    for key, value in raw.items():
        if key not in _SECTIONS:
            fail(f"unknown section '{key}'", (key,))
        allowed = _SECTIONS[key]
        if allowed is not None:
            if not isinstance(value, dict):
                fail(f"section '{key}' must be a mapping", (key,))
            for sub in value:
                if sub not in allowed:
                    fail(f"unknown key '{key}.{sub}'", (key, sub))
    return _validate(raw, lines, source)


def _validate(raw, lines, source) -> ExperimentConfig:
    def fail(message, where=()):
        raise ConfigError(message, lines.get(tuple(where)), source)

    def num(value, where, **kw):
        try:
            return _number(value, tuple(where), lines, **kw)
        except ConfigError as err:
            raise ConfigError(err.message, err.line, source) from None

    name = raw.get("name", "experiment")
    if not isinstance(name, str) or not name or "/" in name:
        fail("'name' must be a non-empty string without '/'", ("name",))

    model = raw.get("model")
    if model is None or "id" not in model:
        fail("'model.id' is required", ("model",))
    model_id = model["id"]
    if model_id not in BUILTIN_MODELS:
        fail(f"unknown model id '{model_id}' (known: {', '.join(sorted(BUILTIN_MODELS))})", ("model", "id"))
    model_params = model.get("params") or {}
    if not isinstance(model_params, dict):
        fail("'model.params' must be a mapping", ("model", "params"))
    for key, value in model_params.items():
        if key not in _MODEL_PARAMS[model_id]:
            fail(f"unknown parameter '{key}' for model '{model_id}'", ("model", "params", key))
        model_params[key] = num(value, ("model", "params", key), positive=True)

    proto = raw.get("protocol")
    if proto is None or "kind" not in proto:
        fail("'protocol.kind' is required", ("protocol",))
    kind = proto["kind"]
    if kind not in PROTOCOL_KINDS:
        fail(f"unknown protocol kind '{kind}' (known: {', '.join(PROTOCOL_KINDS)})", ("protocol", "kind"))
    params = dict(proto.get("params") or {})
    required, optional = _PROTOCOL_PARAMS[kind]
    for key in params:
        if key not in required | optional:
            fail(f"unknown parameter '{key}' for protocol '{kind}'", ("protocol", "params", key))
    for key in sorted(required - set(params)):
        fail(f"protocol '{kind}' needs parameter '{key}'", ("protocol", "params"))
    for key, value in params.items():
        where = ("protocol", "params", key)
        if kind == "piecewise":
            if not isinstance(value, list) or len(value) < 2:
                fail(f"'{key}' must be a list with at least two numbers", where)
            params[key] = [num(v, where + (i,)) for i, v in enumerate(value)]
        else:
            params[key] = num(value, where)
    if kind == "piecewise":
        if len(params["times"]) != len(params["values"]):
            fail("'times' and 'values' must have the same length", ("protocol", "params"))
        if np.any(np.diff(params["times"]) <= 0):
            fail("'times' must be strictly increasing", ("protocol", "params", "times"))
    if kind == "square-wave-rate" and params["nu"] <= 0:
        fail("'nu' must be positive", ("protocol", "params", "nu"))
    if kind == "lz-sweep" and (params["V"] == 0 or params["Z0"] <= 0):
        fail("lz-sweep needs V != 0 and Z0 > 0", ("protocol", "params"))
    disc = proto.get("discontinuities") or []
    if not isinstance(disc, list):
        fail("'protocol.discontinuities' must be a list", ("protocol", "discontinuities"))
    disc = [num(v, ("protocol", "discontinuities", i)) for i, v in enumerate(disc)]

    time = raw.get("time") or {}
    t_start = num(time.get("start", params.get("t0", 0.0)), ("time", "start"))
    if "end" in time:
        t_end = num(time["end"], ("time", "end"))
    elif kind == "lz-sweep":
        t_end = 2.0 * params["Z0"] / abs(params["V"])
    elif kind == "piecewise":
        t_end = params["times"][-1]
    else:
        fail("'time.end' is required", ("time",))
    if t_end == t_start:
        fail("'time.end' must differ from 'time.start'", ("time", "end"))
    chunk = num(time.get("chunk", DEFAULT_CHUNK), ("time", "chunk"), positive=True)

    integ = raw.get("integration") or {}
    primary = integ.get("primary", "hamilton")
    if primary not in PRIMARY_PATHS:
        fail(f"'integration.primary' must be one of {', '.join(PRIMARY_PATHS)}", ("integration", "primary"))
    oracle = integ.get("oracle", True)
    if not isinstance(oracle, bool):
        fail("'integration.oracle' must be true or false", ("integration", "oracle"))
    rtol = num(integ.get("rtol", 1e-11), ("integration", "rtol"), positive=True)
    if not MIN_TOL <= rtol <= MAX_TOL:
        fail(f"'integration.rtol' = {rtol:g} outside [{MIN_TOL:g}, {MAX_TOL:g}]", ("integration", "rtol"))
    atol = integ.get("atol")
    if atol is not None:
        atol = num(atol, ("integration", "atol"), positive=True)
    spp = num(integ.get("samples_per_period", SAMPLES_PER_PERIOD), ("integration", "samples_per_period"),
              integer=True)
    if spp < MIN_SAMPLES_PER_PERIOD:
        fail(f"'integration.samples_per_period' must be at least {MIN_SAMPLES_PER_PERIOD}",
             ("integration", "samples_per_period"))

    hier = raw.get("hierarchy") or {}
    order = num(hier.get("order", 1), ("hierarchy", "order"), integer=True)
    if not 1 <= order <= K_MAX:
        fail(f"'hierarchy.order' must be in 1..{K_MAX}", ("hierarchy", "order"))
    # piecewise tables have zero derivatives beyond the rate inside each piece,
    # so every kind supplies R^(k) for all k up to K_MAX
    branch = num(hier.get("branch", 0), ("hierarchy", "branch"), integer=True)
    if not 0 <= branch < 2:
        fail("'hierarchy.branch' must be 0 or 1 for the built-in models", ("hierarchy", "branch"))

    init = (raw.get("initial") or {}).get("state", "eigenstate")
    if isinstance(init, str):
        if init not in ("eigenstate", "adiabatic"):
            fail("'initial.state' must be eigenstate, adiabatic, or a list of amplitudes", ("initial", "state"))
    elif isinstance(init, list):
        amps = []
        for i, a in enumerate(init):
            where = ("initial", "state", i)
            if isinstance(a, list) and len(a) == 2:
                amps.append(complex(num(a[0], where), num(a[1], where)))
            else:
                amps.append(complex(num(a, where)))
        if len(amps) != 2:
            fail("'initial.state' needs one amplitude per level", ("initial", "state"))
        if np.linalg.norm(amps) == 0:
            fail("'initial.state' amplitudes are all zero", ("initial", "state"))
        init = amps
    else:
        fail("'initial.state' must be eigenstate, adiabatic, or a list of amplitudes", ("initial", "state"))

    out = raw.get("output") or {}
    out_dir = out.get("dir")
    if out_dir is not None and not isinstance(out_dir, str):
        fail("'output.dir' must be a path string", ("output", "dir"))
    stride = num(out.get("stride", 1), ("output", "stride"), integer=True, positive=True)
    workers = num((raw.get("sweep") or {}).get("workers", 1), ("sweep", "workers"), integer=True, positive=True)

    checks = raw.get("checks") or []
    if not isinstance(checks, list):
        fail("'checks' must be a list", ("checks",))
    for i, check in enumerate(checks):
        where = ("checks", i)
        if not isinstance(check, dict) or "stat" not in check:
            fail("each check needs a 'stat' entry", where)
        ops = [op for op in CHECK_OPS if op in check]
        extra = set(check) - {"stat", "rtol", *CHECK_OPS}
        if len(ops) != 1 or extra:
            fail(f"each check needs exactly one of {', '.join(CHECK_OPS)} (optionally rtol)", where)
        if "rtol" in check and ops[0] != "target":
            fail("'rtol' only applies to 'target' checks", where)

    return ExperimentConfig(
        name=name, model_id=model_id, model_params=model_params, protocol_kind=kind,
        protocol_params=params, t_start=t_start, t_end=t_end, chunk=chunk, primary=primary,
        oracle=oracle, rtol=rtol, atol=atol, samples_per_period=spp, order=order, branch=branch,
        initial=init, output_dir=out_dir, stride=stride, workers=workers, checks=list(checks),
        discontinuities=disc, raw=copy.deepcopy(raw))


def parse_config(text: str, source: str | None = None) -> ExperimentConfig:
    """Parse and validate YAML text; errors carry the offending line."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {getattr(err, 'problem', err)}",
                          None if mark is None else mark.line + 1, source) from None
    if node is None:
        raise ConfigError("empty configuration", 1, source)
    lines = _line_index(node)
    raw = yaml.safe_load(text)
    return config_from_dict(raw, lines, source)


def load_config(path) -> ExperimentConfig:
    """Read a configuration file or a preset name."""
    path = str(path)
    if path in preset_names():
        return load_preset(path)
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read configuration: {err.strerror}", None, path) from None
    return parse_config(text, path)


def preset_names() -> list[str]:
    """Names of the built-in experiment presets."""
    files = resources.files(__package__).joinpath("presets")
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".yaml"))


def preset_text(name: str) -> str:
    return resources.files(__package__).joinpath("presets", f"{name}.yaml").read_text()


def load_preset(name: str) -> ExperimentConfig:
    if name not in preset_names():
        raise ConfigError(f"unknown preset '{name}' (known: {', '.join(preset_names())})")
    return parse_config(preset_text(name), f"preset:{name}")


def resolve_output_dir(config: ExperimentConfig, override=None) -> Path:
    """Output folder: explicit override, then the config, then ``$ADIABATIC_HIERARCHY_OUT/<name>``,
    then ``./runs/<name>``."""
    if override is not None:
        return Path(override)
    if config.output_dir:
        return Path(config.output_dir)
    base = os.environ.get(OUTPUT_ENV)
    return Path(base) / config.name if base else Path("runs") / config.name
