"""Run configuration: dataclasses, validation, YAML load/emit.

Config files are YAML mappings with nested sections::

    algorithm: cd_adam
    T: 2000
    period: 4
    gamma: 0.4          # or "auto"
    topology: {kind: ring, K: 8, weight_rule: uniform_neighbor}
    adam: {eta: 0.001, tau: 0.001}
    compressor: {kind: scaled_sign}
    problem: {kind: logistic, d: 32, heterogeneity: 0.5, sigma: 0.1}

Omitted keys take the defaults below; unknown keys are rejected.
"""

from __future__ import annotations

import copy
import dataclasses
import itertools
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Union

import yaml

from .compression import COMPRESSOR_KINDS, CompressorSpec
from .optimizer import AdamHyper
from .problems import NOISE_KINDS, PROBLEM_KINDS, Problem, make_heterogeneous
from .topology import KINDS, WEIGHT_RULES, Topology, build_topology

__all__ = [
    "ALGORITHMS",
    "AdamSection",
    "CompressorSection",
    "ConfigError",
    "ProblemSpec",
    "RunConfig",
    "TopologySpec",
    "config_from_dict",
    "config_to_dict",
    "dump_config",
    "emit_config",
    "expand_grid",
    "load_config",
    "load_grid",
    "resolve_gamma",
]

ALGORITHMS = ("d_adam", "cd_adam", "d_psgd", "d_adam_vanilla")


class ConfigError(ValueError):
    """Malformed or inconsistent configuration; the message leads with the key path."""


@dataclass(frozen=True)
class TopologySpec:
    kind: str = "ring"
    K: int = 8
    weight_rule: str = "uniform_neighbor"

    def build(self) -> Topology:
        return build_topology(self.kind, self.K, self.weight_rule)


@dataclass(frozen=True)
class ProblemSpec:
    kind: str = "quadratic"
    d: int = 10
    heterogeneity: float = 0.5
    sigma: float = 0.1
    clip_G: float | None = None
    batch: int = 1
    noise: str = "gaussian"
    samples: int | None = None
    mu: float | None = None
    # None: derive the problem instance from the run seed
    seed: int | None = None

    def build(self, K: int, run_seed: int) -> Problem:
        return make_heterogeneous(
            self.kind,
            K,
            self.d,
            self.heterogeneity,
            run_seed if self.seed is None else self.seed,
            samples=self.samples,
            mu=self.mu,
            sigma=self.sigma,
            clip_G=self.clip_G,
            noise=self.noise,
            batch=self.batch,
        )


@dataclass(frozen=True)
class AdamSection:
    eta: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    tau: float = 1e-3
    # None: momentum for d_adam, raw gradient for cd_adam
    use_momentum_in_step: bool | None = None

    def hyper(self) -> AdamHyper:
        return AdamHyper(self.eta, self.beta1, self.beta2, self.tau)


@dataclass(frozen=True)
class CompressorSection:
    kind: str = "scaled_sign"
    k: int | None = None

    def spec(self) -> CompressorSpec:
        return CompressorSpec(self.kind, self.k)


@dataclass(frozen=True)
class RunConfig:
    algorithm: str = "d_adam"
    T: int = 1000
    seed: int = 0
    eval_every: int = 100
    period: int = 1
    gamma: float | str = 0.4
    init_scale: float = 0.0
    topology: TopologySpec = field(default_factory=TopologySpec)
    adam: AdamSection = field(default_factory=AdamSection)
    compressor: CompressorSection | None = None
    problem: ProblemSpec = field(default_factory=ProblemSpec)

    def __post_init__(self) -> None:
        _validate(self)

    @property
    def effective_period(self) -> int:
        return 1 if self.algorithm == "d_adam_vanilla" else self.period

    @property
    def use_momentum(self) -> bool:
        if self.adam.use_momentum_in_step is not None:
            return self.adam.use_momentum_in_step
        return self.algorithm in ("d_adam", "d_adam_vanilla")

    def with_overrides(self, **changes: Any) -> RunConfig:
        return replace(self, **changes)


def _fail(path: str, msg: str) -> None:
    raise ConfigError(f"{path}: {msg}")


def _validate(c: RunConfig) -> None:
    if c.algorithm not in ALGORITHMS:
        _fail("algorithm", f"must be one of {ALGORITHMS}, got {c.algorithm!r}")
    if c.T < 1:
        _fail("T", "must be >= 1")
    if c.seed < 0:
        _fail("seed", "must be >= 0")
    if c.eval_every < 1:
        _fail("eval_every", "must be >= 1")
    if c.period < 1:
        _fail("period", f"must be >= 1 (p >= 1), got {c.period}")
    if c.init_scale < 0:
        _fail("init_scale", "must be >= 0")
    if c.topology.kind not in KINDS:
        _fail("topology.kind", f"must be one of {KINDS}, got {c.topology.kind!r}")
    if c.topology.weight_rule not in WEIGHT_RULES:
        _fail("topology.weight_rule", f"must be one of {WEIGHT_RULES}, got {c.topology.weight_rule!r}")
    if c.topology.K < 1:
        _fail("topology.K", "must be >= 1")
    try:
        c.adam.hyper()
    except ValueError as exc:
        _fail("adam", str(exc))
    p = c.problem
    if p.kind not in PROBLEM_KINDS:
        _fail("problem.kind", f"must be one of {PROBLEM_KINDS}, got {p.kind!r}")
    if p.noise not in NOISE_KINDS:
        _fail("problem.noise", f"must be one of {NOISE_KINDS}, got {p.noise!r}")
    if p.d < 1:
        _fail("problem.d", "must be >= 1")
    if not 0.0 <= p.heterogeneity <= 1.0:
        _fail("problem.heterogeneity", "must lie in [0, 1]")
    if p.sigma < 0:
        _fail("problem.sigma", "must be >= 0")
    if p.clip_G is not None and p.clip_G <= 0:
        _fail("problem.clip_G", "must be > 0")
    if p.batch < 1:
        _fail("problem.batch", "must be >= 1")
    if c.algorithm == "cd_adam":
        if c.compressor is None:
            _fail("compressor", "compressor required for cd_adam")
        if isinstance(c.gamma, str):
            if c.gamma != "auto":
                _fail("gamma", f"must be a number in (0, 1] or 'auto', got {c.gamma!r}")
        elif not 0.0 < c.gamma <= 1.0:
            _fail("gamma", f"must lie in (0, 1], got {c.gamma}")
    if c.compressor is not None:
        if c.compressor.kind not in COMPRESSOR_KINDS:
            _fail("compressor.kind", f"must be one of {COMPRESSOR_KINDS}, got {c.compressor.kind!r}")
        try:
            c.compressor.spec().guaranteed_delta(p.d)
        except ValueError as exc:
            _fail("compressor.k", str(exc))


def resolve_gamma(config: RunConfig, topology: Topology) -> float:
    """Numeric consensus step size; ``"auto"`` uses the stability value from the consensus analysis."""
    if not isinstance(config.gamma, str):
        return float(config.gamma)
    rho = topology.spectral_gap
    beta = topology.beta
    delta = config.compressor.spec().guaranteed_delta(config.problem.d)
    return rho * delta / (16 * rho + rho**2 + 4 * beta**2 + 2 * rho * beta**2 - 8 * rho * delta)


_TYPE_NAMES = {int: "integer", float: "number", str: "string", bool: "boolean"}


def _coerce(value: Any, tp: Any, path: str) -> Any:
    origin = typing.get_origin(tp)
    if origin is Union or type(tp).__name__ == "UnionType":
        args = typing.get_args(tp)
        if value is None and type(None) in args:
            return None
        errors = []
        for arg in args:
            if arg is type(None):
                continue
            try:
                return _coerce(value, arg, path)
            except ConfigError as exc:
                errors.append(str(exc))
        names = " or ".join(_TYPE_NAMES.get(a, getattr(a, "__name__", str(a))) for a in args if a is not type(None))
        _fail(path, f"expected {names}, got {type(value).__name__} {value!r}")
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            _fail(path, f"expected a mapping, got {type(value).__name__}")
        return _build(tp, value, path)
    if tp is bool:
        if not isinstance(value, bool):
            _fail(path, f"expected boolean, got {type(value).__name__} {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            _fail(path, f"expected integer, got {type(value).__name__} {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            _fail(path, f"expected number, got {type(value).__name__} {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            _fail(path, f"expected string, got {type(value).__name__} {value!r}")
        return value
    raise TypeError(f"unsupported config type {tp!r}")


def _build(cls: type, data: dict, prefix: str = "") -> Any:
    hints = typing.get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    for key in data:
        if key not in names:
            where = f"{prefix}.{key}" if prefix else str(key)
            _fail(where, "unknown key")
    kwargs = {}
    for name in names:
        if name in data:
            where = f"{prefix}.{name}" if prefix else name
            kwargs[name] = _coerce(data[name], hints[name], where)
    if cls is RunConfig and kwargs.get("algorithm") == "cd_adam" and "compressor" not in kwargs:
        _fail("compressor", "compressor required for cd_adam")
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        _fail(prefix or "<root>", str(exc))


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"<root>: expected a mapping, got {type(data).__name__}")
    if data.get("compressor") == {} or ("compressor" in data and data["compressor"] is None):
        if data.get("algorithm") == "cd_adam":
            _fail("compressor", "compressor required for cd_adam")
    return _build(RunConfig, data)


def _strip_none(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _strip_none(v) for k, v in obj.items() if v is not None}
    return obj


def config_to_dict(config: RunConfig) -> dict:
    """Plain-dict form with every default expanded; ``None`` entries are omitted."""
    return _strip_none(dataclasses.asdict(config))


def emit_config(config: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(config), sort_keys=False, default_flow_style=False)


def dump_config(config: RunConfig, path: str | Path) -> None:
    Path(path).write_text(emit_config(config))


def _read_yaml(path: str | Path) -> Any:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {p}: {exc.strerror or exc}") from exc
    try:
        return yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"<root>: YAML parse error in {p}: {exc}") from exc


def load_config(path: str | Path) -> RunConfig:
    """Read and validate a single-run config file (no grid lists allowed)."""
    data = _read_yaml(path)
    grid = _grid_keys(data)
    if grid:
        raise ConfigError(f"{grid[0]}: lists define a sweep grid; use the sweep subcommand")
    return config_from_dict(data)


def _grid_keys(data: Any, prefix: str = "") -> list[str]:
    keys = []
    if isinstance(data, dict):
        for k, v in data.items():
            path = f"{prefix}.{k}" if prefix else str(k)
            if isinstance(v, list):
                keys.append(path)
            else:
                keys.extend(_grid_keys(v, path))
    return keys


def _set_path(data: dict, path: str, value: Any) -> None:
    parts = path.split(".")
    for p in parts[:-1]:
        data = data[p]
    data[parts[-1]] = value


def expand_grid(data: dict) -> list[tuple[dict, RunConfig]]:
    """Cartesian product over every list-valued key.

    Returns ``(assignment, config)`` pairs in row-major order of the keys as
    they appear in the file.
    """
    keys = _grid_keys(data)
    values = []
    for key in keys:
        node: Any = data
        for p in key.split("."):
            node = node[p]
        if not node:
            _fail(key, "grid list is empty")
        values.append(node)
    out = []
    for combo in itertools.product(*values):
        child = copy.deepcopy(data)
        for key, v in zip(keys, combo):
            _set_path(child, key, v)
        out.append((dict(zip(keys, combo)), config_from_dict(child)))
    return out


def load_grid(path: str | Path) -> list[tuple[dict, RunConfig]]:
    data = _read_yaml(path)
    if not isinstance(data, dict):
        raise ConfigError(f"<root>: expected a mapping, got {type(data).__name__}")
    return expand_grid(data)
