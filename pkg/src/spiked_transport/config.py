"""Experiment configuration: YAML loading and schema validation.

Validation errors carry the line of the offending key (or of the enclosing
mapping when a key is missing), so ``ConfigurationError`` messages read
``config.yaml:7: n_list must be strictly increasing``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigurationError
from .measures import SEED_MAX, sampler_from_config, spec_from_config
from .wpp import WppOptions

KINDS = ("rates_plugin", "rates_wpp", "spike_recovery", "concentration", "hardness_suite", "solve")

REQUIRED = {
    "rates_plugin": ("n_list", "replicates"),
    "rates_wpp": ("model", "n_list", "replicates"),
    "spike_recovery": ("model", "n_list", "replicates"),
    "concentration": ("sampler", "n_list", "replicates"),
    "hardness_suite": (),
    "solve": ("mu", "nu"),
}

ALLOWED = {
    "kind", "seed", "p", "k", "d", "n_list", "replicates", "sampler", "model", "truth",
    "wpp", "compare_plugin", "output", "mu", "nu", "hardness",
}

HARDNESS_DEFAULTS = {"m_list": [2, 4, 8], "orders": [1, 2, 3], "eps_list": [1 / 6, 1 / 12]}
MIN_CONCENTRATION_REPLICATES = 200


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    seed: int = 0
    p: float = 1.0
    k: int = 1
    n_list: tuple[int, ...] = ()
    replicates: int = 0
    sampler: dict[str, Any] | None = None
    model: dict[str, Any] | None = None
    truth: float | None = None
    wpp: dict[str, Any] = field(default_factory=dict)
    compare_plugin: bool = False
    output: str | None = None
    mu: str | None = None
    nu: str | None = None
    hardness: dict[str, Any] = field(default_factory=lambda: dict(HARDNESS_DEFAULTS))
    source: str = "<config>"

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind, "seed": self.seed, "p": self.p}
        if self.kind in ("rates_wpp", "spike_recovery"):
            out["k"] = self.k
        if self.n_list:
            out["n_list"] = list(self.n_list)
            out["replicates"] = self.replicates
        for name in ("sampler", "model", "truth", "output", "mu", "nu"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        if self.kind in ("rates_wpp", "spike_recovery"):
            out["wpp"] = dict(self.wpp)
        if self.compare_plugin:
            out["compare_plugin"] = True
        if self.kind == "hardness_suite":
            out["hardness"] = dict(self.hardness)
        return out

    def wpp_options(self) -> WppOptions:
        return WppOptions(**{"seed": self.seed, **self.wpp})

    def with_overrides(self, seed: int | None = None, output: str | None = None) -> "ExperimentConfig":
        changes = self.__dict__ | {}
        if seed is not None:
            changes["seed"] = _check_seed(seed, f"{self.source}: --seed")
        if output is not None:
            changes["output"] = output
        return ExperimentConfig(**changes)


def _check_seed(seed, where: str) -> int:
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed <= SEED_MAX:
        raise ConfigurationError(f"{where}: seed must be an unsigned 64-bit integer")
    return seed


def _line_map(node, path=(), out=None) -> dict[tuple, int]:
    """1-based line of every mapping key and sequence item, keyed by path."""
    out = {} if out is None else out
    out.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            sub = path + (key.value,)
            out[sub] = key.start_mark.line + 1
            _line_map(value, sub, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, value in enumerate(node.value):
            _line_map(value, path + (i,), out)
    return out


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse and validate a YAML experiment config."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 1
        raise ConfigurationError(f"{source}:{line}: invalid YAML ({getattr(exc, 'problem', exc)})") from None
    if not isinstance(data, dict):
        raise ConfigurationError(f"{source}:1: config must be a mapping")
    lines = _line_map(root)

    def fail(path, message):
        line = lines.get(tuple(path), lines.get(tuple(path[:1]), 1))
        raise ConfigurationError(f"{source}:{line}: {message}")

    for key in data:
        if key not in ALLOWED:
            fail([key], f"unknown field {key!r}")
    kind = data.get("kind")
    if kind not in KINDS:
        fail(["kind"], f"kind must be one of {', '.join(KINDS)}")
    for key in REQUIRED[kind]:
        if key not in data:
            fail([], f"{kind} requires field {key!r}")
    if kind == "rates_plugin" and ("sampler" in data) == ("model" in data):
        fail([], "rates_plugin requires exactly one of 'sampler' or 'model'")

    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed <= SEED_MAX:
        fail(["seed"], "seed must be an unsigned 64-bit integer")
    p = data.get("p", 2.0 if kind in ("rates_wpp", "spike_recovery") else 1.0)
    if isinstance(p, bool) or not isinstance(p, (int, float)) or not p >= 1:
        fail(["p"], "p must be a number >= 1")
    k = data.get("k", 1)
    if isinstance(k, bool) or not isinstance(k, int) or k < 1:
        fail(["k"], "k must be a positive integer")

    n_list = data.get("n_list", [])
    if "n_list" in data:
        if not isinstance(n_list, list) or not n_list:
            fail(["n_list"], "n_list must be a non-empty list")
        for i, n in enumerate(n_list):
            if isinstance(n, bool) or not isinstance(n, int) or n < 1:
                fail(["n_list", i], "n_list entries must be positive integers")
        if any(b <= a for a, b in zip(n_list, n_list[1:])):
            fail(["n_list"], "n_list must be strictly increasing")
    replicates = data.get("replicates", 0)
    if "replicates" in data:
        if isinstance(replicates, bool) or not isinstance(replicates, int) or replicates < 1:
            fail(["replicates"], "replicates must be a positive integer")
        if kind == "concentration" and replicates < MIN_CONCENTRATION_REPLICATES:
            fail(["replicates"], f"concentration needs at least {MIN_CONCENTRATION_REPLICATES} replicates")

    if "sampler" in data:
        try:
            sampler_from_config(data["sampler"])
        except (ConfigurationError, TypeError, ValueError) as exc:
            fail(["sampler"], f"invalid sampler: {exc}")
    if "model" in data:
        try:
            spec = spec_from_config(data["model"])
        except (ConfigurationError, TypeError, ValueError) as exc:
            fail(["model"], f"invalid model: {exc}")
        if kind in ("rates_wpp", "spike_recovery") and k > spec.d:
            fail(["k"], f"k={k} exceeds the model dimension {spec.d}")
    if "d" in data:
        dim = data["d"]
        if isinstance(dim, bool) or not isinstance(dim, int) or dim < 1:
            fail(["d"], "d must be a positive integer")
        generator_dim = None
        if "model" in data:
            generator_dim = spec.d
        elif "sampler" in data:
            generator_dim = sampler_from_config(data["sampler"]).dim
        if generator_dim is not None and dim != generator_dim:
            fail(["d"], f"d={dim} disagrees with the generator dimension {generator_dim}")

    truth = data.get("truth")
    if truth is not None and (isinstance(truth, bool) or not isinstance(truth, (int, float)) or truth < 0):
        fail(["truth"], "truth must be a nonnegative number")
    wpp = data.get("wpp", {}) or {}
    if not isinstance(wpp, dict):
        fail(["wpp"], "wpp must be a mapping")
    try:
        WppOptions(**{"seed": seed, **wpp})
    except (ConfigurationError, TypeError) as exc:
        fail(["wpp"], f"invalid wpp options: {exc}")
    hardness = {**HARDNESS_DEFAULTS, **(data.get("hardness") or {})}
    if set(hardness) != set(HARDNESS_DEFAULTS):
        fail(["hardness"], f"hardness accepts only {', '.join(HARDNESS_DEFAULTS)}")
    for name in ("mu", "nu", "output"):
        if name in data and not isinstance(data[name], str):
            fail([name], f"{name} must be a path string")

    return ExperimentConfig(
        kind=kind,
        seed=seed,
        p=float(p),
        k=k,
        n_list=tuple(n_list),
        replicates=replicates,
        sampler=data.get("sampler"),
        model=data.get("model"),
        truth=None if truth is None else float(truth),
        wpp=dict(wpp),
        compare_plugin=bool(data.get("compare_plugin", False)),
        output=data.get("output"),
        mu=data.get("mu"),
        nu=data.get("nu"),
        hardness=hardness,
        source=source,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"{path}: cannot read config ({exc.strerror})") from None
    config = parse_config(text, str(path))
    base = path.parent
    resolved = {}
    for name in ("mu", "nu"):
        value = getattr(config, name)
        if value is not None and not Path(value).is_absolute():
            resolved[name] = str(base / value)
    return ExperimentConfig(**(config.__dict__ | resolved)) if resolved else config


__all__ = ["ExperimentConfig", "KINDS", "load_config", "parse_config"]
