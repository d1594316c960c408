"""JSON experiment configuration: parsing and validation.

Every key is checked before any compute; unknown keys are rejected with a
close-match suggestion and ill-typed values name the field and the expected
type.
"""

from __future__ import annotations

import difflib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from moe_superlab.datagen import FeatureDistribution, importance_exponential, importance_shuffled
from moe_superlab.models import ROUTER_VARIANTS, ArchSpec, RouterInit
from moe_superlab.training import TrainConfig

KINDS = ("train", "fpd", "loss", "phase", "partition", "specialize", "verify-analytic", "verify-cones")

# kind-specific defaults; training defaults per kind differ only in lb_coeff
SECTION_SCHEMAS: dict[str, dict[str, type | tuple]] = {
    "train": {
        "steps": int, "batch_size": int, "learning_rate": float, "adam_betas": list, "adam_eps": float,
        "lb_coeff": float, "seed": int, "resample_each_step": bool, "log_every": int,
    },
    "distribution": {
        "n": int, "sparsity": float, "density": float, "importance": (str, list, float),
        "importance_base": float, "importance_seed": int, "last_feature_scale": float,
    },
    "arch": {"n": int, "m": int, "E": int, "k": int, "router_init": (str, dict)},
    "router_init": {"variant": str, "features_per_expert": int, "seed": int, "gain": float},
    "phase": {"sparsity_range": list, "importance_range": list, "resolution": int, "restarts": int},
    "partition": {"seeds": int, "resolution": int},
    "specialize": {"models_per_scheme": int, "schemes": list, "samples": int,
                   "norm_threshold": float, "mono_threshold": float},
    "analytic": {"n": int, "m": int, "a": int, "samples": int, "sparsity": float},
    "cones": {"routers": int, "trials": int, "E": int, "n": int},
}

TOP_LEVEL: dict[str, type | tuple] = {
    "kind": str, "seed": int, "out": str, "workers": int, "archs": list, "arch": dict,
    "distribution": dict, "train": dict, "densities": list, "runs_per_point": int,
    "phase": dict, "partition": dict, "specialize": dict, "analytic": dict, "cones": dict,
    "description": str,
}

KIND_REQUIRED = {
    "train": ("arch", "distribution"),
    "fpd": ("archs", "densities"),
    "loss": ("archs", "densities"),
    "phase": ("archs",),
    "partition": ("arch",),
    "specialize": ("arch", "distribution"),
    "verify-analytic": (),
    "verify-cones": (),
}


class ConfigError(ValueError):
    """Invalid experiment configuration."""


def _type_name(t) -> str:
    if isinstance(t, tuple):
        return " or ".join(_type_name(x) for x in t)
    return {int: "integer", float: "number", str: "string", bool: "boolean", list: "list", dict: "object"}[t]


def _check_type(path: str, value, expected) -> None:
    types = expected if isinstance(expected, tuple) else (expected,)
    for t in types:
        if t is float and isinstance(value, (int, float)) and not isinstance(value, bool):
            return
        if t is int and isinstance(value, int) and not isinstance(value, bool):
            return
        if t not in (int, float) and isinstance(value, t):
            return
    raise ConfigError(f"field '{path}' must be {_type_name(expected)}, got {type(value).__name__} {value!r}")


def _check_keys(section: str, data: dict, schema: dict, extra_candidates=()) -> None:
    for key, value in data.items():
        if key not in schema:
            candidates = list(schema) + list(extra_candidates)
            close = difflib.get_close_matches(key, candidates, n=1, cutoff=0.6)
            hint = f" (did you mean '{close[0]}'?)" if close else ""
            where = f" in '{section}'" if section else ""
            raise ConfigError(f"unknown key '{key}'{where}{hint}")
        _check_type(f"{section}.{key}" if section else key, value, schema[key])


def _router_init(value, path: str) -> RouterInit:
    if isinstance(value, str):
        value = {"variant": value}
    _check_keys(path, value, SECTION_SCHEMAS["router_init"])
    if value.get("variant", "xavier") not in ROUTER_VARIANTS:
        raise ConfigError(f"field '{path}.variant' must be one of {ROUTER_VARIANTS}, got {value.get('variant')!r}")
    try:
        return RouterInit.from_dict(value)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def parse_arch(d: dict, path: str = "arch") -> ArchSpec:
    _check_keys(path, d, SECTION_SCHEMAS["arch"])
    for req in ("n", "m"):
        if req not in d:
            raise ConfigError(f"field '{path}.{req}' is required (integer)")
    try:
        return ArchSpec(int(d["n"]), int(d["m"]), int(d.get("E", 1)), int(d.get("k", 1)),
                        _router_init(d.get("router_init", "xavier"), f"{path}.router_init"))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def parse_train(d: dict, defaults: TrainConfig) -> TrainConfig:
    _check_keys("train", d, SECTION_SCHEMAS["train"])
    values = {f.name: getattr(defaults, f.name) for f in fields(TrainConfig)}
    values.update(d)
    if "adam_betas" in d:
        if len(d["adam_betas"]) != 2:
            raise ConfigError("field 'train.adam_betas' must be a list of two numbers")
        values["adam_betas"] = tuple(float(b) for b in d["adam_betas"])
    try:
        return TrainConfig(**values)
    except ValueError as exc:
        raise ConfigError(f"train: {exc}") from exc


def parse_distribution(d: dict, n_default: int | None = None) -> FeatureDistribution:
    _check_keys("distribution", d, SECTION_SCHEMAS["distribution"])
    n = d.get("n", n_default)
    if n is None:
        raise ConfigError("field 'distribution.n' is required (integer)")
    if "sparsity" in d and "density" in d:
        raise ConfigError("give only one of 'distribution.sparsity' and 'distribution.density'")
    sparsity = 1.0 - d["density"] if "density" in d else d.get("sparsity", 0.0)
    imp = d.get("importance", "uniform")
    base = d.get("importance_base", 0.7)
    if isinstance(imp, list):
        importance = imp
    elif isinstance(imp, (int, float)):
        importance = importance_exponential(n, float(imp))
    elif imp == "uniform":
        importance = None
    elif imp == "exponential":
        importance = importance_exponential(n, base)
    elif imp == "shuffled":
        importance = importance_shuffled(n, base, d.get("importance_seed", 0))
    else:
        raise ConfigError(
            f"field 'distribution.importance' must be 'uniform', 'exponential', 'shuffled', a base or a list, got {imp!r}"
        )
    try:
        return FeatureDistribution(int(n), float(sparsity), importance, float(d.get("last_feature_scale", 1.0)))
    except ValueError as exc:
        raise ConfigError(f"distribution: {exc}") from exc


def default_train(kind: str) -> TrainConfig:
    return TrainConfig(lb_coeff=0.01 if kind == "phase" else 0.0)


@dataclass
class ExperimentConfig:
    kind: str
    seed: int = 0
    out: str = "runs"
    workers: int | None = None
    archs: list[ArchSpec] = field(default_factory=list)
    distribution: FeatureDistribution | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    densities: list[float] = field(default_factory=list)
    runs_per_point: int = 5
    options: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @property
    def arch(self) -> ArchSpec:
        return self.archs[0]


def validate_config(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    extra = [k for schema in SECTION_SCHEMAS.values() for k in schema]
    _check_keys("", data, TOP_LEVEL, extra_candidates=[f"train.{k}" for k in SECTION_SCHEMAS["train"]] if extra else ())
    kind = data.get("kind")
    if kind is None:
        raise ConfigError(f"field 'kind' is required (one of {KINDS})")
    if kind not in KINDS:
        close = difflib.get_close_matches(kind, KINDS, n=1)
        hint = f" (did you mean '{close[0]}'?)" if close else ""
        raise ConfigError(f"field 'kind' must be one of {KINDS}, got {kind!r}{hint}")
    for req in KIND_REQUIRED[kind]:
        if req not in data:
            raise ConfigError(f"field '{req}' is required for kind '{kind}'")

    if "archs" in data:
        archs = []
        for i, a in enumerate(data["archs"]):
            _check_type(f"archs[{i}]", a, dict)
            archs.append(parse_arch(a, f"archs[{i}]"))
    elif "arch" in data:
        archs = [parse_arch(data["arch"])]
    else:
        archs = []

    dist = None
    if "distribution" in data:
        dist = parse_distribution(data["distribution"], archs[0].n if archs else None)
        for i, a in enumerate(archs):
            if a.n != dist.n:
                raise ConfigError(f"arch n={a.n} does not match distribution n={dist.n}")

    train = parse_train(data.get("train", {}), default_train(kind))

    densities = [float(x) for x in data.get("densities", [])]
    for i, x in enumerate(data.get("densities", [])):
        _check_type(f"densities[{i}]", x, float)
        if not 0.0 < float(x) <= 1.0:
            raise ConfigError(f"field 'densities[{i}]' must lie in (0, 1], got {x}")

    options = {}
    for section in ("phase", "partition", "specialize", "analytic", "cones"):
        if section in data:
            _check_keys(section, data[section], SECTION_SCHEMAS[section])
            options[section] = dict(data[section])
    if "specialize" in options:
        for i, s in enumerate(options["specialize"].get("schemes", [])):
            _check_type(f"specialize.schemes[{i}]", s, (str, dict))
            options["specialize"]["schemes"][i] = _router_init(s, f"specialize.schemes[{i}]")
            options["specialize"]["schemes"][i].validate(archs[0].n, archs[0].E)
    if "phase" in options:
        for key in ("sparsity_range", "importance_range"):
            if key in options["phase"]:
                rng = options["phase"][key]
                if len(rng) != 2 or not all(isinstance(v, (int, float)) for v in rng):
                    raise ConfigError(f"field 'phase.{key}' must be a list of two numbers")
                options["phase"][key] = tuple(float(v) for v in rng)
    if kind == "partition" and archs and (archs[0].n != 2 or archs[0].k != 1):
        raise ConfigError("partition experiments need arch n=2 and k=1")
    if kind == "verify-analytic":
        an = options.get("analytic", {})
        n, m, a = an.get("n", 6), an.get("m", 2), an.get("a", 2)
        if not 1 <= a <= m <= n:
            raise ConfigError(f"analytic construction needs 1 <= a <= m <= n, got a={a}, m={m}, n={n}")

    if "runs_per_point" in data and data["runs_per_point"] < 1:
        raise ConfigError("field 'runs_per_point' must be >= 1")

    return ExperimentConfig(
        kind=kind,
        seed=data.get("seed", 0),
        out=data.get("out", "runs"),
        workers=data.get("workers"),
        archs=archs,
        distribution=dist,
        train=train,
        densities=densities,
        runs_per_point=data.get("runs_per_point", 5),
        options=options,
        raw=data,
    )


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return validate_config(data)
