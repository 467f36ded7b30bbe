"""YAML experiment configuration.

Schema (every key optional, defaults shown in the dataclasses below)::

    seed: 0
    output: out                      # overridden by $OMNIBOUNDS_OUT
    threads: 1                       # overridden by $OMNIBOUNDS_THREADS
    data:
      kind: synthetic                # synthetic | idx
      n_train: 1200                  # training pool, split k ways
      n_test: 2000
      n_val: 2000
      d_in: 10
      classes: 3
      separation: 2.0
      images: null                   # idx only
      labels: null                   # idx only
    problem: {model: logistic, width: 16, activation: tanh, capped: true}
    split: {k: 6}
    train: {lr: [0.05], batch_size: [32], steps: 500, momentum: 0.9}
    bounds:
      names: [flatness, wang, neu]
      lambdas: [1, 1000, 1.0e9]
      h_flat: delta
      h_pen: empirical
      j: delta
      probes: 0                      # 0 = exact trace
      rel_tol: 0.01
      max_iter: 20
      population_hessian: false
    suites:
      clb: {d: 5, n: 100, lr: 0.01, steps: 100, trials: 100}
      smooth: {trials: 20, n: 20, steps: 30, lr: 0.1}
      lemmas: {m: 100000}
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataSpec:
    kind: str = "synthetic"
    n_train: int = 1200
    n_test: int = 2000
    n_val: int = 2000
    d_in: int = 10
    classes: int = 3
    separation: float = 2.0
    images: str | None = None
    labels: str | None = None


@dataclass(frozen=True)
class ProblemSpec:
    model: str = "logistic"
    width: int = 16
    activation: str = "tanh"
    capped: bool = True


@dataclass(frozen=True)
class SplitSpec:
    k: int = 6


@dataclass(frozen=True)
class TrainSpec:
    lr: tuple = (0.05,)
    batch_size: tuple = (32,)
    steps: int = 500
    momentum: float = 0.9


@dataclass(frozen=True)
class BoundSpec:
    names: tuple = ("flatness", "wang", "neu")
    lambdas: tuple = (1.0, 1e3, 1e9)
    h_flat: str = "delta"
    h_pen: str = "empirical"
    j: str = "delta"
    probes: int = 0
    rel_tol: float = 0.01
    max_iter: int = 20
    population_hessian: bool = False


@dataclass(frozen=True)
class ClbSpec:
    d: int = 5
    n: int = 100
    lr: float = 0.01
    steps: int = 100
    trials: int = 100


@dataclass(frozen=True)
class SmoothSpec:
    trials: int = 20
    n: int = 20
    steps: int = 30
    lr: float = 0.1


@dataclass(frozen=True)
class LemmaSpec:
    m: int = 100_000


@dataclass(frozen=True)
class SuiteSpec:
    clb: ClbSpec = field(default_factory=ClbSpec)
    smooth: SmoothSpec = field(default_factory=SmoothSpec)
    lemmas: LemmaSpec = field(default_factory=LemmaSpec)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    output: str = "out"
    threads: int = 1
    data: DataSpec = field(default_factory=DataSpec)
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    split: SplitSpec = field(default_factory=SplitSpec)
    train: TrainSpec = field(default_factory=TrainSpec)
    bounds: BoundSpec = field(default_factory=BoundSpec)
    suites: SuiteSpec = field(default_factory=SuiteSpec)

    def grid(self) -> list:
        """``(cell_id, lr, batch_size)`` in row-major order."""
        return [(i * len(self.train.batch_size) + j, lr, b)
                for i, lr in enumerate(self.train.lr)
                for j, b in enumerate(self.train.batch_size)]

    def as_dict(self) -> dict:
        return _plain(asdict(self))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _coerce(value, default, where):
    # PyYAML reads "1e9" as a string; numbers follow the default's type.
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, (int, float)) and not isinstance(default, bool):
        try:
            out = float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{where}: expected a number, got {value!r}") from None
        if isinstance(default, int):
            if out != int(out):
                raise ConfigError(f"{where}: expected an integer, got {value!r}")
            return int(out)
        return out
    if isinstance(default, tuple):
        items = value if isinstance(value, (list, tuple)) else [value]
        proto = default[0] if default else None
        return tuple(_coerce(v, proto, f"{where}[{i}]") if proto is not None else v
                     for i, v in enumerate(items))
    if value is not None and default is None or isinstance(default, str):
        return None if value is None else str(value)
    return value


def _build(cls, tree, where):
    if tree is None:
        tree = {}
    if not isinstance(tree, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(tree) - set(known))
    if unknown:
        raise ConfigError(f"{where + '.' if where else ''}{unknown[0]}: unknown key")
    proto = cls()
    kwargs = {}
    for name, value in tree.items():
        key = f"{where}.{name}" if where else name
        default = getattr(proto, name)
        if hasattr(default, "__dataclass_fields__"):
            kwargs[name] = _build(type(default), value, key)
        else:
            kwargs[name] = _coerce(value, default, key)
    return cls(**kwargs)


def validate(cfg: ExperimentConfig, base: Path | None = None) -> ExperimentConfig:
    """Check ranges and file references; relative paths resolve against ``base``."""
    if not cfg.train.lr:
        raise ConfigError("train.lr: grid is empty")
    if not cfg.train.batch_size:
        raise ConfigError("train.batch_size: grid is empty")
    if not cfg.bounds.names:
        raise ConfigError("bounds.names: list is empty")
    bad = [b for b in cfg.bounds.names if b not in ("flatness", "wang", "neu")]
    if bad:
        raise ConfigError(f"bounds.names: unknown bound {bad[0]!r}")
    if "flatness" in cfg.bounds.names and not cfg.bounds.lambdas:
        raise ConfigError("bounds.lambdas: list is empty")
    if cfg.problem.model not in ("logistic", "mlp"):
        raise ConfigError(f"problem.model: unknown model {cfg.problem.model!r}")
    if cfg.split.k < 2:
        raise ConfigError("split.k: need at least 2")
    if cfg.threads < 1:
        raise ConfigError("threads: must be >= 1")
    data = cfg.data
    if data.kind == "idx":
        paths = {}
        for name in ("images", "labels"):
            value = getattr(data, name)
            if value is None:
                raise ConfigError(f"data.{name}: required for idx data")
            p = Path(value)
            if base is not None and not p.is_absolute():
                p = base / p
            if not p.is_file():
                raise ConfigError(f"data.{name}: file not found: {value}")
            paths[name] = str(p)
        cfg = replace(cfg, data=replace(data, **paths))
    elif data.kind != "synthetic":
        raise ConfigError(f"data.kind: unknown kind {data.kind!r}")
    return cfg


def apply_env(cfg: ExperimentConfig, env=None) -> ExperimentConfig:
    env = os.environ if env is None else env
    if env.get("OMNIBOUNDS_OUT"):
        cfg = replace(cfg, output=env["OMNIBOUNDS_OUT"])
    if env.get("OMNIBOUNDS_THREADS"):
        cfg = replace(cfg, threads=_coerce(env["OMNIBOUNDS_THREADS"], 1, "OMNIBOUNDS_THREADS"))
    return cfg


def from_dict(tree: dict, base: Path | None = None) -> ExperimentConfig:
    return validate(_build(ExperimentConfig, tree, ""), base)


def load_config(path=None, env=None) -> ExperimentConfig:
    if path is None:
        return apply_env(validate(ExperimentConfig()), env)
    path = Path(path)
    try:
        tree = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    return apply_env(from_dict(tree or {}, path.parent), env)
