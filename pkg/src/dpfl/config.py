"""Plain-text run configuration.

One ``key = value`` pair per line; ``#`` starts a comment; blank lines are
ignored.  Keys (``*`` = required)::

    mode*                     dpfl | local_only | fedavg | random_graph
    num_clients*              int
    budget*                   int or "unbounded"
    rounds*                   int (dpfl/random_graph spend 2 of them on preprocessing)
    seed*                     unsigned 64-bit int; every random stream derives from it
    tau_init                  int, local epochs before graph construction   (5)
    tau_train                 int, local epochs per round                   (1)
    refresh_period            int, greedy re-selection every P rounds       (1)
    coin_mode                 lockstep | mixed                              (lockstep)
    sgd.learning_rate         float (0.05)
    sgd.weight_decay          float (0.001)
    sgd.momentum              float (0.9)
    sgd.batch_size            int   (16)
    dataset.num_classes       int   (10)
    dataset.num_features      int   (20)
    dataset.samples_per_class int   (150)
    dataset.class_center_scale float (3.0)
    dataset.noise_sigma       float (1.5)
    partition.scheme          dirichlet | pathological | natural_file (dirichlet)
    partition.alpha           float (0.1)
    partition.classes_per_client int (3)
    partition.path            CSV path for natural_file, relative to the config file
    partition.val_fraction    float (0.2)
    partition.test_fraction   float (0.2)
    malicious.fraction        float in [0, 1); setting any malicious.* key enables label flipping
    malicious.permutation_seed int (0)
    malicious.runs_ggc        true | false (true)

The dataset and partition seeds are always taken from ``seed``.
"""
from __future__ import annotations

from dataclasses import fields, replace
from pathlib import Path

from .data import DatasetSpec, PartitionSpec
from .engine import MaliciousSpec, RunConfig
from .errors import ConfigError
from .model import SgdConfig

REQUIRED = ("mode", "num_clients", "budget", "rounds", "seed")

_SECTIONS = {
    "sgd": (SgdConfig, {"epochs"}),
    "dataset": (DatasetSpec, {"seed"}),
    "partition": (PartitionSpec, {"seed", "num_clients"}),
    "malicious": (MaliciousSpec, set()),
}
_TOP = {"mode": str, "num_clients": int, "budget": "budget", "rounds": int, "seed": int,
        "tau_init": int, "tau_train": int, "refresh_period": int, "coin_mode": str}


def _field_types(cls, skip):
    hints = {"int": int, "float": float, "str": str, "bool": bool, "str | None": str}
    return {f.name: hints[f.type] for f in fields(cls) if f.name not in skip}


def _convert(kind, raw: str):
    if kind == "budget":
        return None if raw.lower() in ("unbounded", "inf", "none") else _convert(int, raw)
    if kind is bool:
        low = raw.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ValueError(f"expected true/false, got {raw!r}")
    if kind is int:
        return int(raw, 0)
    return kind(raw)


def parse_config(text: str, source: str = "<config>", base_dir: Path | None = None) -> RunConfig:
    values: dict[str, tuple[int, object]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} (first set on line {values[key][0]})")
        if "." in key:
            section, name = key.split(".", 1)
            if section not in _SECTIONS or name not in _field_types(*_SECTIONS[section]):
                raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
            kind = _field_types(*_SECTIONS[section])[name]
        elif key in _TOP:
            kind = _TOP[key]
        else:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = (lineno, _convert(kind, raw))
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None

    missing = [k for k in REQUIRED if k not in values]
    if missing:
        raise ConfigError(f"{source}: missing required key {missing[0]!r}")

    def section(name):
        return {k.split(".", 1)[1]: v for k, (_, v) in values.items() if k.startswith(name + ".")}

    try:
        part = section("partition")
        if part.get("path") and base_dir is not None and not Path(part["path"]).is_absolute():
            part["path"] = str(base_dir / part["path"])
        mal = section("malicious")
        top = {k: v for k, (_, v) in values.items() if "." not in k}
        seed = top["seed"]
        if not 0 <= seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        return RunConfig(
            sgd=SgdConfig(**section("sgd")),
            dataset=DatasetSpec(**section("dataset"), seed=seed),
            partition=PartitionSpec(**part, num_clients=top["num_clients"], seed=seed),
            malicious=MaliciousSpec(**mal) if mal else None,
            **top,
        )
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path), path.parent)


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    return replace(cfg, seed=seed, dataset=replace(cfg.dataset, seed=seed),
                   partition=replace(cfg.partition, seed=seed))


def dump_config(cfg: RunConfig) -> str:
    """Inverse of :func:`parse_config` (defaults written out explicitly)."""
    lines = [
        f"mode = {cfg.mode}",
        f"num_clients = {cfg.num_clients}",
        f"budget = {'unbounded' if cfg.budget is None else cfg.budget}",
        f"rounds = {cfg.rounds}",
        f"seed = {cfg.seed}",
        f"tau_init = {cfg.tau_init}",
        f"tau_train = {cfg.tau_train}",
        f"refresh_period = {cfg.refresh_period}",
        f"coin_mode = {cfg.coin_mode}",
    ]
    for name, (cls, skip) in _SECTIONS.items():
        obj = getattr(cfg, name)
        if obj is None:
            continue
        for f in fields(cls):
            value = getattr(obj, f.name)
            if f.name in skip or value is None:
                continue
            lines.append(f"{name}.{f.name} = {str(value).lower() if isinstance(value, bool) else value}")
    return "\n".join(lines) + "\n"
