"""Flat ``section.key = value`` run configuration with ``--set`` overrides."""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .data import DataError, TaskSpec
from .training import EncoderConfig, TrainConfig


class ConfigError(ValueError):
    def __init__(self, message: str, path=None, line: Optional[int] = None, rule: str = "CONFIG_INVALID"):
        self.path, self.line, self.rule, self.detail = path, line, rule, message
        where = f"{path}:{line}: " if path and line else (f"{path}: " if path else "")
        super().__init__(f"{where}{rule}: {message}")


def parse_config_text(text: str, path=None) -> dict[str, tuple[str, int]]:
    """``key -> (raw value, line number)``; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", path, lineno, "CONFIG_SYNTAX")
        key, value = (s.strip() for s in line.split("=", 1))
        if "." not in key:
            raise ConfigError(f"key {key!r} needs a section prefix (e.g. train.{key})", path, lineno,
                              "CONFIG_SYNTAX")
        out[key] = (value, lineno)
    return out


def parse_override(item: str) -> tuple[str, str]:
    if "=" not in item:
        raise ConfigError(f"--set expects key=value, got {item!r}", rule="CONFIG_SYNTAX")
    k, v = item.split("=", 1)
    return k.strip(), v.strip()


def _coerce(value: str, tp, key: str):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value.lower() in ("", "none", "null"):
            return None
        return _coerce(value, args[0], key)
    if tp is bool:
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {value!r}")
    if tp is tuple or origin is tuple:
        return tuple(int(v) for v in value.replace(" ", "").split(",") if v)
    if tp in (int, float, str):
        return tp(value)
    raise ValueError(f"{key}: unsupported type {tp}")


def _fields(cls) -> dict:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


TRAIN_KEYS = {k: t for k, t in _fields(TrainConfig).items() if k != "encoder"}
ENCODER_KEYS = _fields(EncoderConfig)


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    data_dir: Optional[Path] = None
    output_dir: Optional[Path] = None
    task_mode: Optional[str] = None
    task_sources: tuple = ()
    task_destination: Optional[str] = None
    source: Optional[Path] = None

    @property
    def task(self) -> Optional[TaskSpec]:
        if self.task_mode is None:
            return None
        return TaskSpec(self.task_mode, self.task_sources, self.task_destination, tuple(self.train.seeds))

    def snapshot(self) -> str:
        """Fully resolved config, defaults included, in the input format."""
        lines = [f"data.dir = {self.data_dir or ''}", f"output.dir = {self.output_dir or ''}"]
        if self.task_mode:
            lines += [f"task.mode = {self.task_mode}", f"task.sources = {','.join(self.task_sources)}",
                      f"task.destination = {self.task_destination}"]
        for k in TRAIN_KEYS:
            lines.append(f"train.{k} = {_render(getattr(self.train, k))}")
        for k in ENCODER_KEYS:
            lines.append(f"encoder.{k} = {_render(getattr(self.train.encoder, k))}")
        return "\n".join(lines) + "\n"


def _render(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def build_config(entries: dict[str, tuple[str, int]], path=None, base_dir: Optional[Path] = None) -> RunConfig:
    cfg = RunConfig(source=Path(path) if path else None)
    base_dir = base_dir or Path(".")

    def resolve(v: str) -> Optional[Path]:
        if not v:
            return None
        p = Path(v)
        return p if p.is_absolute() else base_dir / p

    for key, (value, lineno) in entries.items():
        section, name = key.split(".", 1)
        try:
            if key == "data.dir":
                cfg.data_dir = resolve(value)
            elif key == "output.dir":
                cfg.output_dir = resolve(value)
            elif key == "task.mode":
                cfg.task_mode = value
            elif key == "task.sources":
                cfg.task_sources = tuple(s.strip() for s in value.split(",") if s.strip())
            elif key == "task.destination":
                cfg.task_destination = value
            elif section == "train" and name in TRAIN_KEYS:
                setattr(cfg.train, name, _coerce(value, TRAIN_KEYS[name], key))
            elif section == "encoder" and name in ENCODER_KEYS:
                setattr(cfg.train.encoder, name, _coerce(value, ENCODER_KEYS[name], key))
            else:
                raise ConfigError(f"unknown key {key!r}", path, lineno, "CONFIG_UNKNOWN_KEY")
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad value for {key}: {exc}", path, lineno, "CONFIG_VALUE") from None
    try:
        cfg.train.validate()
    except ValueError as exc:
        raise ConfigError(str(exc), path, rule="CONFIG_VALUE") from None
    if cfg.task_mode is not None:
        try:
            cfg.task
        except DataError as exc:
            raise ConfigError(exc.detail, path, rule="CONFIG_TASK") from None
    return cfg


def load_config(path, overrides: Optional[list] = None, seed: Optional[int] = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found", rule="CONFIG_MISSING")
    entries = parse_config_text(path.read_text(encoding="utf-8"), path)
    for item in overrides or []:
        k, v = parse_override(item)
        entries[k] = (v, 0)
    if seed is not None:
        entries["train.seeds"] = (str(seed), 0)
    return build_config(entries, path, path.parent)


def default_config_text(data_dir: str = ".", output_dir: str = "run", topics=("T0", "T1")) -> str:
    """A tiny-encoder config suitable for synthetic corpora."""
    return "\n".join([
        f"data.dir = {data_dir}",
        f"output.dir = {output_dir}",
        "task.mode = cross_target",
        f"task.sources = {topics[0]}",
        f"task.destination = {topics[1]}",
        "encoder.kind = tiny",
        "encoder.hidden_size = 32",
        "encoder.layers = 2",
        "encoder.heads = 2",
        "encoder.vocab_size = 500",
        "train.learning_rate = 0.001",
        "train.max_epochs = 20",
        "train.patience = 10",
        "train.seeds = 0,1,2,3,4",
        "",
    ])
