"""Run configuration: flat ``[section]`` / ``key = value`` files.

The format is the subset of TOML with one level of sections and scalar values
(strings, integers, floats, booleans). Nested tables, arrays and dotted keys
are rejected, as is any key not listed below.

    [model]
    hidden_size = 64
    layers = 2
    heads = 0                    # 0 picks max(1, hidden_size // 64)
    vocab_size = 0               # 0 takes the size of data.vocab
    ffn_mult = 4
    max_sentence_tokens = 64
    max_paragraph_sentences = 64

    [optimizer]
    base_lr = 0.003
    warmup_steps = 5000
    total_steps = 300000         # full-scale SVAE budget; SLLM runs used 1600000 with batch_size 1
    batch_size = 128
    accumulate = 1
    weight_decay = 0.01
    clip_norm = 1.0
    ema_decay = 0.999
    gamma = 2.0

    [data]
    train = "train.txt"          # relative paths resolve against the config file
    val = ""
    vocab = "corpus.vocab"
    seed = 0

    [run]
    mode = "svae"                # svae | sllm | baseline
    freeze_svae = false
    stop_loss_weight = 1.0
    eval_every = 200
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..errors import ConfigError
from ..text import MAX_PARAGRAPH_SENTENCES, MAX_SENTENCE_TOKENS

MODES = ("svae", "sllm", "baseline")


@dataclass(frozen=True)
class ModelSection:
    hidden_size: int = 64
    layers: int = 2
    heads: int = 0
    vocab_size: int = 0
    ffn_mult: int = 4
    max_sentence_tokens: int = MAX_SENTENCE_TOKENS
    max_paragraph_sentences: int = MAX_PARAGRAPH_SENTENCES

    def validate(self) -> None:
        _positive(self, "hidden_size", "layers", "ffn_mult", "max_sentence_tokens", "max_paragraph_sentences")
        _non_negative(self, "heads", "vocab_size")
        if self.max_sentence_tokens > MAX_SENTENCE_TOKENS:
            raise ConfigError(f"model.max_sentence_tokens is capped at {MAX_SENTENCE_TOKENS}")
        if self.max_paragraph_sentences > MAX_PARAGRAPH_SENTENCES:
            raise ConfigError(f"model.max_paragraph_sentences is capped at {MAX_PARAGRAPH_SENTENCES}")
        if self.heads and self.hidden_size % self.heads:
            raise ConfigError(f"model.heads={self.heads} does not divide hidden_size={self.hidden_size}")
        if self.vocab_size and self.vocab_size <= 4:
            raise ConfigError("model.vocab_size must exceed the 4 special tokens")

    @property
    def num_heads(self) -> int | None:
        return self.heads or None


@dataclass(frozen=True)
class OptimizerSection:
    base_lr: float = 3e-3
    warmup_steps: int = 5000
    total_steps: int = 300_000
    batch_size: int = 128
    accumulate: int = 1
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    ema_decay: float = 0.999
    gamma: float = 2.0

    def validate(self) -> None:
        _positive(self, "base_lr", "warmup_steps", "total_steps", "batch_size", "accumulate", "clip_norm")
        _non_negative(self, "weight_decay", "gamma")
        if self.warmup_steps >= self.total_steps:
            raise ConfigError("optimizer.warmup_steps must be below total_steps")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ConfigError("optimizer.ema_decay must lie in [0, 1)")


@dataclass(frozen=True)
class DataSection:
    train: str = ""
    val: str = ""
    vocab: str = ""
    seed: int = 0

    def validate(self) -> None:
        _non_negative(self, "seed")


@dataclass(frozen=True)
class RunSection:
    mode: str = "svae"
    freeze_svae: bool = False
    stop_loss_weight: float = 1.0
    eval_every: int = 200

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"run.mode must be one of {', '.join(MODES)}, got {self.mode!r}")
        _non_negative(self, "stop_loss_weight")
        _positive(self, "eval_every")


@dataclass(frozen=True)
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    data: DataSection = field(default_factory=DataSection)
    run: RunSection = field(default_factory=RunSection)

    def validate(self) -> "RunConfig":
        for f in fields(self):
            getattr(self, f.name).validate()
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        """sha256 of the canonical JSON form; every field takes part."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, assignments: list[str]) -> "RunConfig":
        """Apply ``section.key=value`` strings, parsed with the file grammar."""
        cfg = self
        for item in assignments:
            if "=" not in item or "." not in item.split("=", 1)[0]:
                raise ConfigError(f"override must look like section.key=value, got {item!r}")
            lhs, rhs = item.split("=", 1)
            section, key = lhs.strip().split(".", 1)
            try:
                value = tomllib.loads(f"v = {rhs.strip()}")["v"]
            except tomllib.TOMLDecodeError:
                value = rhs.strip()
            cfg = _merge(cfg, {section: {key: value}})
        return cfg.validate()

    def dumps(self) -> str:
        out = []
        for f in fields(self):
            out.append(f"[{f.name}]")
            for k, v in asdict(getattr(self, f.name)).items():
                out.append(f"{k} = {json.dumps(v) if not isinstance(v, bool) else str(v).lower()}")
            out.append("")
        return "\n".join(out)


def _positive(section, *names: str) -> None:
    for n in names:
        if not getattr(section, n) > 0:
            raise ConfigError(f"{type(section).__name__}.{n} must be positive, got {getattr(section, n)!r}")


def _non_negative(section, *names: str) -> None:
    for n in names:
        if getattr(section, n) < 0:
            raise ConfigError(f"{type(section).__name__}.{n} must be non-negative, got {getattr(section, n)!r}")


def _coerce(section_cls, key: str, value):
    kinds = {f.name: f.type for f in fields(section_cls)}
    kind = kinds[key]
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false")
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{key} must be a string, got {value!r}")
    return value


def _merge(cfg: RunConfig, raw: dict) -> RunConfig:
    sections = {f.name: f for f in fields(RunConfig)}
    updates = {}
    for name, body in raw.items():
        if name not in sections:
            raise ConfigError(f"unknown section [{name}]")
        if not isinstance(body, dict):
            raise ConfigError(f"{name} must be a [section]")
        current = getattr(cfg, name)
        known = {f.name for f in fields(current)}
        changes = {}
        for key, value in body.items():
            if key not in known:
                raise ConfigError(f"unknown key {name}.{key}")
            if isinstance(value, dict):
                raise ConfigError(f"nested tables are not allowed ({name}.{key})")
            changes[key] = _coerce(type(current), key, value)
        updates[name] = replace(current, **changes)
    return replace(cfg, **updates)


def parse_config(text: str, base_dir: Path | None = None) -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"config syntax error: {e}") from e
    for key, value in raw.items():
        if not isinstance(value, dict):
            raise ConfigError(f"key {key!r} must sit inside a [section]")
    cfg = _merge(RunConfig(), raw)
    if base_dir is not None:
        data = cfg.data
        resolved = {k: _resolve(getattr(data, k), base_dir) for k in ("train", "val", "vocab")}
        cfg = replace(cfg, data=replace(data, **resolved))
    return cfg.validate()


def _resolve(path: str, base: Path) -> str:
    if not path or Path(path).is_absolute():
        return path
    return str((base / path).resolve())


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config(text, path.parent)
