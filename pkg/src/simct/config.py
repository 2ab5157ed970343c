"""Run configuration: JSON config file plus CLI flag overrides.

Precedence is defaults < config file < explicit CLI flags. Referenced
files are checked at validation time and a seed is mandatory for any
command that samples.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

SCHEMA_VERSION = 1


@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    teacher_vocab: str | None = None
    student_vocab: str | None = None
    vocab_format: str | None = None  # lines | json | None (infer from extension)
    teacher_model: str | None = None
    student_model: str | None = None
    student_order: int = 2
    corpus: str | None = None
    prompts: str | None = None
    text: str | None = None
    rollouts: str | None = None
    student_dist: str | None = None
    teacher_dist: str | None = None
    groups: list[list[int]] | None = None
    mode: str = "simct"
    steps: int = 200
    lr: float = 1e-2
    batch_size: int | None = None
    lambda_units: float = 1.0
    merge_k: int | None = 1  # None encodes "all"
    top_k_shared: int | None = None
    length_norm: str = "mean"
    temperature: float = 0.6
    top_p: float = 0.95
    max_len: int = 12
    seed: int | None = None
    out: str | None = None
    parallelism: int | None = None  # None: available cores

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            doc = json.loads(p.read_text("utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{p}: config must be a JSON object")
        version = doc.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"{p}: unsupported schema_version {version}")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"{p}: unknown config keys: {sorted(unknown)}")
        cfg = cls()
        for key, value in doc.items():
            if key == "merge_k":
                value = parse_merge_k(value)
            setattr(cfg, key, value)
        return cfg

    def apply_overrides(self, overrides: dict) -> "RunConfig":
        for key, value in overrides.items():
            if value is None:
                continue
            if not hasattr(self, key):
                raise ConfigError(f"unknown config key {key!r}")
            setattr(self, key, value)
        return self

    def effective_parallelism(self) -> int:
        if self.parallelism is not None:
            if self.parallelism < 1:
                raise ConfigError(f"parallelism must be >= 1, got {self.parallelism}")
            return self.parallelism
        return os.cpu_count() or 1

    def require_files(self, *fields: str) -> None:
        for name in fields:
            value = getattr(self, name)
            if value is None:
                raise ConfigError(f"missing required input: {name}")
            if not Path(value).exists():
                raise ConfigError(f"{name} file not found: {value}")

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("a seed is required for sampling commands")
        return int(self.seed)


def parse_merge_k(value) -> int | None:
    """Accept an integer or the string "all" (merge whole runs)."""
    if value is None or value == "all":
        return None
    try:
        k = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"merge_k must be an integer or 'all', got {value!r}") from None
    if k < 1:
        raise ConfigError(f"merge_k must be >= 1, got {k}")
    return k


def infer_vocab_format(path: str, explicit: str | None) -> str:
    if explicit is not None:
        if explicit not in ("lines", "json"):
            raise ConfigError(f"unknown vocab format {explicit!r}")
        return explicit
    return "json" if str(path).endswith(".json") else "lines"
