"""Run configuration: a flat ``key = value`` text document with typed defaults.

The same key-value syntax is reused by the CLI manifests; `read_keyvalues`
is the shared parser.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

FUSION_MODES = ("adaptive", "mean", "single")
INVERSION_FORMULAS = ("paper-exact-inverse", "standard-ddim")
POOLING_STRATEGIES = ("last-token", "index", "mean")
INV_NORM_MODES = ("pooled", "sequence")


class ConfigError(ValueError):
    """Unknown key, type mismatch, or constraint violation in a config document."""


def read_keyvalues(text: str) -> dict[str, str]:
    """Parse a flat key-value document: one ``key = value`` per line, ``#`` comments."""
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in entries:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        entries[key] = value
    return entries


@dataclass(frozen=True)
class PipelineConfig:
    """Engine settings; defaults follow the documented schema."""

    num_train_steps: int = 1000
    num_ddim_steps: int = 50
    lambda_: float = 1e-5
    inversion_formula: str = "paper-exact-inverse"
    patch_size: int = 1
    replication_count: int | None = None  # None: match the inversion prompt length
    guidance_scale: float = 1.0
    fusion_mode: str = "adaptive"
    seed: int = 1
    pooling: str = "last-token"
    pooling_index: int | None = None
    inv_norm_mode: str = "pooled"

    def validate(self) -> "PipelineConfig":
        if self.num_train_steps < 1:
            raise ConfigError("num_train_steps must be >= 1")
        if self.num_ddim_steps < 1:
            raise ConfigError("num_ddim_steps must be >= 1")
        if self.num_ddim_steps > self.num_train_steps:
            raise ConfigError("num_ddim_steps must not exceed num_train_steps")
        if not self.lambda_ > 0:
            raise ConfigError("lambda must be > 0")
        if self.patch_size < 1:
            raise ConfigError("patch_size must be >= 1")
        if self.replication_count is not None and self.replication_count < 1:
            raise ConfigError("replication_count must be >= 1 when set")
        if self.inversion_formula not in INVERSION_FORMULAS:
            raise ConfigError(f"inversion_formula must be one of {INVERSION_FORMULAS}")
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigError(f"fusion_mode must be one of {FUSION_MODES}")
        if self.pooling not in POOLING_STRATEGIES:
            raise ConfigError(f"pooling must be one of {POOLING_STRATEGIES}")
        if self.pooling == "index" and self.pooling_index is None:
            raise ConfigError("pooling_index is required when pooling = index")
        if self.pooling_index is not None and self.pooling_index < 0:
            raise ConfigError("pooling_index must be >= 0")
        if self.inv_norm_mode not in INV_NORM_MODES:
            raise ConfigError(f"inv_norm_mode must be one of {INV_NORM_MODES}")
        return self


# config key -> (dataclass field, value parser)
_KEY_TO_FIELD = {
    "num_train_steps": ("num_train_steps", int),
    "num_ddim_steps": ("num_ddim_steps", int),
    "lambda": ("lambda_", float),
    "inversion_formula": ("inversion_formula", str),
    "patch_size": ("patch_size", int),
    "replication_count": ("replication_count", int),
    "guidance_scale": ("guidance_scale", float),
    "fusion_mode": ("fusion_mode", str),
    "seed": ("seed", int),
    "pooling": ("pooling", str),
    "pooling_index": ("pooling_index", int),
    "inv_norm_mode": ("inv_norm_mode", str),
}


def parse_config(text: str) -> PipelineConfig:
    """Parse a config document; missing keys take defaults, unknown keys fail."""
    entries = read_keyvalues(text)
    values = {}
    for key, raw in entries.items():
        if key not in _KEY_TO_FIELD:
            raise ConfigError(f"unknown key {key!r}")
        field_name, parser = _KEY_TO_FIELD[key]
        try:
            values[field_name] = parser(raw)
        except ValueError as exc:
            raise ConfigError(f"key {key!r}: cannot parse {raw!r} as {parser.__name__}") from exc
    return PipelineConfig(**values).validate()


def load_config(path) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as handle:
        return parse_config(handle.read())


def with_overrides(config: PipelineConfig, **kwargs) -> PipelineConfig:
    """Return a copy with the given fields replaced, re-validated."""
    return replace(config, **kwargs).validate()
