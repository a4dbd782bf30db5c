"""Run configuration: typed defaults plus a strict line-oriented text format.

The on-disk format is UTF-8 text with ``[section]`` headers and
``key = value`` lines; ``#`` starts a comment.  Unknown sections or keys
are rejected so a typo cannot silently fall back to a default.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace

from .errors import ConfigError


@dataclass(frozen=True)
class ScaleConfig:
    """Point-cloud sampling geometry for one resolution level."""

    sample_count: int
    radius: float
    max_neighbors: int

    def validate(self) -> None:
        if self.sample_count < 1:
            raise ConfigError("scale sample_count must be >= 1")
        if self.radius <= 0.0:
            raise ConfigError("scale radius must be positive")
        if self.max_neighbors < 1:
            raise ConfigError("scale max_neighbors must be >= 1")


DEFAULT_SCALES = (
    ScaleConfig(64, 0.5, 16),
    ScaleConfig(32, 1.0, 16),
    ScaleConfig(16, 2.0, 16),
)


@dataclass
class RunConfig:
    # [run]
    seed: int = 7
    threads: int = 1
    data_dir: str = "data"
    out_dir: str = "out"
    # [model]
    feature_dim: int = 32
    head_count: int = 4
    scales: tuple[ScaleConfig, ...] = DEFAULT_SCALES
    # [loss]
    scale_weights: tuple[float, ...] = ()  # empty means uniform 1/K
    consistency_weight: float = 0.5
    smoothness_weight: float = 0.1
    scene_threshold: float = 0.5
    # [train]
    learning_rate: float = 1e-4
    decay_factor: float = 0.1
    decay_every: int = 20
    batch_size: int = 32
    epochs: int = 40
    drop_probability: float = 0.25
    noise_probability: float = 0.0
    noise_sigma_min: float = 0.1
    noise_sigma_max: float = 0.6
    # [scene]
    frames: int = 4
    frame_period: float = 0.5
    arena_size: float = 20.0
    agents_min: int = 2
    agents_max: int = 10
    points_per_agent: float = 30.0
    clutter_points: int = 50
    jitter_sigma: float = 0.02
    video_cells: int = 32
    text_max_len: int = 24

    def weights(self) -> tuple[float, ...]:
        if self.scale_weights:
            return self.scale_weights
        k = len(self.scales)
        return tuple(1.0 / k for _ in range(k))

    def validate(self) -> "RunConfig":
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if not self.scales:
            raise ConfigError("at least one scale required")
        for s in self.scales:
            s.validate()
        if self.feature_dim < 1 or self.feature_dim % self.head_count != 0:
            raise ConfigError("head_count must divide feature_dim")
        if self.scale_weights and len(self.scale_weights) != len(self.scales):
            raise ConfigError("scale_weights length must match scale count")
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ConfigError("drop_probability must lie in [0, 1]")
        if not 0.0 <= self.noise_probability <= 1.0:
            raise ConfigError("noise_probability must lie in [0, 1]")
        if not 0.0 < self.scene_threshold < 1.0:
            raise ConfigError("scene_threshold must lie in (0, 1)")
        if self.learning_rate <= 0 or self.decay_factor <= 0 or self.decay_every < 1:
            raise ConfigError("bad optimizer settings")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("bad batch_size/epochs")
        if self.frames < 1 or self.frame_period <= 0:
            raise ConfigError("bad frame settings")
        if self.arena_size <= 0:
            raise ConfigError("arena_size must be positive")
        if not 1 <= self.agents_min <= self.agents_max <= 12:
            raise ConfigError("agent counts must satisfy 1 <= min <= max <= 12")
        if self.points_per_agent <= 0 or self.clutter_points < 0:
            raise ConfigError("bad point-count settings")
        if self.jitter_sigma < 0:
            raise ConfigError("jitter_sigma must be >= 0")
        if self.video_cells != 32:
            raise ConfigError("video_cells is pinned to 32")
        if not 1 <= self.text_max_len <= 24:
            raise ConfigError("text_max_len must lie in [1, 24]")
        return self


_SECTION_FIELDS = {
    "run": ("seed", "threads", "data_dir", "out_dir"),
    "model": ("feature_dim", "head_count"),
    "loss": ("scale_weights", "consistency_weight", "smoothness_weight",
             "scene_threshold"),
    "train": ("learning_rate", "decay_factor", "decay_every", "batch_size",
              "epochs", "drop_probability", "noise_probability",
              "noise_sigma_min", "noise_sigma_max"),
    "scene": ("frames", "frame_period", "arena_size", "agents_min", "agents_max",
              "points_per_agent", "clutter_points", "jitter_sigma",
              "video_cells", "text_max_len"),
}

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "str":
            return raw
        if name == "scale_weights":
            return tuple(float(v) for v in raw.split())
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc
    raise ConfigError(f"unhandled config field {name}")


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    section = None
    scales: dict[int, ScaleConfig] = {}
    updates: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SECTION_FIELDS:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside any section")
        key, value = (part.strip() for part in line.split("=", 1))
        if section == "model" and key.startswith("scale") and key[5:].isdigit():
            parts = value.split()
            if len(parts) != 3:
                raise ConfigError(
                    f"line {lineno}: {key} needs 'sample_count radius max_neighbors'")
            try:
                scales[int(key[5:])] = ScaleConfig(
                    int(parts[0]), float(parts[1]), int(parts[2]))
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad scale spec") from exc
            continue
        if key not in _SECTION_FIELDS[section]:
            raise ConfigError(f"line {lineno}: unknown key {key} in [{section}]")
        updates[key] = _parse_value(key, value)
    if scales:
        if sorted(scales) != list(range(1, len(scales) + 1)):
            raise ConfigError("scale keys must be scale1..scaleK without gaps")
        updates["scales"] = tuple(scales[i] for i in sorted(scales))
    return replace(cfg, **updates).validate()


def format_config(cfg: RunConfig) -> str:
    """Serialize a config; parse_config(format_config(c)) == c."""
    lines = []
    for section, names in _SECTION_FIELDS.items():
        lines.append(f"[{section}]")
        for name in names:
            value = getattr(cfg, name)
            if name == "scale_weights":
                if not value:
                    continue
                value = " ".join(repr(v) for v in value)
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{name} = {value}")
        if section == "model":
            for i, s in enumerate(cfg.scales, start=1):
                lines.append(
                    f"scale{i} = {s.sample_count} {s.radius!r} {s.max_neighbors}")
        lines.append("")
    return "\n".join(lines)


def load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def save_config(cfg: RunConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_config(cfg))


def worker_count(cfg: RunConfig) -> int:
    """Configured thread count, capped by the LIGAR_THREADS environment knob."""
    count = cfg.threads
    env = os.environ.get("LIGAR_THREADS")
    if env is not None:
        try:
            cap = int(env)
        except ValueError as exc:
            raise ConfigError(f"LIGAR_THREADS must be an integer, got {env!r}") from exc
        if cap < 1:
            raise ConfigError("LIGAR_THREADS must be >= 1")
        count = min(count, cap)
    return count
