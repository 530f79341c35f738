"""Pipeline configuration.

Values resolve with precedence flag > environment > file > default.
Files are key-value INI text; a leading section header is optional::

    window_days = 7
    mc_draws = 2000

Environment overrides use ``DYNFLOOR_<KEY>`` (e.g. ``DYNFLOOR_SEED=3``).
"""
from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Mapping, Optional, get_type_hints

ENV_PREFIX = "DYNFLOOR_"


@dataclass(frozen=True)
class PipelineConfig:
    window_days: int = 7
    bucket_share: float = 0.01
    cap_percentile: float = 95.0
    quad_nodes: int = 128
    tail_mass: float = 1e-9
    mc_draws: int = 2000
    grid_size: int = 15
    budget_seconds: float = 60.0
    min_observations: int = 200
    likelihood: str = "censored"  # or "truncated"
    seed: int = 0
    parallelism: int = 1
    history_models: int = 14
    tukey_k: float = 1.5
    global_default_floor: float = 0.10
    cache_max_age: int = 60

    def __post_init__(self):
        if self.window_days < 1:
            raise ValueError("window_days must be >= 1")
        if not (0 < self.bucket_share <= 1):
            raise ValueError("bucket_share must lie in (0, 1]")
        if self.quad_nodes < 2 or self.grid_size < 2 or self.mc_draws < 1:
            raise ValueError("quad_nodes and grid_size must be >= 2, mc_draws >= 1")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if self.likelihood not in ("censored", "truncated"):
            raise ValueError("likelihood must be 'censored' or 'truncated'")

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)


def read_kv_file(path) -> dict[str, str]:
    """Parse a key-value file; keys from every section are merged."""
    text = Path(path).read_text(encoding="utf-8")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    if not text.lstrip().startswith("["):
        text = "[DEFAULT]\n" + text
    parser.read_string(text, source=str(path))
    out = dict(parser.defaults())
    for section in parser.sections():
        out.update({k: v for k, v in parser.items(section, raw=True)})
    return out


def _coerce(cls, values: Mapping[str, str], source: str) -> dict:
    types = get_type_hints(cls)
    out = {}
    for key, raw in values.items():
        key = key.strip().lower()
        if key not in types:
            raise ValueError(f"unknown config key {key!r} in {source}")
        try:
            out[key] = types[key](raw.strip() if isinstance(raw, str) else raw)
        except ValueError:
            raise ValueError(f"config key {key!r} in {source}: cannot parse {raw!r}") from None
    return out


def load_config(path=None, env: Optional[Mapping[str, str]] = None,
                overrides: Optional[Mapping[str, object]] = None) -> PipelineConfig:
    values: dict = {}
    if path is not None:
        values.update(_coerce(PipelineConfig, read_kv_file(path), str(path)))
    env = os.environ if env is None else env
    names = {f.name for f in fields(PipelineConfig)}
    env_vals = {k[len(ENV_PREFIX):].lower(): v for k, v in env.items()
                if k.startswith(ENV_PREFIX) and k[len(ENV_PREFIX):].lower() in names}
    values.update(_coerce(PipelineConfig, env_vals, "environment"))
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig(**values)
