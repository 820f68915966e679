"""Flat key=value pipeline configuration.

Defaults mirror the reference experimental setup: 7-bit codes, 14-frame
blocks with stride 1, equal fusion weights, background threshold 0.1,
inverted score orientation. Unknown keys are errors so that a config file
always means what it says.
"""

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigParseError, IoError
from .flow import FlowParams
from .tcp import ORIENT_INVERTED, ORIENT_LITERAL

QUANTIZER_ITQ = "itq"
QUANTIZER_KMEANS = "kmeans"

FEATURES_TOY = "toy"
FLOW_BUILTIN = "builtin"

_MAX_BITS = 16  # dense 2^bits histograms; beyond this the layout is impractical


@dataclass
class PipelineConfig:
    bits: int = 7
    block_len: int = 14
    block_stride: int = 1
    alpha: float = 0.5
    beta: float = 0.5
    bg_threshold: float = 0.1
    orientation: str = ORIENT_INVERTED
    itq_iters: int = 50
    seed: int = 0
    grid_rows: int = 8
    grid_cols: int = 5
    flow_smoothness: float = 15.0
    flow_levels: int = 4
    flow_scale: float = 0.5
    flow_iters: int = 100
    feature_source: str = FEATURES_TOY
    flow_source: str = FLOW_BUILTIN
    quantizer: str = QUANTIZER_ITQ

    def __post_init__(self):
        if not 1 <= self.bits <= _MAX_BITS:
            raise ConfigParseError(f"bits must be in [1, {_MAX_BITS}], got {self.bits}")
        if self.block_len < 1:
            raise ConfigParseError("block_len must be positive")
        if self.block_stride < 1:
            raise ConfigParseError("block_stride must be positive")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigParseError("alpha and beta must be non-negative")
        if self.alpha + self.beta <= 0:
            raise ConfigParseError("alpha + beta must be positive")
        if self.alpha + self.beta > 1.0 + 1e-12:
            raise ConfigParseError("alpha + beta must not exceed 1")
        if not 0.0 <= self.bg_threshold < 1.0:
            raise ConfigParseError("bg_threshold must lie in [0, 1)")
        if self.orientation not in (ORIENT_INVERTED, ORIENT_LITERAL):
            raise ConfigParseError(f"orientation must be inverted or literal, got {self.orientation!r}")
        if self.itq_iters < 1:
            raise ConfigParseError("itq_iters must be positive")
        if self.seed < 0:
            raise ConfigParseError("seed must be non-negative")
        if self.grid_rows < 1 or self.grid_cols < 1:
            raise ConfigParseError("grid must be at least 1x1")
        if self.quantizer not in (QUANTIZER_ITQ, QUANTIZER_KMEANS):
            raise ConfigParseError(f"quantizer must be itq or kmeans, got {self.quantizer!r}")
        if self.feature_source != FEATURES_TOY and not self.feature_source.startswith("fmap:"):
            raise ConfigParseError("feature_source must be toy or fmap:<path>")
        if self.flow_source != FLOW_BUILTIN and not self.flow_source.startswith("file:"):
            raise ConfigParseError("flow_source must be builtin or file:<path>")
        try:
            self.flow_params()
        except Exception as e:
            raise ConfigParseError(f"bad flow parameters: {e}") from e

    def flow_params(self) -> FlowParams:
        return FlowParams(
            smoothness=self.flow_smoothness,
            levels=self.flow_levels,
            scale=self.flow_scale,
            iters=self.flow_iters,
        )

    def feature_fmap_path(self) -> str | None:
        if self.feature_source.startswith("fmap:"):
            return self.feature_source[len("fmap:") :]
        return None

    def flow_file_path(self) -> str | None:
        if self.flow_source.startswith("file:"):
            return self.flow_source[len("file:") :]
        return None


_BY_NAME = {"int": int, "float": float, "str": str}
_FIELD_PARSERS = {
    f.name: (_BY_NAME[f.type] if isinstance(f.type, str) else f.type)
    for f in fields(PipelineConfig)
}


def config_from_mapping(mapping: dict) -> PipelineConfig:
    kwargs = {}
    for key, value in mapping.items():
        if key not in _FIELD_PARSERS:
            raise ConfigParseError(f"unknown config key {key!r}")
        try:
            kwargs[key] = _FIELD_PARSERS[key](value)
        except ValueError as e:
            raise ConfigParseError(f"bad value for {key!r}: {value!r}") from e
    return PipelineConfig(**kwargs)


def parse_config(path) -> PipelineConfig:
    """Parse a key=value file; blank lines and # comments are skipped."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot read config {path}: {e}") from e
    mapping = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigParseError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key in mapping:
            raise ConfigParseError(f"{path}:{lineno}: duplicate key {key!r}")
        mapping[key] = value
    return config_from_mapping(mapping)
