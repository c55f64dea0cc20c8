"""Pipeline configuration and its flat ``section.key = value`` text format.

Example::

    # comments start with '#'
    voxel_size = 0.005
    matcher = global_softmax
    matcher.temperature = 0.001
    ransac.max_iterations = 5000

Unknown keys are rejected so typos do not silently fall back to defaults.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .descriptors import DescriptorConfig
from .errors import FormatError, ParameterError
from .estimation import IcpConfig, RansacConfig
from .losses import LossWeights
from .matching import SinkhornConfig
from .metrics import ThresholdConfig

MATCHERS = ("global_softmax", "dual_softmax", "sinkhorn")
MATCHER_ALIASES = {"softmax": "global_softmax", "global": "global_softmax",
                   "dual": "dual_softmax", "sinkhorn": "sinkhorn"}
ESTIMATORS = ("weighted_kabsch", "ransac", "kabsch+icp")


@dataclass(frozen=True)
class MatcherConfig:
    name: str = "global_softmax"
    # Handcrafted descriptors are unit-norm with small inner-product gaps;
    # a low temperature gives the softmax usable contrast.
    temperature: float = 0.001

    def __post_init__(self):
        name = MATCHER_ALIASES.get(self.name, self.name)
        if name not in MATCHERS:
            raise ParameterError(f"unknown matcher {self.name!r}; choose from {MATCHERS}")
        object.__setattr__(self, "name", name)
        if not self.temperature > 0:
            raise ParameterError("matcher temperature must be > 0")


@dataclass(frozen=True)
class FeatureFiles:
    source: Optional[str] = None
    target: Optional[str] = None


@dataclass(frozen=True)
class ReportConfig:
    histogram_bins: int = 10

    def __post_init__(self):
        if self.histogram_bins < 1:
            raise ParameterError("report.histogram_bins must be >= 1")


@dataclass(frozen=True)
class PipelineConfig:
    voxel_size: float = 0.005
    filter_fraction: float = 0.15
    estimator: str = "weighted_kabsch"
    seed: int = 0
    # Fraction of extracted pairs replaced by random mismatches (ablations only).
    outlier_fraction: float = 0.0
    descriptor: DescriptorConfig = field(default_factory=lambda: DescriptorConfig(
        neighborhood_radius=0.15, histogram_bins=6, radius_scales=(0.75, 1.0, 1.5)))
    features: FeatureFiles = field(default_factory=FeatureFiles)
    matcher: MatcherConfig = field(default_factory=MatcherConfig)
    sinkhorn: SinkhornConfig = field(default_factory=lambda: SinkhornConfig(epsilon=0.001))
    ransac: RansacConfig = field(default_factory=RansacConfig)
    icp: IcpConfig = field(default_factory=lambda: IcpConfig(max_correspondence_distance=0.02))
    loss: LossWeights = field(default_factory=LossWeights)
    thresholds: ThresholdConfig = field(default_factory=ThresholdConfig)
    report: ReportConfig = field(default_factory=ReportConfig)

    def __post_init__(self):
        if not self.voxel_size > 0:
            raise ParameterError("voxel_size must be > 0")
        if not 0.0 < self.filter_fraction <= 1.0:
            raise ParameterError("filter_fraction must lie in (0, 1]")
        if self.estimator not in ESTIMATORS:
            raise ParameterError(f"unknown estimator {self.estimator!r}; choose from {ESTIMATORS}")
        if not 0.0 <= self.outlier_fraction < 1.0:
            raise ParameterError("outlier_fraction must lie in [0, 1)")
        if self.descriptor.neighborhood_radius * min(self.descriptor.radius_scales) < self.voxel_size:
            raise ParameterError("descriptor radius must be >= voxel_size")


def _convert(raw: str, default, key: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(v) for v in raw.split(",") if v.strip())
    except ValueError:
        raise ParameterError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    if default is None and raw.lower() in ("none", ""):
        return None
    return raw


def _fields(obj):
    return {f.name: f for f in dataclasses.fields(obj)}


def apply_overrides(cfg: PipelineConfig, items) -> PipelineConfig:
    """Apply ``[(key, raw_value), ...]`` to ``cfg``; raises on unknown keys."""
    top = {}
    nested = {}
    top_fields = _fields(cfg)
    for key, raw in items:
        key = key.strip()
        if key == "matcher":
            key = "matcher.name"
        if "." in key:
            section, name = key.split(".", 1)
            if section not in top_fields or not dataclasses.is_dataclass(getattr(cfg, section)):
                raise ParameterError(f"unknown config key {key!r}")
            sub = getattr(cfg, section)
            sub_fields = _fields(sub)
            if name not in sub_fields:
                raise ParameterError(f"unknown config key {key!r}")
            nested.setdefault(section, {})[name] = _convert(raw, getattr(sub, name), key)
        else:
            if key not in top_fields or dataclasses.is_dataclass(getattr(cfg, key)):
                raise ParameterError(f"unknown config key {key!r}")
            top[key] = _convert(raw, getattr(cfg, key), key)
    for section, values in nested.items():
        sub = getattr(cfg, section)
        if section == "descriptor" and "feature_dim" not in values:
            # feature_dim is derived; recompute it when the layout changes.
            values["feature_dim"] = None
        top[section] = dataclasses.replace(sub, **values)
    return dataclasses.replace(cfg, **top)


def parse_config_text(text: str, path=None, base: Optional[PipelineConfig] = None) -> PipelineConfig:
    items = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise FormatError(f"expected 'key = value', got {line.strip()!r}", path=path, line=lineno)
        key, value = stripped.split("=", 1)
        items.append((key.strip(), value.strip()))
    try:
        return apply_overrides(base or PipelineConfig(), items)
    except ParameterError as exc:
        raise FormatError(str(exc), path=path) from None


def load_config(path) -> PipelineConfig:
    path = Path(path)
    return parse_config_text(path.read_text(), path=path)
