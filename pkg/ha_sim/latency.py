"""
Latency profiles and calibration presets.

A ``LatencyProfile`` holds one ``Duration`` per timing knob of the simulated
cluster. A ``CalibrationProfile`` is a named YAML preset with shared defaults
and per-architecture ``no_sc`` / ``with_sc`` overrides, so a single file can
reproduce several measured configurations at once.
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Optional, Union

import yaml

from ha_sim.engine import RandomSource
from ha_sim.errors import ValidationError

_logger = logging.getLogger(__name__)

PRESET_PACKAGE = "ha_sim.presets"


class Architecture(str, Enum):
    STATEFUL_ORDERED = "stateful_ordered"
    STATELESS_PARALLEL = "stateless_parallel"


@dataclass(frozen=True)
class Duration:
    mean: float
    spread: float = 0.0
    distribution: str = "constant"

    DISTRIBUTIONS = ("constant", "uniform", "normal", "exponential")

    def __post_init__(self):
        if self.distribution not in self.DISTRIBUTIONS:
            raise ValidationError(f"Unknown distribution {self.distribution!r}, allowed: {self.DISTRIBUTIONS}")
        if self.mean < 0 or self.spread < 0:
            raise ValidationError(f"Durations must be non-negative, got mean={self.mean} spread={self.spread}")

    @classmethod
    def from_config(cls, value: Union[int, float, Mapping[str, Any], "Duration"]) -> "Duration":
        if isinstance(value, Duration):
            return value
        if isinstance(value, bool):
            raise ValidationError(f"Not a duration: {value!r}")
        if isinstance(value, (int, float)):
            return cls(mean=float(value))
        if isinstance(value, Mapping):
            if "mean" not in value:
                raise ValidationError(f"A duration mapping needs a 'mean', got {dict(value)!r}")
            spread = value.get("spread", value.get("stddev", 0.0))
            return cls(
                mean=float(value["mean"]),
                spread=float(spread),
                distribution=str(value.get("distribution", "constant")),
            )
        raise ValidationError(f"Not a duration: {value!r}")

    def draw(self, rng: RandomSource) -> float:
        if self.distribution == "constant" or (self.spread == 0 and self.distribution != "exponential"):
            return self.mean
        if self.distribution == "uniform":
            return max(0.0, rng.uniform(self.mean - self.spread, self.mean + self.spread))
        if self.distribution == "normal":
            return max(0.0, rng.normal(self.mean, self.spread))
        return rng.exponential(self.mean)

    def to_config(self) -> Union[float, dict]:
        if self.distribution == "constant":
            return self.mean
        return {"distribution": self.distribution, "mean": self.mean, "spread": self.spread}


def _constant(value: float):
    return field(default_factory=lambda: Duration(value))


@dataclass(frozen=True)
class LatencyProfile:
    detection_delay: Duration = _constant(0.6)
    container_restart: Duration = _constant(1.0)
    pod_create: Duration = _constant(2.0)
    pod_delete: Duration = _constant(0.3)
    node_eviction_timeout: Duration = _constant(40.0)
    node_rejoin: Duration = _constant(30.0)
    endpoint_update: Duration = _constant(0.1)
    env_propagation: Duration = _constant(0.2)
    sc_handling: Duration = _constant(0.03)
    scale_event_delay: Duration = _constant(0.0)
    state_restore: Duration = _constant(0.3)
    resume_delay: Duration = _constant(0.1)
    replication_latency: Duration = _constant(0.005)
    checkpoint_interval: float = 1.0
    env_poll_interval: float = 0.05

    CADENCES = ("checkpoint_interval", "env_poll_interval")

    def __post_init__(self):
        for name in self.CADENCES:
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive, got {getattr(self, name)!r}")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    def with_overrides(self, overrides: Optional[Mapping[str, Any]]) -> "LatencyProfile":
        if not overrides:
            return self
        unknown = sorted(set(overrides) - set(self.field_names()))
        if unknown:
            raise ValidationError(f"Unknown latency profile fields: {', '.join(unknown)}")

        changes = {}
        for name, value in overrides.items():
            if name in self.CADENCES:
                changes[name] = float(value)
            else:
                changes[name] = Duration.from_config(value)
        return dataclasses.replace(self, **changes)

    def draw(self, name: str, rng: RandomSource) -> float:
        return getattr(self, name).draw(rng)

    def to_config(self) -> dict:
        return {
            name: (getattr(self, name) if name in self.CADENCES else getattr(self, name).to_config())
            for name in self.field_names()
        }


@dataclass(frozen=True)
class CalibrationProfile:
    name: str
    description: str = ""
    provenance: str = ""
    defaults: Mapping[str, Any] = field(default_factory=dict)
    architectures: Mapping[str, Mapping[str, Mapping[str, Any]]] = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any], source: str = "<mapping>") -> "CalibrationProfile":
        if not isinstance(data, Mapping) or "name" not in data:
            raise ValidationError(f"Calibration profile {source} must be a mapping with a 'name'")

        architectures = dict(data.get("architectures") or {})
        for architecture, modes in architectures.items():
            if architecture not in {a.value for a in Architecture}:
                raise ValidationError(f"{source}: unknown architecture {architecture!r}")
            unknown_modes = set(modes or {}) - {"no_sc", "with_sc"}
            if unknown_modes:
                raise ValidationError(f"{source}: unknown modes {sorted(unknown_modes)} for {architecture}")

        profile = cls(
            name=str(data["name"]),
            description=str(data.get("description", "")),
            provenance=str(data.get("provenance", "")),
            defaults=dict(data.get("defaults") or {}),
            architectures=architectures,
        )
        # fail early on bad field names or values
        for architecture in Architecture:
            for with_sc in (False, True):
                profile.resolve(architecture, with_sc)
        return profile

    @classmethod
    def from_yaml(cls, path: Union[str, Path]) -> "CalibrationProfile":
        with open(path, encoding="utf-8") as fp:
            return cls.from_mapping(yaml.safe_load(fp), source=str(path))

    def resolve(self, architecture: Union[Architecture, str], with_sc: bool) -> LatencyProfile:
        architecture = Architecture(architecture)
        modes = self.architectures.get(architecture.value) or {}
        overrides = modes.get("with_sc" if with_sc else "no_sc") or {}
        return LatencyProfile().with_overrides(self.defaults).with_overrides(overrides)


def list_presets() -> list[str]:
    return sorted(
        entry.name[: -len(".yaml")]
        for entry in resources.files(PRESET_PACKAGE).iterdir()
        if entry.name.endswith(".yaml")
    )


def load_profile(name_or_path: Union[str, Path, None] = None) -> CalibrationProfile:
    """Load a shipped preset by name, or a profile file by path."""
    if name_or_path is None:
        name_or_path = "table1"

    path = Path(name_or_path)
    if path.suffix in (".yaml", ".yml") and path.exists():
        _logger.info(f"Loading calibration profile from {path}")
        return CalibrationProfile.from_yaml(path)

    if str(name_or_path) not in list_presets():
        raise ValidationError(f"Unknown calibration profile {str(name_or_path)!r}, shipped presets: {', '.join(list_presets())}")
    resource = resources.files(PRESET_PACKAGE).joinpath(f"{name_or_path}.yaml")
    data = yaml.safe_load(resource.read_text(encoding="utf-8"))
    return CalibrationProfile.from_mapping(data, source=f"preset {name_or_path}")
