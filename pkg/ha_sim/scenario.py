"""
Declarative experiment scenarios.

A scenario file is YAML and may hold several documents; each document is one
``Scenario``. Schedule times are seconds after the settle instant: the
deployment is complete and, with the State Controller, the initial HA states
are assigned.
"""

import dataclasses
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Optional, Union

import yaml

from ha_sim.cluster import HA_STATE_KEY, Cluster, NodeFailureMode
from ha_sim.errors import ScenarioError, UnknownObjectError, ValidationError
from ha_sim.latency import Architecture, LatencyProfile

_logger = logging.getLogger(__name__)

SCENARIO_PACKAGE = "ha_sim.scenarios"
EXPERIMENTS = ("rq1", "rq2", "rq3", "rq4", "node")


class Action(str, Enum):
    KILL_CONTAINER = "kill_container"
    FAIL_NODE = "fail_node"
    SCALE = "scale"
    START_STREAMS = "start_streams"
    END_OBSERVATION = "end_observation"


@dataclass(frozen=True)
class ScheduleStep:
    at: float
    action: Action
    params: Mapping[str, Any] = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "ScheduleStep":
        if not isinstance(data, Mapping) or "at" not in data or "action" not in data:
            raise ScenarioError(f"A schedule step needs 'at' and 'action', got {data!r}")
        try:
            action = Action(data["action"])
        except ValueError:
            raise ScenarioError(f"Unknown action {data['action']!r}, allowed: {', '.join(a.value for a in Action)}") from None
        params = {key: value for key, value in data.items() if key not in ("at", "action")}
        step = cls(at=float(data["at"]), action=action, params=params)
        step.validate()
        return step

    def validate(self) -> None:
        if self.at < 0:
            raise ScenarioError(f"Schedule times must be non-negative, got {self.at}")

        if self.action is Action.KILL_CONTAINER:
            if not self.pods:
                raise ScenarioError("kill_container needs 'pods' (or 'pod')")
        elif self.action is Action.FAIL_NODE:
            if ("node" in self.params) == ("pod" in self.params):
                raise ScenarioError("fail_node needs exactly one of 'node' or 'pod'")
            try:
                mode = NodeFailureMode(self.params.get("mode", NodeFailureMode.SHUTDOWN.value))
            except ValueError:
                raise ScenarioError(f"Unknown node failure mode {self.params.get('mode')!r}") from None
            if mode is NodeFailureMode.REBOOT and float(self.params.get("duration", -1)) < 0:
                raise ScenarioError("A reboot needs a non-negative 'duration'")
        elif self.action is Action.SCALE:
            target = self.params.get("target")
            if isinstance(target, bool) or not isinstance(target, int) or target < 0:
                raise ScenarioError(f"scale needs a non-negative integer 'target', got {target!r}")
        elif self.action is Action.START_STREAMS:
            clients = self.params.get("clients")
            if clients is not None and (not isinstance(clients, int) or clients < 1):
                raise ScenarioError(f"start_streams 'clients' must be a positive integer, got {clients!r}")

    @property
    def pods(self) -> list[str]:
        if "pods" in self.params:
            pods = self.params["pods"]
            return [pods] if isinstance(pods, str) else [str(pod) for pod in pods]
        if "pod" in self.params:
            return [str(self.params["pod"])]
        return []

    def to_config(self) -> dict:
        return {"at": self.at, "action": self.action.value, **self.params}


@dataclass(frozen=True)
class Scenario:
    name: str
    architecture: Architecture
    with_sc: bool
    replicas: int
    schedule: tuple[ScheduleStep, ...]
    latency_profile: Mapping[str, Any] = field(default_factory=dict)
    trials: int = 10
    seed: int = 0
    description: str = ""
    experiment: Optional[str] = None
    graceful_termination: float = 0.0

    def __post_init__(self):
        if not self.name:
            raise ScenarioError("A scenario needs a name")
        if isinstance(self.replicas, bool) or not isinstance(self.replicas, int) or self.replicas < 0:
            raise ScenarioError(f"{self.name}: replicas must be a non-negative integer, got {self.replicas!r}")
        if not isinstance(self.trials, int) or self.trials < 1:
            raise ScenarioError(f"{self.name}: trials must be a positive integer, got {self.trials!r}")
        if self.experiment is not None and self.experiment not in EXPERIMENTS:
            raise ScenarioError(f"{self.name}: unknown experiment {self.experiment!r}, allowed: {', '.join(EXPERIMENTS)}")
        if self.graceful_termination < 0:
            raise ScenarioError(f"{self.name}: graceful_termination must be non-negative")
        try:
            LatencyProfile().with_overrides(self.latency_profile)
        except ValidationError as error:
            raise ScenarioError(f"{self.name}: {error}") from None
        self._validate_schedule()

    def _validate_schedule(self) -> None:
        times = [step.at for step in self.schedule]
        if times != sorted(times):
            raise ScenarioError(f"{self.name}: schedule times must be sorted")
        ends = [i for i, step in enumerate(self.schedule) if step.action is Action.END_OBSERVATION]
        if len(ends) != 1 or ends[0] != len(self.schedule) - 1:
            raise ScenarioError(f"{self.name}: the schedule needs exactly one end_observation, as its last step")

        if self.experiment == "rq2" and self.architecture is Architecture.STATELESS_PARALLEL and self.with_sc and self.scales_in:
            raise ScenarioError(
                f"{self.name}: a scale-in during a failover cannot be run with the stateless_parallel architecture "
                "and the State Controller, the controller may delete the standby that is taking over"
            )

    @property
    def scales_in(self) -> bool:
        replicas = self.replicas
        for step in self.schedule:
            if step.action is Action.SCALE:
                if step.params["target"] < replicas:
                    return True
                replicas = step.params["target"]
        return False

    @property
    def end_time(self) -> float:
        return self.schedule[-1].at

    def with_overrides(self, trials: Optional[int] = None, seed: Optional[int] = None) -> "Scenario":
        changes = {}
        if trials is not None:
            changes["trials"] = trials
        if seed is not None:
            changes["seed"] = seed
        return dataclasses.replace(self, **changes) if changes else self

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any], source: str = "<mapping>") -> "Scenario":
        if not isinstance(data, Mapping):
            raise ScenarioError(f"{source}: a scenario must be a mapping")
        missing = [key for key in ("name", "architecture", "with_sc", "replicas", "schedule") if key not in data]
        if missing:
            raise ScenarioError(f"{source}: missing fields {', '.join(missing)}")
        try:
            architecture = Architecture(data["architecture"])
        except ValueError:
            raise ScenarioError(f"{source}: unknown architecture {data['architecture']!r}") from None
        if not isinstance(data["schedule"], list):
            raise ScenarioError(f"{source}: schedule must be a list of steps")

        return cls(
            name=str(data["name"]),
            architecture=architecture,
            with_sc=bool(data["with_sc"]),
            replicas=data["replicas"],
            schedule=tuple(ScheduleStep.from_mapping(step) for step in data["schedule"]),
            latency_profile=dict(data.get("latency_profile") or {}),
            trials=data.get("trials", 10),
            seed=data.get("seed", 0),
            description=str(data.get("description", "")),
            experiment=data.get("experiment"),
            graceful_termination=float(data.get("graceful_termination", 0.0)),
        )

    @classmethod
    def from_yaml_text(cls, text: str, source: str = "<text>") -> list["Scenario"]:
        try:
            documents = [doc for doc in yaml.safe_load_all(text) if doc is not None]
        except yaml.YAMLError as error:
            raise ScenarioError(f"{source}: not valid YAML: {error}") from None
        if not documents:
            raise ScenarioError(f"{source}: no scenario documents")
        return [cls.from_mapping(document, source=source) for document in documents]

    @classmethod
    def from_yaml(cls, path: Union[str, Path]) -> list["Scenario"]:
        with open(path, encoding="utf-8") as fp:
            return cls.from_yaml_text(fp.read(), source=str(path))

    def to_config(self) -> dict:
        config = {
            "name": self.name,
            "architecture": self.architecture.value,
            "with_sc": self.with_sc,
            "replicas": self.replicas,
            "trials": self.trials,
            "seed": self.seed,
            "graceful_termination": self.graceful_termination,
            "latency_profile": dict(self.latency_profile),
            "schedule": [step.to_config() for step in self.schedule],
        }
        if self.description:
            config["description"] = self.description
        if self.experiment:
            config["experiment"] = self.experiment
        return config


def list_scenarios() -> list[str]:
    return sorted(
        entry.name[: -len(".yaml")]
        for entry in resources.files(SCENARIO_PACKAGE).iterdir()
        if entry.name.endswith(".yaml")
    )


def load_scenarios(name_or_path: Union[str, Path]) -> list[Scenario]:
    """Load every scenario of a file, or of a shipped scenario by name."""
    path = Path(name_or_path)
    if path.exists():
        _logger.info(f"Loading scenarios from {path}")
        return Scenario.from_yaml(path)
    name = str(name_or_path)
    if name not in list_scenarios():
        raise ScenarioError(f"No scenario file {name!r}, shipped scenarios: {', '.join(list_scenarios())}")
    text = resources.files(SCENARIO_PACKAGE).joinpath(f"{name}.yaml").read_text(encoding="utf-8")
    return Scenario.from_yaml_text(text, source=f"scenario {name}")


_SELECTOR = re.compile(r"^(pod|active|standby)\[(\d+)\]$")


def resolve_pod_selector(selector: str, cluster: Cluster, controller: str) -> str:
    """``pod[i]``, ``active[i]`` and ``standby[i]`` index live pods by creation time; anything else is a pod name."""
    match = _SELECTOR.match(selector)
    if not match:
        cluster.pod(selector)
        return selector

    kind, index = match.group(1), int(match.group(2))
    pods = cluster.pods_of(controller)
    if kind != "pod":
        pods = [pod for pod in pods if pod.labels.get(HA_STATE_KEY) == kind]
    if index >= len(pods):
        raise UnknownObjectError("pod", selector)
    return pods[index].name
