"""
Simulated orchestration substrate: nodes, pods, volumes, label-selector
services, ordered and parallel workload controllers, repair behaviour and an
API-server style watch stream.

All state is mutated from engine dispatch only. Scheduled callbacks keep a
reference to the pod object they were created for and check
``Cluster.is_live(pod)`` before acting, because stateful pod names are reused
after a scale-in followed by a scale-out.
"""

import itertools
import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Mapping, Optional, Sequence, Union

from ha_sim.engine import SimEngine, SimTime, TraceKind
from ha_sim.errors import DuplicateNameError, NoEndpointError, UnknownObjectError, ValidationError
from ha_sim.latency import Architecture, LatencyProfile

_logger = logging.getLogger(__name__)

HA_STATE_KEY = "HAState"
PEER_KEY = "peer"
APP_KEY = "app"

DEFAULT_NODE_COUNT = 8


class NodeStatus(str, Enum):
    UP = "up"
    DOWN = "down"


class Readiness(str, Enum):
    READY = "ready"
    NOT_READY = "not_ready"


class Routing(str, Enum):
    ROUND_ROBIN = "round_robin"
    RANDOM = "random"


class NodeFailureMode(str, Enum):
    SHUTDOWN = "shutdown"
    REBOOT = "reboot"


class ApiEventKind(str, Enum):
    POD_FAILURE = "podFailure"
    POD_READY = "podReady"
    POD_ADDED = "podAdded"
    POD_DELETED = "podDeleted"
    SCALE_OUT = "scaleOut"
    SCALE_IN = "scaleIn"


@dataclass
class Node:
    name: str
    status: NodeStatus = NodeStatus.UP
    hosted_pods: set[str] = field(default_factory=set)


@dataclass(frozen=True)
class VolumeBinding:
    volume_id: str
    storage_area_key: str


@dataclass
class Volume:
    volume_id: str
    areas: dict[str, Any] = field(default_factory=dict)


@dataclass(eq=False)
class Pod:
    name: str
    controller: str
    creation_time: SimTime
    node: Optional[str]
    volume: VolumeBinding
    ordinal: Optional[int] = None
    replaces: Optional[str] = None
    readiness: Readiness = Readiness.NOT_READY
    labels: dict[str, str] = field(default_factory=dict)
    env: dict[str, str] = field(default_factory=dict)
    container_running: bool = False
    incarnation: int = 0
    terminating: bool = False

    @property
    def ready(self) -> bool:
        return self.readiness is Readiness.READY


@dataclass(eq=False)
class ServiceObject:
    name: str
    selector: dict[str, str]
    routing: Routing = Routing.ROUND_ROBIN
    endpoints: set[str] = field(default_factory=set)
    cursor: int = 0

    def matches(self, pod: Pod) -> bool:
        return pod.ready and all(pod.labels.get(key) == value for key, value in self.selector.items())

    def sorted_endpoints(self) -> list[str]:
        return sorted(self.endpoints)


@dataclass
class WorkloadController:
    name: str
    kind: Architecture
    replicas: int = 0
    graceful_termination: float = 0.0

    def __post_init__(self):
        self.kind = Architecture(self.kind)
        if self.replicas < 0:
            raise ValidationError(f"Replica count must be non-negative, got {self.replicas}")
        if self.graceful_termination < 0:
            raise ValidationError(f"Graceful termination must be non-negative, got {self.graceful_termination}")

    @property
    def ordered(self) -> bool:
        return self.kind is Architecture.STATEFUL_ORDERED


@dataclass(frozen=True)
class ApiEvent:
    time: SimTime
    kind: ApiEventKind
    subject: tuple[str, ...]
    attrs: Mapping[str, Any] = field(default_factory=dict)

    @property
    def pod(self) -> Optional[str]:
        return self.subject[0] if self.subject else None


class Subscription:
    def __init__(self, cluster: "Cluster", handler: Optional[Callable[[ApiEvent], None]] = None):
        self._cluster = cluster
        self.handler = handler
        self.events: list[ApiEvent] = []
        self.active = True

    def deliver(self, event: ApiEvent) -> None:
        if not self.active:
            return
        self.events.append(event)
        if self.handler:
            self.handler(event)

    def cancel(self) -> None:
        self.active = False
        self._cluster.unsubscribe(self)


@dataclass
class ScaleRequest:
    request_id: Optional[str]
    controller: str
    target: int
    requested_at: SimTime
    added: list[str] = field(default_factory=list)
    deleted: list[str] = field(default_factory=list)
    outstanding: int = 0
    on_complete: Optional[Callable[[], None]] = None


@dataclass(frozen=True)
class EndpointChange:
    """Which services a pod matched when it changed; applied once ``due`` is reached."""

    due: SimTime
    seq: int
    pod: str
    matches: tuple[tuple[ServiceObject, bool], ...]


PodListener = Callable[[str, Pod], None]


class Cluster:
    def __init__(self, engine: SimEngine, profile: LatencyProfile, node_count: int = DEFAULT_NODE_COUNT):
        if node_count < 1:
            raise ValidationError(f"A cluster needs at least one worker node, got {node_count}")
        self.engine = engine
        self.profile = profile
        self.nodes: dict[str, Node] = {f"worker-{i}": Node(f"worker-{i}") for i in range(1, node_count + 1)}
        self.pods: dict[str, Pod] = {}
        self.controllers: dict[str, WorkloadController] = {}
        self.services: dict[str, ServiceObject] = {}
        self.volumes: dict[str, Volume] = {}

        self._subscriptions: list[Subscription] = []
        self._pod_listeners: list[PodListener] = []
        self._placement = itertools.count()
        self._fault_ids = itertools.count(1)
        self._scale_ids = itertools.count(1)
        self._used_names: set[str] = set()
        self._endpoint_changes: list[EndpointChange] = []
        self._change_seq = itertools.count()
        self._applied_seq: dict[tuple[str, str], int] = {}
        self._refresh_times: set[SimTime] = set()
        self._active_scale: dict[str, ScaleRequest] = {}
        self._queued_scales: dict[str, deque[ScaleRequest]] = {}

    # region lookups

    def pod(self, name: str) -> Pod:
        try:
            return self.pods[name]
        except KeyError:
            raise UnknownObjectError("pod", name) from None

    def node(self, name: str) -> Node:
        try:
            return self.nodes[name]
        except KeyError:
            raise UnknownObjectError("node", name) from None

    def service(self, name: str) -> ServiceObject:
        try:
            return self.services[name]
        except KeyError:
            raise UnknownObjectError("service", name) from None

    def controller(self, name: str) -> WorkloadController:
        try:
            return self.controllers[name]
        except KeyError:
            raise UnknownObjectError("controller", name) from None

    def is_live(self, pod: Pod) -> bool:
        return self.pods.get(pod.name) is pod

    def pods_of(self, controller: str, include_terminating: bool = False) -> list[Pod]:
        pods = [
            pod for pod in self.pods.values()
            if pod.controller == controller and (include_terminating or not pod.terminating)
        ]
        return sorted(pods, key=lambda pod: (pod.creation_time, pod.name))

    def volume(self, volume_id: str) -> Volume:
        return self.volumes.setdefault(volume_id, Volume(volume_id))

    # endregion

    # region watch and kubelet-side notifications

    def watch_events(self, handler: Optional[Callable[[ApiEvent], None]] = None) -> Subscription:
        subscription = Subscription(self, handler)
        self._subscriptions.append(subscription)
        return subscription

    def unsubscribe(self, subscription: Subscription) -> None:
        if subscription in self._subscriptions:
            self._subscriptions.remove(subscription)

    def add_pod_listener(self, listener: PodListener) -> None:
        """Listeners see what happens inside a pod (container start/stop, env updates)."""
        self._pod_listeners.append(listener)

    def _emit(self, kind: ApiEventKind, subject: Sequence[str], **attrs: Any) -> ApiEvent:
        event = ApiEvent(time=self.engine.now, kind=kind, subject=tuple(subject), attrs=attrs)
        for subscription in list(self._subscriptions):
            subscription.deliver(event)
        return event

    def _notify(self, what: str, pod: Pod) -> None:
        for listener in self._pod_listeners:
            listener(what, pod)

    # endregion

    # region controllers

    def deploy(self, controller: WorkloadController, on_complete: Optional[Callable[[], None]] = None) -> WorkloadController:
        if controller.name in self.controllers:
            raise DuplicateNameError(f"Controller {controller.name!r} already exists")

        target = controller.replicas
        controller.replicas = 0
        self.controllers[controller.name] = controller
        _logger.info(f"Deploying {controller.kind.value} controller {controller.name} with {target} replicas")

        request = ScaleRequest(request_id=None, controller=controller.name, target=target, requested_at=self.engine.now, on_complete=on_complete)
        self._start_scale(request)
        return controller

    def scale(self, controller_name: str, target: int, on_complete: Optional[Callable[[], None]] = None) -> str:
        controller = self.controller(controller_name)
        if isinstance(target, bool) or not isinstance(target, int) or target < 0:
            raise ValidationError(f"Scale target must be a non-negative integer, got {target!r}")

        request = ScaleRequest(
            request_id=f"scale-{next(self._scale_ids)}",
            controller=controller.name,
            target=target,
            requested_at=self.engine.now,
            on_complete=on_complete,
        )
        self.engine.record(TraceKind.SCALE_REQUESTED, request=request.request_id, controller=controller.name, target=target)

        if controller.name in self._active_scale:
            self._queued_scales.setdefault(controller.name, deque()).append(request)
            self.engine.record(TraceKind.SCALE_QUEUED, request=request.request_id, behind=self._active_scale[controller.name].request_id)
            return request.request_id

        self._start_scale(request)
        return request.request_id

    def _start_scale(self, request: ScaleRequest) -> None:
        controller = self.controllers[request.controller]
        self._active_scale[controller.name] = request
        current = self.pods_of(controller.name)
        controller.replicas = request.target

        if request.request_id:
            _logger.debug("%s: %s %d -> %d", request.request_id, controller.name, len(current), request.target)

        if request.target > len(current):
            missing = request.target - len(current)
            if controller.ordered:
                ordinals = [pod.ordinal for pod in current]
                start = max(ordinals) + 1 if ordinals else 0
                self._create_in_sequence(request, list(range(start, start + missing)))
            else:
                request.outstanding = missing
                for _ in range(missing):
                    self._create_pod(controller, request=request, on_ready=lambda: self._part_done(request))
        elif request.target < len(current):
            surplus = len(current) - request.target
            if controller.ordered:
                victims = sorted(current, key=lambda pod: pod.ordinal, reverse=True)[:surplus]
                self._delete_in_sequence(request, victims)
            else:
                candidates = sorted(current, key=lambda pod: pod.name)
                victims = self.engine.rng.sample(candidates, surplus)
                request.outstanding = surplus
                for victim in victims:
                    self._delete_pod(victim, reason="scale_in", request=request, on_deleted=lambda: self._part_done(request))
        else:
            self._complete_scale(request)

    def _create_in_sequence(self, request: ScaleRequest, ordinals: list[int]) -> None:
        if not ordinals:
            self._complete_scale(request)
            return
        controller = self.controllers[request.controller]
        ordinal, rest = ordinals[0], ordinals[1:]
        self._create_pod(controller, ordinal=ordinal, request=request, on_ready=lambda: self._create_in_sequence(request, rest))

    def _delete_in_sequence(self, request: ScaleRequest, victims: list[Pod]) -> None:
        if not victims:
            self._complete_scale(request)
            return
        victim, rest = victims[0], victims[1:]
        self._delete_pod(victim, reason="scale_in", request=request, on_deleted=lambda: self._delete_in_sequence(request, rest))

    def _part_done(self, request: ScaleRequest) -> None:
        request.outstanding -= 1
        if request.outstanding == 0:
            self._complete_scale(request)

    def _complete_scale(self, request: ScaleRequest) -> None:
        controller = request.controller
        if request.request_id is None:
            self.engine.record(TraceKind.DEPLOY_COMPLETE, controller=controller, pods=[pod.name for pod in self.pods_of(controller)])
        else:
            self.engine.record(
                TraceKind.SCALE_COMPLETE,
                request=request.request_id,
                controller=controller,
                added=list(request.added),
                deleted=list(request.deleted),
            )
            if request.added or request.deleted:
                kind = ApiEventKind.SCALE_OUT if request.added else ApiEventKind.SCALE_IN
                names = tuple(request.added or request.deleted)
                self.engine.schedule(
                    self.profile.draw("scale_event_delay", self.engine.rng),
                    lambda: self._emit(kind, names, request=request.request_id, controller=controller),
                    f"{kind.value} {request.request_id}",
                )

        self._active_scale.pop(controller, None)
        if request.on_complete:
            request.on_complete()

        queued = self._queued_scales.get(controller)
        if queued and controller not in self._active_scale:
            self._start_scale(queued.popleft())

    # endregion

    # region pod lifecycle

    def _new_pod_name(self, controller: WorkloadController, ordinal: Optional[int]) -> str:
        if ordinal is not None:
            return f"{controller.name}-{ordinal}"
        while True:
            name = f"{controller.name}-{self.engine.rng.suffix()}"
            if name not in self._used_names:
                return name

    def _place(self) -> Optional[str]:
        up = sorted(name for name, node in self.nodes.items() if node.status is NodeStatus.UP)
        if not up:
            return None
        return up[next(self._placement) % len(up)]

    def _create_pod(
        self,
        controller: WorkloadController,
        ordinal: Optional[int] = None,
        replaces: Optional[str] = None,
        request: Optional[ScaleRequest] = None,
        on_ready: Optional[Callable[[], None]] = None,
    ) -> Pod:
        name = self._new_pod_name(controller, ordinal)
        self._used_names.add(name)
        if controller.ordered:
            binding = VolumeBinding(volume_id=f"{controller.name}-PV{ordinal}", storage_area_key=name)
        else:
            # one shared volume, each pod identity gets its own area
            binding = VolumeBinding(volume_id=f"{controller.name}-PV", storage_area_key=name)
        self.volume(binding.volume_id)

        node = self._place()
        pod = Pod(
            name=name,
            controller=controller.name,
            creation_time=self.engine.now,
            node=node,
            volume=binding,
            ordinal=ordinal,
            replaces=replaces,
            labels={APP_KEY: controller.name},
        )
        self.pods[name] = pod
        if node:
            self.nodes[node].hosted_pods.add(name)
        if request and request.request_id:
            request.added.append(name)

        request_id = request.request_id if request else None
        self.engine.record(TraceKind.POD_CREATED, pod=name, node=node, volume=binding.volume_id, replaces=replaces, request=request_id)
        attrs = {"replaces": replaces} if replaces else {}
        self._emit(ApiEventKind.POD_ADDED, (name,), request=request_id, **attrs)

        if node is None:
            _logger.warning(f"No worker node is up, pod {name} stays unscheduled")
            return pod

        self.engine.schedule(
            self.profile.draw("pod_create", self.engine.rng),
            lambda: self._start_container(pod, request_id=request_id, on_ready=on_ready),
            f"create {name}",
        )
        return pod

    def _start_container(self, pod: Pod, request_id: Optional[str] = None, fault: Optional[str] = None, on_ready: Optional[Callable[[], None]] = None) -> None:
        if not self.is_live(pod) or pod.terminating or pod.container_running:
            return
        if pod.node is None or self.nodes[pod.node].status is NodeStatus.DOWN:
            return

        pod.container_running = True
        pod.incarnation += 1
        pod.readiness = Readiness.READY
        self.engine.record(TraceKind.POD_READY, pod=pod.name, node=pod.node, replaces=pod.replaces, request=request_id, fault=fault)
        self._mark_dirty(pod.name)
        self._notify("container_started", pod)
        self._emit(ApiEventKind.POD_READY, (pod.name,), request=request_id)
        if on_ready:
            on_ready()

    def _stop_container(self, pod: Pod) -> None:
        if pod.container_running:
            pod.container_running = False
            self._notify("container_stopped", pod)

    def _set_not_ready(self, pod: Pod, fault: str) -> None:
        if not pod.ready:
            return
        pod.readiness = Readiness.NOT_READY
        self.engine.record(TraceKind.POD_NOT_READY, pod=pod.name, node=pod.node, fault=fault)
        self._mark_dirty(pod.name)
        self._emit(ApiEventKind.POD_FAILURE, (pod.name,), fault=fault)

    def _delete_pod(
        self,
        pod: Pod,
        reason: str,
        request: Optional[ScaleRequest] = None,
        on_deleted: Optional[Callable[[], None]] = None,
        immediately: bool = False,
        fault: Optional[str] = None,
    ) -> None:
        pod.terminating = True
        controller = self.controllers[pod.controller]
        delay = 0.0 if immediately else controller.graceful_termination + self.profile.draw("pod_delete", self.engine.rng)

        def finalize():
            self._stop_container(pod)
            pod.readiness = Readiness.NOT_READY
            del self.pods[pod.name]
            if pod.node:
                self.nodes[pod.node].hosted_pods.discard(pod.name)
            if request and request.request_id:
                request.deleted.append(pod.name)
            request_id = request.request_id if request else None
            self.engine.record(TraceKind.POD_DELETED, pod=pod.name, reason=reason, request=request_id, fault=fault)
            self._mark_dirty(pod.name)
            self._notify("deleted", pod)
            self._emit(ApiEventKind.POD_DELETED, (pod.name,), reason=reason, request=request_id, fault=fault)
            if on_deleted:
                on_deleted()

        if immediately:
            finalize()
        else:
            self.engine.schedule(delay, finalize, f"delete {pod.name}")

    # endregion

    # region faults

    def inject_container_failure(self, pod_name: str) -> str:
        pod = self.pod(pod_name)
        fault_id = f"fault-{next(self._fault_ids)}"

        if not pod.ready or not pod.container_running or pod.terminating:
            _logger.warning(f"{fault_id}: pod {pod_name} is not serving, container failure ignored")
            self.engine.record(TraceKind.FAULT_IGNORED, fault=fault_id, fault_kind="container", pods=[pod_name], readiness=pod.readiness.value)
            return fault_id

        self.engine.record(TraceKind.FAULT_INJECTED, fault=fault_id, fault_kind="container", pods=[pod_name], node=pod.node)
        self._stop_container(pod)

        def detect():
            if not self.is_live(pod):
                return
            self._set_not_ready(pod, fault_id)
            self.engine.schedule(
                self.profile.draw("container_restart", self.engine.rng),
                lambda: self._start_container(pod, fault=fault_id),
                f"restart {pod.name}",
            )

        self.engine.schedule(self.profile.draw("detection_delay", self.engine.rng), detect, f"detect {fault_id}")
        return fault_id

    def inject_node_failure(self, node_name: str, mode: Union[NodeFailureMode, str] = NodeFailureMode.SHUTDOWN, duration: Optional[float] = None) -> str:
        node = self.node(node_name)
        mode = NodeFailureMode(mode)
        if mode is NodeFailureMode.REBOOT and (duration is None or duration < 0):
            raise ValidationError(f"A node reboot needs a non-negative duration, got {duration!r}")
        fault_id = f"fault-{next(self._fault_ids)}"
        hosted = sorted(node.hosted_pods)

        if node.status is NodeStatus.DOWN:
            _logger.warning(f"{fault_id}: node {node_name} is already down, failure ignored")
            self.engine.record(TraceKind.FAULT_IGNORED, fault=fault_id, fault_kind="node", node=node_name, pods=hosted)
            return fault_id

        node.status = NodeStatus.DOWN
        self.engine.record(TraceKind.FAULT_INJECTED, fault=fault_id, fault_kind="node", node=node_name, mode=mode.value, pods=hosted)
        self.engine.record(TraceKind.NODE_DOWN, node=node_name, fault=fault_id)
        victims = [self.pods[name] for name in hosted]
        for pod in victims:
            self._stop_container(pod)

        def detect():
            for pod in victims:
                if self.is_live(pod):
                    self._set_not_ready(pod, fault_id)

        self.engine.schedule(self.profile.draw("detection_delay", self.engine.rng), detect, f"detect {fault_id}")
        self.engine.schedule(self.profile.draw("node_eviction_timeout", self.engine.rng), lambda: self._evict(node, fault_id), f"evict {node_name}")

        if mode is NodeFailureMode.REBOOT:
            downtime = duration + self.profile.draw("node_rejoin", self.engine.rng)
            self.engine.schedule(downtime, lambda: self._rejoin(node, fault_id), f"rejoin {node_name}")
        return fault_id

    def _evict(self, node: Node, fault_id: str) -> None:
        """Pods of parallel controllers move to other nodes, ordered ones wait for the node."""
        if node.status is NodeStatus.UP:
            return
        for name in sorted(node.hosted_pods):
            pod = self.pods[name]
            controller = self.controllers[pod.controller]
            if controller.ordered or pod.terminating:
                continue
            _logger.info(f"{fault_id}: evicting {name} from {node.name}")
            self._delete_pod(pod, reason="eviction", immediately=True, fault=fault_id)
            self._create_pod(controller, replaces=name)

    def _rejoin(self, node: Node, fault_id: str) -> None:
        node.status = NodeStatus.UP
        self.engine.record(TraceKind.NODE_UP, node=node.name, fault=fault_id)
        for name in sorted(node.hosted_pods):
            pod = self.pods[name]
            self.engine.schedule(
                self.profile.draw("container_restart", self.engine.rng),
                lambda pod=pod: self._start_container(pod, fault=fault_id),
                f"restart {name}",
            )

    # endregion

    # region services, labels and env

    def create_service(self, name: str, selector: Mapping[str, str], routing: Union[Routing, str] = Routing.ROUND_ROBIN) -> ServiceObject:
        if name in self.services:
            raise DuplicateNameError(f"Service {name!r} already exists")
        service = ServiceObject(name=name, selector=dict(selector), routing=Routing(routing))
        self.services[name] = service
        self.engine.record(TraceKind.SERVICE_CREATED, service=name, selector=dict(selector))
        for pod in sorted(self.pods.values(), key=lambda pod: pod.name):
            if service.matches(pod):
                self._queue_change(pod.name, ((service, True),))
        return service

    def delete_service(self, name: str) -> None:
        self.service(name)
        del self.services[name]
        self.engine.record(TraceKind.SERVICE_DELETED, service=name)

    def route_request(self, service_name: str, request: Any = None) -> str:
        service = self.service(service_name)
        endpoints = service.sorted_endpoints()
        if not endpoints:
            raise NoEndpointError(service_name)
        if service.routing is Routing.RANDOM:
            return self.engine.rng.choice(endpoints)
        pod = endpoints[service.cursor % len(endpoints)]
        service.cursor += 1
        return pod

    def set_label(self, pod_name: str, key: str, value: Optional[str]) -> None:
        pod = self.pod(pod_name)
        if value is None:
            pod.labels.pop(key, None)
        else:
            pod.labels[key] = value
        self.engine.record(TraceKind.LABEL_CHANGED, pod=pod_name, key=key, value=value)
        self._mark_dirty(pod_name)

    def set_env(self, pod_name: str, key: str, value: str) -> None:
        pod = self.pod(pod_name)
        written_at = self.engine.now

        def propagate():
            if not self.is_live(pod):
                return
            pod.env[key] = value
            self.engine.record(TraceKind.ENV_CHANGED, pod=pod_name, key=key, value=value, written_at=written_at)
            self._notify("env_changed", pod)

        self.engine.schedule(self.profile.draw("env_propagation", self.engine.rng), propagate, f"env {pod_name} {key}={value}")

    def _mark_dirty(self, pod_name: str) -> None:
        pod = self.pods.get(pod_name)
        matches = tuple(
            (self.services[name], pod is not None and self.services[name].matches(pod))
            for name in sorted(self.services)
        )
        self._queue_change(pod_name, matches)

    def _queue_change(self, pod_name: str, matches: tuple[tuple[ServiceObject, bool], ...]) -> None:
        due = self.engine.now + self.profile.draw("endpoint_update", self.engine.rng)
        self._endpoint_changes.append(EndpointChange(due=due, seq=next(self._change_seq), pod=pod_name, matches=matches))
        if due in self._refresh_times:
            return
        self._refresh_times.add(due)
        self.engine.schedule_at(due, lambda: self._refresh_endpoints(due), "endpoint refresh")

    def _refresh_endpoints(self, fire_at: SimTime) -> None:
        self._refresh_times.discard(fire_at)
        now = self.engine.now
        ripe = sorted((change for change in self._endpoint_changes if change.due <= now), key=lambda change: (change.due, change.seq))
        if not ripe:
            return
        self._endpoint_changes = [change for change in self._endpoint_changes if change.due > now]

        before: dict[str, set[str]] = {}
        for change in ripe:
            for service, matched in change.matches:
                key = (change.pod, service.name)
                # skip deleted services and changes overtaken by a newer one
                if self.services.get(service.name) is not service or change.seq < self._applied_seq.get(key, -1):
                    continue
                self._applied_seq[key] = change.seq
                before.setdefault(service.name, set(service.endpoints))
                if matched:
                    service.endpoints.add(change.pod)
                else:
                    service.endpoints.discard(change.pod)

        for name in sorted(before):
            service = self.services[name]
            if service.endpoints != before[name]:
                self.engine.record(TraceKind.ENDPOINTS_CHANGED, service=name, endpoints=service.sorted_endpoints())

    def matching_ready_pods(self, selector: Mapping[str, str]) -> set[str]:
        query = ServiceObject(name="", selector=dict(selector))
        return {pod.name for pod in self.pods.values() if query.matches(pod)}

    # endregion
