"""
The HA State Controller.

Pairs pods of one workload controller by creation time, marks the older pod of
each pair ``active`` and the younger ``standby`` through the ``HAState`` label
and environment variable, and keeps one ``replicate-{active}`` service per pair
so the active pod can push its state to the standby. Watch events are handled
one at a time in arrival order; every event costs ``sc_handling``.
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Optional

from ha_sim.cluster import APP_KEY, HA_STATE_KEY, PEER_KEY, ApiEvent, ApiEventKind, Cluster, Subscription
from ha_sim.engine import TraceKind
from ha_sim.errors import HaSimError, UnknownObjectError, ValidationError

_logger = logging.getLogger(__name__)

REPLICATION_SERVICE_PREFIX = "replicate-"


class HAState(str, Enum):
    ACTIVE = "active"
    STANDBY = "standby"


def replication_service_name(active: str) -> str:
    if not active:
        raise ValidationError("A replication service needs the name of an active pod")
    return f"{REPLICATION_SERVICE_PREFIX}{active}"


@dataclass
class PairRecord:
    active: str
    standby: str
    replication_service: str

    @classmethod
    def of(cls, active: str, standby: str) -> "PairRecord":
        if active == standby:
            raise ValidationError(f"A pod cannot protect itself: {active!r}")
        return cls(active=active, standby=standby, replication_service=replication_service_name(active))

    @property
    def members(self) -> tuple[str, str]:
        return self.active, self.standby

    def peer_of(self, pod: str) -> str:
        return self.standby if pod == self.active else self.active


@dataclass
class PairRegistry:
    records: list[PairRecord] = field(default_factory=list)
    pending: list[str] = field(default_factory=list)

    def pair_of(self, pod: str) -> Optional[PairRecord]:
        for record in self.records:
            if pod in record.members:
                return record
        return None

    def knows(self, pod: str) -> bool:
        return pod in self.pending or self.pair_of(pod) is not None

    def add_pending(self, pod: str) -> None:
        if pod not in self.pending:
            self.pending.append(pod)

    def discard_pending(self, pod: str) -> None:
        if pod in self.pending:
            self.pending.remove(pod)


class StateController:
    def __init__(self, cluster: Cluster, controller: str, app_service: Optional[str] = None):
        self.cluster = cluster
        self.engine = cluster.engine
        self.controller = controller
        self.app_service = app_service
        self.registry = PairRegistry()
        self.queue: deque[ApiEvent] = deque()
        self.busy = False
        self.awaiting_repair: set[str] = set()
        self.subscription: Optional[Subscription] = None
        self._on_assigned: Optional[Callable[[], None]] = None

    @property
    def idle(self) -> bool:
        return not self.busy and not self.queue

    def start(self, pods: Optional[Iterable[str]] = None, on_assigned: Optional[Callable[[], None]] = None) -> None:
        """Subscribe to the watch and queue the initial assignment of the running pods."""
        if pods is None:
            pods = [pod.name for pod in self.cluster.pods_of(self.controller)]
        pods = list(pods)
        self._on_assigned = on_assigned
        self.subscription = self.cluster.watch_events(self._enqueue)
        self.engine.record(TraceKind.SC_STARTED, controller=self.controller, pods=pods)
        _logger.info(f"State controller watching {self.controller} ({len(pods)} pods)")
        self._enqueue(ApiEvent(time=self.engine.now, kind=ApiEventKind.SCALE_OUT, subject=tuple(pods), attrs={"reason": "initial"}))

    def stop(self) -> None:
        if self.subscription:
            self.subscription.cancel()
            self.subscription = None

    # region FIFO

    def _enqueue(self, event: ApiEvent) -> None:
        self.queue.append(event)
        if not self.busy:
            self._dequeue()

    def _dequeue(self) -> None:
        if not self.queue:
            self.busy = False
            return
        self.busy = True
        event = self.queue.popleft()
        self.engine.schedule(
            self.cluster.profile.draw("sc_handling", self.engine.rng),
            lambda: self._handle(event),
            f"SC {event.kind.value} {','.join(event.subject)}",
        )

    def _handle(self, event: ApiEvent) -> None:
        try:
            self.handle_event(event)
        except HaSimError as error:
            _logger.warning(f"Skipping {event.kind.value} for {event.subject}: {error}")
            self.engine.record(TraceKind.SC_EVENT_SKIPPED, event=event.kind.value, pods=list(event.subject), reason=str(error))
        finally:
            self._dequeue()

    # endregion

    def handle_event(self, event: ApiEvent) -> list[str]:
        kind = event.kind
        if kind is ApiEventKind.SCALE_OUT:
            records = self.handle_scale_out(list(event.subject), request=event.attrs.get("request"))
            if event.attrs.get("reason") == "initial" and self._on_assigned:
                self._on_assigned()
            return [f"paired {record.active}/{record.standby}" for record in records]
        if kind is ApiEventKind.SCALE_IN:
            records = self.handle_scale_in(list(event.subject), request=event.attrs.get("request"))
            return [f"removed {record.active}/{record.standby}" for record in records]

        pod = event.pod
        if kind is ApiEventKind.POD_DELETED:
            self.awaiting_repair.discard(pod)
            if event.attrs.get("reason") == "eviction":
                return self._dissolve_pair_of_deleted(pod, fault=event.attrs.get("fault"))
            return []
        if kind is ApiEventKind.POD_ADDED or not self._manages(pod):
            # new pods are paired on scaleOut
            return []

        if kind is ApiEventKind.POD_FAILURE:
            record = self.registry.pair_of(pod)
            if record is None:
                self.engine.record(TraceKind.SC_EVENT_SKIPPED, event=kind.value, pods=[pod], reason="unpaired")
                return []
            if record.active == pod:
                self.handle_active_failure(pod)
                return [f"failover {pod} -> {record.active}"]
            self.handle_standby_failure(pod, fault=event.attrs.get("fault"))
            return [f"standby {pod} awaiting repair"]

        if pod in self.awaiting_repair:
            return self._reassert_after_repair(pod)
        return []

    def _manages(self, pod: Optional[str]) -> bool:
        if pod is None:
            return False
        if self.registry.knows(pod):
            return True
        live = self.cluster.pods.get(pod)
        if live is None:
            raise UnknownObjectError("pod", pod)
        return live.controller == self.controller

    # region assignment

    def assign_ha_state_and_peer_labels(self, pods: list[str], request: Optional[str] = None) -> list[PairRecord]:
        resolved = [self.cluster.pod(name) for name in pods]
        resolved.sort(key=lambda pod: (pod.creation_time, pod.name))

        records = []
        for older, younger in zip(resolved[0::2], resolved[1::2]):
            record = PairRecord.of(active=older.name, standby=younger.name)
            self._label(record.active, HAState.ACTIVE, peer=record.standby)
            self._label(record.standby, HAState.STANDBY, peer=record.active)
            if record.replication_service in self.cluster.services:
                self.cluster.delete_service(record.replication_service)
            self.cluster.create_service(record.replication_service, {HA_STATE_KEY: HAState.STANDBY.value, PEER_KEY: record.active})

            for name in record.members:
                self.registry.discard_pending(name)
                self.engine.record(
                    TraceKind.HA_STATE_ASSIGNED,
                    pod=name,
                    state=(HAState.ACTIVE if name == record.active else HAState.STANDBY).value,
                    peer=record.peer_of(name),
                    request=request,
                )
            self.registry.records.append(record)
            records.append(record)

        if len(resolved) % 2:
            leftover = resolved[-1].name
            _logger.info(f"Odd number of pods, {leftover} waits for a peer")
            self.registry.add_pending(leftover)
        return records

    def _label(self, pod: str, state: HAState, peer: Optional[str] = None) -> None:
        self.cluster.set_label(pod, HA_STATE_KEY, state.value)
        if peer is not None:
            self.cluster.set_label(pod, PEER_KEY, peer)
        self.cluster.set_env(pod, HA_STATE_KEY, state.value)

    # endregion

    # region failures

    def handle_active_failure(self, failed: str) -> Optional[PairRecord]:
        record = self.registry.pair_of(failed)
        if record is None or record.active != failed:
            return None

        promoted = record.standby
        self._label(promoted, HAState.ACTIVE)
        self._label(failed, HAState.STANDBY)
        self.awaiting_repair.add(failed)
        self.awaiting_repair.discard(promoted)

        if record.replication_service in self.cluster.services:
            self.cluster.delete_service(record.replication_service)
        record.active, record.standby = promoted, failed
        record.replication_service = replication_service_name(promoted)
        self.cluster.create_service(record.replication_service, {HA_STATE_KEY: HAState.STANDBY.value, PEER_KEY: promoted})

        promoted_ready = self.cluster.pod(promoted).ready
        if not promoted_ready:
            _logger.warning(f"Both pods of pair {failed}/{promoted} are down, service waits for a repair")
        self.engine.record(TraceKind.FAILOVER, failed=failed, promoted=promoted, service=record.replication_service, promoted_ready=promoted_ready)
        return record

    def handle_standby_failure(self, failed: str, fault: Optional[str] = None) -> Optional[PairRecord]:
        record = self.registry.pair_of(failed)
        if record is None or record.standby != failed:
            return None
        self.awaiting_repair.add(failed)
        self.engine.record(TraceKind.PROTECTION_LOST, pod=record.active, standby=failed, reason="standby_failed", fault=fault)
        return record

    def _reassert_after_repair(self, pod: str) -> list[str]:
        self.awaiting_repair.discard(pod)
        record = self.registry.pair_of(pod)
        if record is None:
            return []
        if record.standby != pod:
            # promoted while it was down, nothing to reassert
            return []
        self._label(pod, HAState.STANDBY)
        self.engine.record(TraceKind.PROTECTION_RESTORED, pod=record.active, standby=pod)
        return [f"standby {pod} reasserted"]

    # endregion

    # region scaling

    def handle_scale_out(self, added: list[str], request: Optional[str] = None) -> list[PairRecord]:
        candidates = [name for name in self.registry.pending if name in self.cluster.pods]
        for name in added:
            if name in candidates or self.registry.pair_of(name):
                continue
            if name not in self.cluster.pods:
                _logger.warning(f"Added pod {name} is already gone")
                continue
            candidates.append(name)
        if not candidates:
            return []
        self.registry.pending = []
        return self.assign_ha_state_and_peer_labels(candidates, request=request)

    def handle_scale_in(self, deleted: list[str], request: Optional[str] = None) -> list[PairRecord]:
        deleted_set = set(deleted)
        removed = []
        for record in list(self.registry.records):
            gone = deleted_set.intersection(record.members)
            if not gone:
                continue
            self._drop_record(record)
            removed.append(record)
            if len(gone) == 1:
                survivor = record.peer_of(gone.pop())
                self.registry.add_pending(survivor)
                _logger.warning(f"Scale-in removed the peer of {survivor}, it is no longer protected")
                self.engine.record(TraceKind.PROTECTION_LOST, pod=survivor, reason="scale_in", request=request)

        for name in sorted(deleted_set):
            self.registry.discard_pending(name)
            self.awaiting_repair.discard(name)
        return removed

    def _dissolve_pair_of_deleted(self, pod: str, fault: Optional[str] = None) -> list[str]:
        self.registry.discard_pending(pod)
        record = self.registry.pair_of(pod)
        if record is None:
            return []
        self._drop_record(record)
        survivor = record.peer_of(pod)
        self.registry.add_pending(survivor)
        self.engine.record(TraceKind.PROTECTION_LOST, pod=survivor, reason="pod_deleted", deleted=pod, fault=fault)
        return [f"pair {record.active}/{record.standby} dissolved"]

    def _drop_record(self, record: PairRecord) -> None:
        self.registry.records.remove(record)
        if record.replication_service in self.cluster.services:
            self.cluster.delete_service(record.replication_service)

    # endregion

    def pair_invariant_violations(self) -> list[str]:
        """Violations of pair exclusivity, endpoint correctness and the service/pair bijection."""
        problems = []
        seen: dict[str, PairRecord] = {}
        for record in self.registry.records:
            for name in record.members:
                if name in seen:
                    problems.append(f"{name} belongs to two pairs")
                seen[name] = record
                if name in self.registry.pending:
                    problems.append(f"{name} is both paired and pending")

            active = self.cluster.pods.get(record.active)
            standby = self.cluster.pods.get(record.standby)
            if active is None or standby is None:
                problems.append(f"pair {record.active}/{record.standby} references a deleted pod")
                continue
            expected = {
                active: (HAState.ACTIVE.value, record.standby),
                standby: (HAState.STANDBY.value, record.active),
            }
            for pod, (state, peer) in expected.items():
                labels = (pod.labels.get(HA_STATE_KEY), pod.labels.get(PEER_KEY))
                if labels != (state, peer):
                    problems.append(f"{pod.name} labeled {labels}, expected {(state, peer)}")
            if record.replication_service != replication_service_name(record.active):
                problems.append(f"pair {record.active}/{record.standby} uses {record.replication_service}")

        for pod in self.cluster.pods_of(self.controller, include_terminating=True):
            state = pod.labels.get(HA_STATE_KEY)
            if state is not None and state not in (HAState.ACTIVE.value, HAState.STANDBY.value):
                problems.append(f"{pod.name} has HAState {state!r}")

        replication_services = {name for name in self.cluster.services if name.startswith(REPLICATION_SERVICE_PREFIX)}
        expected_services = {record.replication_service for record in self.registry.records}
        if replication_services != expected_services:
            problems.append(f"replication services {sorted(replication_services)} != pairs {sorted(expected_services)}")

        if self.app_service and self.app_service in self.cluster.services:
            endpoints = self.cluster.services[self.app_service].endpoints
            expected_endpoints = self.cluster.matching_ready_pods({APP_KEY: self.controller, HA_STATE_KEY: HAState.ACTIVE.value})
            if endpoints != expected_endpoints:
                problems.append(f"{self.app_service} endpoints {sorted(endpoints)} != active ready pods {sorted(expected_endpoints)}")
        return problems
