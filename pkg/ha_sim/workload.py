"""
The streaming application running inside the pods.

Each client session advances one stream second per simulated second while its
pod serves it. Serving pods checkpoint every session periodically to their own
storage area and, under the State Controller, push the records through the
``replicate-{pod}`` service to the standby, which keeps them in memory and in
its own storage area. The endpoint process of each pod polls ``HAState`` and
takes over interrupted sessions when it becomes active.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

from ha_sim.cluster import HA_STATE_KEY, PEER_KEY, Cluster, Pod
from ha_sim.engine import ScheduledAction, SimTime, Trace, TraceKind
from ha_sim.errors import DuplicateNameError, MetricsError, NoEndpointError, ServiceUnavailableError, UnknownObjectError
from ha_sim.state_controller import HAState, replication_service_name

_logger = logging.getLogger(__name__)


@dataclass
class StreamSession:
    client_id: str
    serving_pod: Optional[str]
    started_at: SimTime
    anchor_position: float = 0.0
    anchor_time: SimTime = 0.0
    streaming: bool = True
    interrupted_from: Optional[str] = None
    checkpointed: bool = False

    def position_at(self, now: SimTime) -> float:
        if not self.streaming:
            return self.anchor_position
        return self.anchor_position + (now - self.anchor_time)

    def freeze(self, now: SimTime, pod: str) -> None:
        self.anchor_position = self.position_at(now)
        self.anchor_time = now
        self.streaming = False
        self.interrupted_from = pod

    def resume(self, position: float, now: SimTime, pod: str) -> None:
        self.anchor_position = position
        self.anchor_time = now
        self.streaming = True
        self.serving_pod = pod
        self.interrupted_from = None


@dataclass(frozen=True)
class StateRecord:
    client_id: str
    position: float
    written_at: SimTime


@dataclass
class StorageArea:
    key: str
    records: dict[str, StateRecord] = field(default_factory=dict)

    def write(self, record: StateRecord) -> None:
        current = self.records.get(record.client_id)
        if current is None or record.written_at >= current.written_at:
            self.records[record.client_id] = record

    def read(self, client_id: str) -> Optional[StateRecord]:
        return self.records.get(client_id)


@dataclass(eq=False)
class PodProcess:
    """The application inside one container incarnation."""

    pod: Pod
    incarnation: int
    ha_state: Optional[str] = None
    serving: bool = False
    cache: dict[str, StateRecord] = field(default_factory=dict)
    checkpoint: Optional[ScheduledAction] = None
    poll: Optional[ScheduledAction] = None

    @property
    def name(self) -> str:
        return self.pod.name


@dataclass(frozen=True)
class ContinuityReport:
    client_id: str
    resumed_position: Optional[float]
    last_checkpoint: Optional[float]
    continuous: bool
    recovered: bool
    fault: Optional[str] = None


class Workload:
    def __init__(self, cluster: Cluster, controller: str, app_service: str, with_sc: bool):
        self.cluster = cluster
        self.engine = cluster.engine
        self.controller = controller
        self.app_service = app_service
        self.with_sc = with_sc
        self.sessions: dict[str, StreamSession] = {}
        self.processes: dict[str, PodProcess] = {}
        self.interrupted_pods: dict[str, SimTime] = {}
        self._client_counter = 0
        cluster.add_pod_listener(self._on_pod_event)

    # region sessions

    def start_stream(self, client_id: Optional[str] = None) -> StreamSession:
        if client_id is None:
            self._client_counter += 1
            client_id = f"client-{self._client_counter}"
        if client_id in self.sessions:
            raise DuplicateNameError(f"Client {client_id!r} already streams")
        try:
            pod = self.cluster.route_request(self.app_service, client_id)
        except NoEndpointError:
            raise ServiceUnavailableError(self.app_service) from None

        now = self.engine.now
        session = StreamSession(client_id=client_id, serving_pod=pod, started_at=now, anchor_time=now)
        self.sessions[client_id] = session
        self.engine.record(TraceKind.STREAM_STARTED, client=client_id, pod=pod)

        process = self.processes.get(pod)
        if process:
            self._ensure_checkpointing(process)
        return session

    def start_streams(self, count: Optional[int] = None) -> list[StreamSession]:
        """Start ``count`` sessions, by default one per application endpoint."""
        if count is None:
            count = len(self.cluster.service(self.app_service).endpoints)
        return [self.start_stream() for _ in range(count)]

    def sessions_on(self, pod: str) -> list[StreamSession]:
        return [
            session for _, session in sorted(self.sessions.items())
            if session.serving_pod == pod and session.streaming
        ]

    # endregion

    # region storage

    def storage_area(self, pod: Pod) -> StorageArea:
        volume = self.cluster.volume(pod.volume.volume_id)
        key = pod.volume.storage_area_key
        if key not in volume.areas:
            volume.areas[key] = StorageArea(key)
        return volume.areas[key]

    def _read_state(self, process: PodProcess, client_id: str) -> Optional[StateRecord]:
        candidates = [process.cache.get(client_id), self.storage_area(process.pod).read(client_id)]
        candidates = [record for record in candidates if record is not None]
        if not candidates:
            return None
        return max(candidates, key=lambda record: record.written_at)

    # endregion

    # region checkpointing and replication

    def checkpoint_tick(self, pod_name: str) -> list[StateRecord]:
        process = self.processes.get(pod_name)
        if process is None or not process.serving:
            return []

        now = self.engine.now
        area = self.storage_area(process.pod)
        records = []
        for session in self.sessions_on(pod_name):
            record = StateRecord(client_id=session.client_id, position=session.position_at(now), written_at=now)
            area.write(record)
            session.checkpointed = True
            records.append(record)
            self.engine.record(TraceKind.CHECKPOINT_WRITTEN, client=session.client_id, pod=pod_name, position=record.position)

        if records and self.with_sc:
            self._replicate(pod_name, records)
        return records

    def _replicate(self, sender: str, records: list[StateRecord]) -> None:
        service = replication_service_name(sender)
        try:
            target = self.cluster.route_request(service, records)
        except (UnknownObjectError, NoEndpointError) as error:
            self.engine.record(TraceKind.REPLICATION_SKIPPED, pod=sender, service=service, reason=type(error).__name__)
            return
        self.engine.schedule(
            self.cluster.profile.draw("replication_latency", self.engine.rng),
            lambda: self._deliver(sender, target, records),
            f"replicate {sender} -> {target}",
        )

    def _deliver(self, sender: str, target: str, records: list[StateRecord]) -> None:
        process = self.processes.get(target)
        if process is None:
            return
        area = self.storage_area(process.pod)
        for record in records:
            cached = process.cache.get(record.client_id)
            if cached is None or record.written_at >= cached.written_at:
                process.cache[record.client_id] = record
            area.write(record)
        self.engine.record(TraceKind.REPLICATION_DELIVERED, sender=sender, pod=target, clients=[record.client_id for record in records])

    def _ensure_checkpointing(self, process: PodProcess) -> None:
        if process.checkpoint and process.checkpoint.pending:
            return
        if not process.serving or not self.sessions_on(process.name):
            return
        process.checkpoint = self.engine.schedule(
            self.cluster.profile.checkpoint_interval,
            lambda: self._checkpoint_loop(process),
            f"checkpoint {process.name}",
        )

    def _checkpoint_loop(self, process: PodProcess) -> None:
        process.checkpoint = None
        if self.processes.get(process.name) is not process:
            return
        self.checkpoint_tick(process.name)
        self._ensure_checkpointing(process)

    # endregion

    # region endpoint process

    def _on_pod_event(self, what: str, pod: Pod) -> None:
        if pod.controller != self.controller:
            return
        if what == "container_started":
            self._start_process(pod)
        elif what in ("container_stopped", "deleted"):
            self._stop_process(pod)
        elif what == "env_changed":
            process = self.processes.get(pod.name)
            if process and process.pod is pod:
                self._schedule_poll(process)

    def _start_process(self, pod: Pod) -> None:
        process = PodProcess(pod=pod, incarnation=pod.incarnation, ha_state=pod.env.get(HA_STATE_KEY))
        self.processes[pod.name] = process
        if not self.with_sc:
            process.serving = True
            self.restore_after_repair(pod.name)
        elif process.ha_state == HAState.ACTIVE.value:
            self._become_active(process)

    def _stop_process(self, pod: Pod) -> None:
        process = self.processes.get(pod.name)
        if process is None or process.pod is not pod:
            return
        del self.processes[pod.name]
        for action in (process.checkpoint, process.poll):
            if action:
                self.engine.cancel(action)
        if process.serving:
            now = self.engine.now
            for session in self.sessions_on(pod.name):
                session.freeze(now, pod.name)
            self.interrupted_pods[pod.name] = now

    def _schedule_poll(self, process: PodProcess) -> None:
        if process.poll and process.poll.pending:
            # the pending poll still sees this change
            return
        process.poll = self.engine.schedule_at(self._next_poll_time(), lambda: self.poll_ha_state(process.name), f"poll {process.name}")

    def _next_poll_time(self) -> SimTime:
        interval = self.cluster.profile.env_poll_interval
        now = self.engine.now
        return max(now, math.ceil(now / interval) * interval)

    def poll_ha_state(self, pod_name: str) -> Optional[str]:
        process = self.processes.get(pod_name)
        if process is None:
            return None
        process.poll = None
        seen = process.pod.env.get(HA_STATE_KEY)
        if seen == process.ha_state:
            return None

        previous, process.ha_state = process.ha_state, seen
        if seen == HAState.ACTIVE.value:
            self._become_active(process)
            return "activate"
        if seen == HAState.STANDBY.value and previous == HAState.ACTIVE.value:
            self._become_standby(process)
            return "deactivate"
        return None

    def _become_active(self, process: PodProcess) -> None:
        process.serving = True
        peer = process.pod.labels.get(PEER_KEY)
        self._take_over(process, {process.name, peer} - {None})

    def _become_standby(self, process: PodProcess) -> None:
        process.serving = False
        if process.checkpoint:
            self.engine.cancel(process.checkpoint)
            process.checkpoint = None

        peer = self.processes.get(process.pod.labels.get(PEER_KEY, ""))
        now = self.engine.now
        for session in self.sessions_on(process.name):
            if peer and peer.serving:
                _logger.debug(f"{session.client_id} handed over from {process.name} to {peer.name}")
                session.serving_pod = peer.name
            else:
                session.freeze(now, process.name)
                self.interrupted_pods[process.name] = now
        if peer:
            self._ensure_checkpointing(peer)

    def restore_after_repair(self, pod_name: str) -> list[StreamSession]:
        """Without the State Controller a repaired pod can only resume from its own storage."""
        process = self.processes.get(pod_name)
        if process is None:
            return []
        return self._take_over(process, {pod_name, process.pod.replaces} - {None})

    def _take_over(self, process: PodProcess, candidates: set[str]) -> list[StreamSession]:
        for_pods = sorted(name for name in candidates if name in self.interrupted_pods)
        sessions = [
            session for _, session in sorted(self.sessions.items())
            if not session.streaming and session.interrupted_from in candidates
        ]
        if not for_pods and not sessions:
            self._ensure_checkpointing(process)
            return []

        delay = self.cluster.profile.draw("state_restore", self.engine.rng) + self.cluster.profile.draw("resume_delay", self.engine.rng)
        self.engine.schedule(delay, lambda: self._resume(process, for_pods, sessions), f"resume on {process.name}")
        return sessions

    def _resume(self, process: PodProcess, for_pods: list[str], sessions: list[StreamSession]) -> None:
        if self.processes.get(process.name) is not process or not process.serving:
            return
        if self.with_sc and process.name not in self.cluster.service(self.app_service).endpoints:
            # clients reach the pod through the application service only
            self.engine.schedule(self.cluster.profile.env_poll_interval, lambda: self._resume(process, for_pods, sessions), f"resume on {process.name}")
            return

        now = self.engine.now
        for session in sessions:
            if session.streaming:
                continue
            for_pod = session.interrupted_from
            record = self._read_state(process, session.client_id)
            position = record.position if record else 0.0
            session.resume(position, now, process.name)
            self.engine.record(TraceKind.SESSION_RESUMED, client=session.client_id, position=position, by_pod=process.name, for_pod=for_pod)
            if record is None and session.checkpointed:
                _logger.warning(f"{process.name} cannot read the state of {session.client_id}, restarting at 0")
                self.engine.record(TraceKind.STATE_LOST, client=session.client_id, by_pod=process.name, for_pod=for_pod)

        for name in for_pods:
            if self.interrupted_pods.pop(name, None) is not None:
                self.engine.record(TraceKind.SERVICE_RESUMED, for_pod=name, by_pod=process.name)
        self._ensure_checkpointing(process)

    # endregion


def observe_continuity(client_id: str, trace: Trace) -> ContinuityReport:
    """Compare where a client resumed with its last checkpoint before the first fault that hit it."""
    started = trace.first(TraceKind.STREAM_STARTED, client=client_id)
    if started is None:
        raise MetricsError(f"Client {client_id!r} never started a stream")

    start_index, entry = started
    serving = entry.get("pod")
    last_checkpoint = 0.0
    fault = None
    checkpoint_at_fault = None

    kinds = (TraceKind.CHECKPOINT_WRITTEN, TraceKind.FAULT_INJECTED, TraceKind.SESSION_RESUMED)
    for _, entry in trace.indexed(*kinds, start=start_index + 1):
        if entry.kind is TraceKind.CHECKPOINT_WRITTEN:
            if entry.get("client") == client_id:
                last_checkpoint = entry.get("position")
        elif entry.kind is TraceKind.FAULT_INJECTED:
            if fault is None and serving in entry.get("pods", ()):
                fault = entry.get("fault")
                checkpoint_at_fault = last_checkpoint
        elif entry.get("client") == client_id:
            expected = checkpoint_at_fault if fault is not None else last_checkpoint
            resumed = entry.get("position")
            return ContinuityReport(
                client_id=client_id,
                resumed_position=resumed,
                last_checkpoint=expected,
                continuous=resumed == expected,
                recovered=True,
                fault=fault,
            )

    if fault is not None:
        return ContinuityReport(client_id, None, checkpoint_at_fault, continuous=False, recovered=False, fault=fault)
    return ContinuityReport(client_id, None, None, continuous=True, recovered=True)
