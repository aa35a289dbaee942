"""
Availability and scaling metrics read back from a trace.

Reaction runs from the fault injection to the not-ready transition. Repair and
recovery are measured from that first reaction, to the pod being ready again
and to the service being resumed. The outage is reaction plus recovery.
"""

import math
from dataclasses import dataclass
from typing import Optional

from ha_sim.engine import SimTime, Trace, TraceKind
from ha_sim.errors import MetricsError, ValidationError

SECONDS_PER_YEAR = 365.25 * 24 * 3600


def to_millis(seconds: float) -> float:
    """Round a duration to whole milliseconds."""
    return seconds if math.isinf(seconds) else round(seconds, 3)


@dataclass(frozen=True)
class MetricsRecord:
    event_id: str
    pod: str
    injected_at: SimTime
    detected_at: SimTime
    reaction_s: float
    repair_s: float
    recovery_s: float
    outage_s: float

    @classmethod
    def from_instants(
        cls,
        event_id: str,
        pod: str,
        injected_at: SimTime,
        detected_at: Optional[SimTime],
        ready_at: Optional[SimTime],
        resumed_at: Optional[SimTime],
    ) -> "MetricsRecord":
        if detected_at is None:
            return cls(event_id, pod, injected_at, math.inf, math.inf, math.inf, math.inf, math.inf)
        reaction = to_millis(detected_at - injected_at)
        repair = to_millis(ready_at - detected_at) if ready_at is not None else math.inf
        recovery = to_millis(resumed_at - detected_at) if resumed_at is not None else math.inf
        return cls(event_id, pod, injected_at, detected_at, reaction, repair, recovery, to_millis(reaction + recovery))

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.outage_s)


@dataclass(frozen=True)
class ScalingRecord:
    request_id: str
    requested_at: SimTime
    from_replicas: Optional[int]
    target: int
    scaling_time_s: float
    ha_assignment_time_s: Optional[float] = None

    @property
    def direction(self) -> str:
        if self.from_replicas is None or self.from_replicas == self.target:
            return "scale"
        return "scale_out" if self.target > self.from_replicas else "scale_in"


def extract_availability_metrics(trace: Trace, fault_id: str, pod: Optional[str] = None) -> MetricsRecord:
    found = trace.first(TraceKind.FAULT_INJECTED, fault=fault_id)
    if found is None:
        raise MetricsError(f"No fault {fault_id!r} in the trace")
    index, injected = found
    pods = injected.get("pods") or []
    if pod is None:
        if not pods:
            raise MetricsError(f"Fault {fault_id!r} hit no pod")
        pod = pods[0]
    elif pod not in pods:
        raise MetricsError(f"Fault {fault_id!r} did not hit {pod!r}")

    not_ready = trace.first(TraceKind.POD_NOT_READY, start=index, pod=pod, fault=fault_id)
    if not_ready is None:
        return MetricsRecord.from_instants(fault_id, pod, injected.time, None, None, None)
    detected_index, detected = not_ready

    ready_at = None
    for _, entry in trace.indexed(TraceKind.POD_READY, start=detected_index):
        if entry.get("pod") == pod or entry.get("replaces") == pod:
            ready_at = entry.time
            break

    resumed = trace.first(TraceKind.SERVICE_RESUMED, start=detected_index, for_pod=pod)
    resumed_at = resumed[1].time if resumed else None
    return MetricsRecord.from_instants(fault_id, pod, injected.time, detected.time, ready_at, resumed_at)


def extract_scaling_metrics(trace: Trace, request_id: str) -> ScalingRecord:
    found = trace.first(TraceKind.SCALE_REQUESTED, request=request_id)
    if found is None:
        raise MetricsError(f"No scale request {request_id!r} in the trace")
    index, requested = found

    completed = trace.first(TraceKind.SCALE_COMPLETE, start=index, request=request_id)
    if completed is None:
        return ScalingRecord(request_id, requested.time, None, requested.get("target"), math.inf)
    complete = completed[1]
    added = complete.get("added") or []
    deleted = complete.get("deleted") or []
    target = requested.get("target")
    from_replicas = target - len(added) + len(deleted)

    ha_assignment = None
    if added and trace.first(TraceKind.SC_STARTED) is not None:
        assigned = [
            entry.time for _, entry in trace.indexed(TraceKind.HA_STATE_ASSIGNED, start=index)
            if entry.get("pod") in added
        ]
        ha_assignment = max(assigned) - requested.time if assigned else math.inf
    return ScalingRecord(request_id, requested.time, from_replicas, target, complete.time - requested.time, ha_assignment)


def max_tolerable_failures(outage_per_failure_s: float, availability_target: float) -> int:
    """How many failures of this outage fit in one year's downtime budget."""
    if not outage_per_failure_s > 0:
        raise ValidationError(f"The outage per failure must be positive, got {outage_per_failure_s!r}")
    if not 0 < availability_target <= 1:
        raise ValidationError(f"The availability target must be in (0, 1], got {availability_target!r}")
    if math.isinf(outage_per_failure_s):
        return 0
    return math.floor((1 - availability_target) * SECONDS_PER_YEAR / outage_per_failure_s)
