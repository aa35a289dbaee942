"""
Deterministic discrete-event core.

The clock and the event heap belong to a ``simpy.Environment``. Every scheduled
action is a simpy timeout whose callback dispatches the action, so actions fire
in (fire_at, seq) order: simpy orders its heap by time and breaks ties by the
insertion id of the event.
"""

import itertools
import json
import logging
import math
import string
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Iterator, Optional, Sequence

import numpy as np
import simpy

from ha_sim.errors import EngineFinishedError, ValidationError

_logger = logging.getLogger(__name__)

# simulated seconds
SimTime = float


class TraceKind(str, Enum):
    FAULT_INJECTED = "fault injected"
    FAULT_IGNORED = "fault ignored"
    POD_NOT_READY = "pod not-ready"
    POD_READY = "pod ready"
    POD_CREATED = "pod created"
    POD_DELETED = "pod deleted"
    NODE_DOWN = "node down"
    NODE_UP = "node up"
    LABEL_CHANGED = "label changed"
    ENV_CHANGED = "env changed"
    SERVICE_CREATED = "service created"
    SERVICE_DELETED = "service deleted"
    ENDPOINTS_CHANGED = "endpoint set changed"
    DEPLOY_COMPLETE = "deploy complete"
    SCALE_REQUESTED = "scale requested"
    SCALE_QUEUED = "scale request queued"
    SCALE_COMPLETE = "scale complete"
    SC_STARTED = "SC started"
    SC_EVENT_SKIPPED = "SC event skipped"
    HA_STATE_ASSIGNED = "HA state assigned"
    FAILOVER = "failover"
    PROTECTION_LOST = "protection lost"
    PROTECTION_RESTORED = "protection restored"
    STREAM_STARTED = "session started"
    CHECKPOINT_WRITTEN = "checkpoint written"
    REPLICATION_DELIVERED = "replication message delivered"
    REPLICATION_SKIPPED = "replication skipped"
    SESSION_RESUMED = "session resumed"
    SERVICE_RESUMED = "service resumed"
    STATE_LOST = "state lost"
    END_OF_OBSERVATION = "end of observation"


@dataclass(frozen=True)
class TraceEntry:
    time: SimTime
    kind: TraceKind
    attrs: dict = field(default_factory=dict)

    def get(self, key: str, default: Any = None) -> Any:
        return self.attrs.get(key, default)

    def to_json(self) -> str:
        return json.dumps({"t": round(self.time, 9), "kind": self.kind.value, **self.attrs}, sort_keys=True)


class Trace:
    """Append-only, time-ordered log of everything observable in a run."""

    def __init__(self, entries: Optional[Iterable[TraceEntry]] = None):
        self.entries: list[TraceEntry] = list(entries or [])

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[TraceEntry]:
        return iter(self.entries)

    def __getitem__(self, index):
        return self.entries[index]

    def append(self, entry: TraceEntry) -> None:
        assert not self.entries or entry.time >= self.entries[-1].time
        self.entries.append(entry)

    def of_kind(self, *kinds: TraceKind, **match: Any) -> list[TraceEntry]:
        return [entry for _, entry in self.indexed(*kinds, **match)]

    def indexed(self, *kinds: TraceKind, start: int = 0, **match: Any) -> Iterator[tuple[int, TraceEntry]]:
        for index in range(start, len(self.entries)):
            entry = self.entries[index]
            if kinds and entry.kind not in kinds:
                continue
            if all(entry.attrs.get(key) == value for key, value in match.items()):
                yield index, entry

    def first(self, *kinds: TraceKind, start: int = 0, **match: Any) -> Optional[tuple[int, TraceEntry]]:
        return next(self.indexed(*kinds, start=start, **match), None)

    def to_lines(self) -> list[str]:
        return [entry.to_json() for entry in self.entries]


class RandomSource:
    """Seeded generator shared by every stochastic decision of one run."""

    SUFFIX_ALPHABET = string.ascii_lowercase + string.digits

    def __init__(self, seed: int):
        self.seed = seed
        self._generator = np.random.default_rng(seed)

    def random(self) -> float:
        return float(self._generator.random())

    def uniform(self, low: float, high: float) -> float:
        return float(self._generator.uniform(low, high))

    def normal(self, mean: float, stddev: float) -> float:
        return float(self._generator.normal(mean, stddev))

    def exponential(self, mean: float) -> float:
        return float(self._generator.exponential(mean))

    def choice(self, items: Sequence[Any]) -> Any:
        return items[int(self._generator.integers(len(items)))]

    def sample(self, items: Sequence[Any], count: int) -> list[Any]:
        picked = self._generator.choice(len(items), size=count, replace=False)
        return [items[int(index)] for index in picked]

    def suffix(self, length: int = 5) -> str:
        return "".join(self.choice(self.SUFFIX_ALPHABET) for _ in range(length))


@dataclass(eq=False)
class ScheduledAction:
    fire_at: SimTime
    seq: int
    payload: Callable[[], Any]
    description: str = ""
    fired: bool = False
    cancelled: bool = False

    @property
    def pending(self) -> bool:
        return not (self.fired or self.cancelled)


class SimEngine:
    def __init__(self, seed: int = 0):
        self.rng = RandomSource(seed)
        self.trace = Trace()
        self.finished = False
        self._env = simpy.Environment()
        self._seq = itertools.count()

    @property
    def now(self) -> SimTime:
        return float(self._env.now)

    def schedule(self, delay: float, payload: Callable[[], Any], description: str = "") -> ScheduledAction:
        if self.finished:
            raise EngineFinishedError("Cannot schedule on a finished engine")
        if delay is None or math.isnan(delay) or delay < 0:
            raise ValidationError(f"Delay must be a non-negative duration, got {delay!r}")

        action = ScheduledAction(fire_at=self.now + delay, seq=next(self._seq), payload=payload, description=description)
        timeout = self._env.timeout(delay)
        timeout.callbacks.append(lambda _event: self._dispatch(action))
        return action

    def schedule_at(self, time: SimTime, payload: Callable[[], Any], description: str = "") -> ScheduledAction:
        return self.schedule(max(0.0, time - self.now), payload, description)

    @staticmethod
    def cancel(action: ScheduledAction) -> bool:
        if not action.pending:
            return False
        action.cancelled = True
        return True

    def record(self, kind: TraceKind, **attrs: Any) -> TraceEntry:
        entry = TraceEntry(time=self.now, kind=kind, attrs=attrs)
        self.trace.append(entry)
        return entry

    def finish(self) -> None:
        self.finished = True

    def run_until(self, stop: Optional[SimTime] = None) -> Trace:
        """Dispatch every action with fire_at <= stop; ``None`` runs to quiescence."""
        limit = math.inf if stop is None else stop
        while not self.finished:
            next_time = self._env.peek()
            if next_time == math.inf or next_time > limit:
                break
            self._env.step()
        if stop is not None and not self.finished and stop > self.now:
            # nothing is left before stop, only the clock moves
            self._env.run(until=stop)
        return self.trace

    def _dispatch(self, action: ScheduledAction) -> None:
        if action.cancelled or self.finished:
            return
        action.fired = True
        _logger.debug("t=%.6f dispatch #%d %s", self.now, action.seq, action.description)
        action.payload()
