import logging
import math
import multiprocessing
import os
from dataclasses import dataclass, field
from pathlib import Path
from timeit import default_timer
from typing import Optional, Sequence, Union

import click
import numpy as np

from ha_sim.cluster import APP_KEY, HA_STATE_KEY, Cluster, WorkloadController
from ha_sim.engine import SimEngine, Trace, TraceKind
from ha_sim.errors import HaSimError
from ha_sim.latency import CalibrationProfile, LatencyProfile, load_profile
from ha_sim.metrics import MetricsRecord, ScalingRecord, extract_availability_metrics, extract_scaling_metrics
from ha_sim.report import RESULTS_FILE, EventRow, emit_report
from ha_sim.scenario import Action, Scenario, ScheduleStep, resolve_pod_selector
from ha_sim.state_controller import HAState, StateController
from ha_sim.utils import create_timestamped_backup
from ha_sim.workload import ContinuityReport, Workload, observe_continuity

_logger = logging.getLogger(__name__)

CONTROLLER_NAME = "MS"
APP_SERVICE = "vod"


@dataclass
class MeasuredFault:
    fault_id: str
    kind: str
    pods: list[str]


@dataclass
class TrialResult:
    scenario: str
    trial: int
    seed: int
    availability: list[MetricsRecord] = field(default_factory=list)
    scaling: list[ScalingRecord] = field(default_factory=list)
    continuity: list[ContinuityReport] = field(default_factory=list)
    rows: list[EventRow] = field(default_factory=list)
    protection_lost: int = 0
    state_lost: int = 0
    errors: list[str] = field(default_factory=list)
    trace: Trace = field(default_factory=Trace)


class Trial:
    """One seeded run of a scenario on a fresh simulator."""

    def __init__(self, scenario: Scenario, profile: LatencyProfile, trial: int):
        self.scenario = scenario
        self.trial = trial
        self.seed = scenario.seed + trial
        self.engine = SimEngine(self.seed)
        self.cluster = Cluster(self.engine, profile.with_overrides(scenario.latency_profile))
        self.workload = Workload(self.cluster, CONTROLLER_NAME, APP_SERVICE, scenario.with_sc)
        self.state_controller = StateController(self.cluster, CONTROLLER_NAME, APP_SERVICE) if scenario.with_sc else None
        self.faults: list[MeasuredFault] = []
        self.requests: list[str] = []
        self.errors: list[str] = []
        self.settled_at: Optional[float] = None

    def run(self) -> TrialResult:
        selector = {APP_KEY: CONTROLLER_NAME}
        if self.scenario.with_sc:
            selector[HA_STATE_KEY] = HAState.ACTIVE.value
        self.cluster.create_service(APP_SERVICE, selector)
        controller = WorkloadController(
            name=CONTROLLER_NAME,
            kind=self.scenario.architecture,
            replicas=self.scenario.replicas,
            graceful_termination=self.scenario.graceful_termination,
        )
        self.cluster.deploy(controller, on_complete=self._deployed)
        self.engine.run_until()
        if self.settled_at is None:
            self.errors.append("the deployment never settled")
        return self._result()

    def _deployed(self) -> None:
        if self.state_controller:
            self.state_controller.start(on_assigned=self._settle)
        else:
            self._settle()

    def _settle(self) -> None:
        self.settled_at = self.engine.now
        _logger.debug(f"{self.scenario.name} trial {self.trial}: settled at {self.settled_at:.3f}")
        for step in self.scenario.schedule:
            self.engine.schedule(step.at, lambda step=step: self._run_step(step), f"step {step.action.value}")

    def _serving(self, pod_name: str) -> bool:
        pod = self.cluster.pods[pod_name]
        if not pod.ready:
            return False
        return not self.scenario.with_sc or pod.labels.get(HA_STATE_KEY) == HAState.ACTIVE.value

    def _injected(self, fault_id: str) -> bool:
        for entry in reversed(self.engine.trace.entries):
            if entry.get("fault") == fault_id and entry.kind in (TraceKind.FAULT_INJECTED, TraceKind.FAULT_IGNORED):
                return entry.kind is TraceKind.FAULT_INJECTED
        return False

    def _run_step(self, step: ScheduleStep) -> None:
        try:
            if step.action is Action.KILL_CONTAINER:
                # resolve every selector before the first kill changes the labels
                names = [resolve_pod_selector(selector, self.cluster, CONTROLLER_NAME) for selector in step.pods]
                for name in names:
                    serving = self._serving(name)
                    fault_id = self.cluster.inject_container_failure(name)
                    if serving and self._injected(fault_id):
                        self.faults.append(MeasuredFault(fault_id, "container_failure", [name]))
            elif step.action is Action.FAIL_NODE:
                node = step.params.get("node")
                if node is None:
                    pod = resolve_pod_selector(str(step.params["pod"]), self.cluster, CONTROLLER_NAME)
                    node = self.cluster.pods[pod].node
                serving = [name for name in sorted(self.cluster.node(node).hosted_pods) if self._serving(name)]
                fault_id = self.cluster.inject_node_failure(node, step.params.get("mode", "shutdown"), step.params.get("duration"))
                if serving and self._injected(fault_id):
                    self.faults.append(MeasuredFault(fault_id, "node_failure", serving))
            elif step.action is Action.SCALE:
                self.requests.append(self.cluster.scale(CONTROLLER_NAME, step.params["target"]))
            elif step.action is Action.START_STREAMS:
                self.workload.start_streams(step.params.get("clients"))
            else:
                self.engine.record(TraceKind.END_OF_OBSERVATION, scenario=self.scenario.name, trial=self.trial)
                self.engine.finish()
        except HaSimError as error:
            message = f"t={self.engine.now:.3f} {step.action.value}: {error}"
            _logger.warning(f"{self.scenario.name} trial {self.trial}: {message}")
            self.errors.append(message)

    def _result(self) -> TrialResult:
        trace = self.engine.trace
        result = TrialResult(scenario=self.scenario.name, trial=self.trial, seed=self.seed, errors=self.errors, trace=trace)

        measured = []
        for fault in self.faults:
            for pod in fault.pods:
                try:
                    measured.append((fault, extract_availability_metrics(trace, fault.fault_id, pod)))
                except HaSimError as error:
                    result.errors.append(str(error))
        measured.sort(key=lambda item: (item[1].detected_at, item[1].injected_at))

        for fault, record in measured:
            result.availability.append(record)
            state_lost = any(
                entry.get("for_pod") == record.pod and entry.time >= record.injected_at
                for entry in trace.of_kind(TraceKind.STATE_LOST)
            )
            protection_lost = bool(trace.of_kind(TraceKind.PROTECTION_LOST, fault=fault.fault_id))
            result.rows.append(self._row(
                event_id=f"{fault.fault_id}:{record.pod}",
                event_kind=fault.kind,
                reaction_s=record.reaction_s,
                repair_s=record.repair_s,
                recovery_s=record.recovery_s,
                outage_s=record.outage_s,
                protection_lost=protection_lost,
                state_lost=state_lost,
            ))

        for request_id in self.requests:
            try:
                record = extract_scaling_metrics(trace, request_id)
            except HaSimError as error:
                result.errors.append(str(error))
                continue
            result.scaling.append(record)
            result.rows.append(self._row(
                event_id=request_id,
                event_kind=record.direction,
                scaling_s=record.scaling_time_s,
                ha_assign_s=record.ha_assignment_time_s,
                protection_lost=bool(trace.of_kind(TraceKind.PROTECTION_LOST, request=request_id)),
            ))

        for client_id in sorted(self.workload.sessions):
            result.continuity.append(observe_continuity(client_id, trace))
        result.protection_lost = len(trace.of_kind(TraceKind.PROTECTION_LOST))
        result.state_lost = len(trace.of_kind(TraceKind.STATE_LOST))
        return result

    def _row(self, **values) -> EventRow:
        return EventRow(
            scenario=self.scenario.name,
            trial=self.trial,
            architecture=self.scenario.architecture.value,
            with_sc=self.scenario.with_sc,
            **values,
        )


def run_trial(scenario: Scenario, profile: LatencyProfile, trial: int) -> TrialResult:
    return Trial(scenario, profile, trial).run()


def _run_trial_args(args: tuple[Scenario, LatencyProfile, int]) -> TrialResult:
    return run_trial(*args)


@dataclass
class RunReport:
    scenario: Scenario
    profile: str
    trials: list[TrialResult]

    @property
    def rows(self) -> list[EventRow]:
        return [row for trial in self.trials for row in trial.rows]

    @property
    def errors(self) -> list[str]:
        return [f"trial {trial.trial}: {error}" for trial in self.trials for error in trial.errors]

    @property
    def protection_lost(self) -> int:
        return sum(trial.protection_lost for trial in self.trials)

    @property
    def state_lost(self) -> int:
        return sum(trial.state_lost for trial in self.trials)

    def per_trial(self, metric: str) -> list[float]:
        """One value per trial: the mean of that trial's records for ``metric``."""
        values = []
        for trial in self.trials:
            records = trial.availability if metric in ("reaction_s", "repair_s", "recovery_s", "outage_s") else trial.scaling
            samples = [getattr(record, metric) for record in records if getattr(record, metric) is not None]
            if samples:
                values.append(float(np.mean(samples)))
        return values

    def mean(self, metric: str) -> float:
        values = self.per_trial(metric)
        return float(np.mean(values)) if values else math.nan

    def std(self, metric: str) -> float:
        values = self.per_trial(metric)
        return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0

    def percent_change(self, baseline: "RunReport", metric: str) -> float:
        """Change of this report's mean against a baseline, e.g. -46.4 for a 46.4% shorter recovery."""
        reference = baseline.mean(metric)
        return (self.mean(metric) - reference) / reference * 100


def run_scenario(scenario: Scenario, profile: Union[CalibrationProfile, LatencyProfile, str, None] = None, jobs: int = 1) -> RunReport:
    if not isinstance(profile, LatencyProfile):
        calibration = profile if isinstance(profile, CalibrationProfile) else load_profile(profile)
        name = calibration.name
        resolved = calibration.resolve(scenario.architecture, scenario.with_sc)
    else:
        name, resolved = "custom", profile

    arguments = [(scenario, resolved, trial) for trial in range(scenario.trials)]
    if jobs > 1 and scenario.trials > 1:
        with multiprocessing.Pool(min(jobs, scenario.trials)) as pool:
            trials = pool.map(_run_trial_args, arguments)
    else:
        trials = [_run_trial_args(args) for args in arguments]

    report = RunReport(scenario=scenario, profile=name, trials=trials)
    for error in report.errors:
        _logger.warning(f"{scenario.name}: {error}")
    return report


class ExperimentHarness:
    def __init__(
        self,
        out_dir: Union[str, Path],
        profile: Optional[str] = None,
        trials: Optional[int] = None,
        seed: Optional[int] = None,
        jobs: int = 1,
        overwrite: bool = False,
    ):
        self.out_dir = Path(os.path.abspath(out_dir))
        self.calibration = load_profile(profile)
        self.trials = trials
        self.seed = seed
        self.jobs = jobs
        self.overwrite = overwrite

    def run(self, scenarios: Sequence[Scenario]) -> list[RunReport]:
        results = self.out_dir / RESULTS_FILE
        if results.exists() and not self.overwrite:
            _logger.warning(f"Skipping run because {results} already exists. Use --overwrite to replace it")
            return []
        if results.exists():
            backup = create_timestamped_backup(self.out_dir, self.out_dir.with_name(f"{self.out_dir.name}-backup"))
            _logger.info(f"Backed up earlier results to {backup}")

        start = default_timer()
        _logger.info(f"Running {len(scenarios)} scenarios with the {self.calibration.name} profile, results go to {self.out_dir}")
        reports = []
        with click.progressbar(scenarios, label="Running scenarios") as bar:
            for scenario in bar:
                scenario = scenario.with_overrides(trials=self.trials, seed=self.seed)
                reports.append(run_scenario(scenario, self.calibration, jobs=self.jobs))

        rows = [row for report in reports for row in report.rows]
        emit_report(rows, self.out_dir, "csv")
        emit_report(rows, self.out_dir, "table")

        end = default_timer()
        _logger.info(f"Ran {sum(len(report.trials) for report in reports)} trials in {round(end - start, 2)} seconds")
        return reports
