import pytest

from ha_sim.cluster import Cluster, WorkloadController
from ha_sim.engine import Trace, TraceKind
from ha_sim.errors import DuplicateNameError, MetricsError, ServiceUnavailableError
from ha_sim.latency import Architecture
from ha_sim.state_controller import StateController
from ha_sim.workload import StateRecord, StorageArea, StreamSession, Workload, observe_continuity

STATEFUL = Architecture.STATEFUL_ORDERED
STATELESS = Architecture.STATELESS_PARALLEL


def streaming_app(cluster, kind=STATEFUL, replicas=1, with_sc=False):
    """Deploys MS behind the vod service and starts one client at t=5."""
    workload = Workload(cluster, "MS", "vod", with_sc)
    cluster.deploy(WorkloadController("MS", kind, replicas))
    selector = {"app": "MS", "HAState": "active"} if with_sc else {"app": "MS"}
    cluster.create_service("vod", selector)
    if with_sc:
        cluster.engine.run_until(2.5)
        StateController(cluster, "MS", "vod").start()
    cluster.engine.run_until(5)
    workload.start_stream()
    return workload


def kill_at(cluster, time, pod):
    cluster.engine.schedule_at(time, lambda: cluster.inject_container_failure(pod))


def test_session_position_and_freeze():
    session = StreamSession("client-1", "MS-0", started_at=5.0, anchor_time=5.0)
    assert session.position_at(7.5) == 2.5
    session.freeze(7.5, "MS-0")
    assert session.position_at(100) == 2.5
    assert session.interrupted_from == "MS-0"
    session.resume(2.0, 9.0, "MS-1")
    assert session.position_at(10.0) == 3.0
    assert session.serving_pod == "MS-1" and session.interrupted_from is None


def test_storage_keeps_the_newest_record():
    area = StorageArea("MS-0")
    area.write(StateRecord("client-1", 2.0, written_at=7.0))
    area.write(StateRecord("client-1", 1.0, written_at=6.0))
    assert area.read("client-1").position == 2.0
    assert area.read("client-2") is None


def test_no_endpoint_means_service_unavailable(cluster):
    workload = Workload(cluster, "MS", "vod", with_sc=False)
    cluster.create_service("vod", {"app": "MS"})
    with pytest.raises(ServiceUnavailableError):
        workload.start_stream()


def test_client_ids_are_unique(cluster):
    workload = streaming_app(cluster)
    assert list(workload.sessions) == ["client-1"]
    with pytest.raises(DuplicateNameError):
        workload.start_stream("client-1")
    assert [session.client_id for session in workload.start_streams()] == ["client-2"]


def test_checkpoints_go_to_the_own_storage_area(cluster):
    workload = streaming_app(cluster)
    cluster.engine.run_until(8.5)

    checkpoints = cluster.engine.trace.of_kind(TraceKind.CHECKPOINT_WRITTEN)
    assert [(entry.time, entry.get("position")) for entry in checkpoints] == [(6.0, 1.0), (7.0, 2.0), (8.0, 3.0)]
    area = workload.storage_area(cluster.pod("MS-0"))
    assert area.read("client-1").position == 3.0
    assert not cluster.engine.trace.of_kind(TraceKind.REPLICATION_DELIVERED)


def test_restarted_pod_resumes_from_its_checkpoint(cluster):
    streaming_app(cluster)
    kill_at(cluster, 7.5, "MS-0")
    cluster.engine.run_until(12)

    trace = cluster.engine.trace
    resumed = trace.of_kind(TraceKind.SESSION_RESUMED)[0]
    # detection 0.5, restart 1.0, restore 0.3, resume 0.1
    assert resumed.time == pytest.approx(9.4)
    assert (resumed.get("position"), resumed.get("by_pod"), resumed.get("for_pod")) == (2.0, "MS-0", "MS-0")
    assert trace.of_kind(TraceKind.SERVICE_RESUMED, for_pod="MS-0")[0].time == pytest.approx(9.4)
    assert not trace.of_kind(TraceKind.STATE_LOST)

    report = observe_continuity("client-1", trace)
    assert report.continuous and report.recovered
    assert report.resumed_position == report.last_checkpoint == 2.0


def test_standby_takes_over_before_the_active_is_repaired(cluster):
    workload = streaming_app(cluster, replicas=2, with_sc=True)
    assert workload.sessions["client-1"].serving_pod == "MS-0"
    kill_at(cluster, 7.5, "MS-0")
    cluster.engine.run_until(12)

    trace = cluster.engine.trace
    delivered = trace.of_kind(TraceKind.REPLICATION_DELIVERED, sender="MS-0")
    assert [entry.get("pod") for entry in delivered] == ["MS-1", "MS-1"]

    resumed = trace.of_kind(TraceKind.SERVICE_RESUMED, for_pod="MS-0")[0]
    repaired = [entry for entry in trace.of_kind(TraceKind.POD_READY, pod="MS-0") if entry.time > 7.5][0]
    assert resumed.get("by_pod") == "MS-1"
    assert resumed.time < repaired.time

    session = workload.sessions["client-1"]
    assert session.serving_pod == "MS-1" and session.streaming
    report = observe_continuity("client-1", trace)
    assert report.continuous and report.resumed_position == 2.0

    # the repaired pod is the new standby and receives the state
    assert trace.of_kind(TraceKind.REPLICATION_DELIVERED, sender="MS-1", pod="MS-0")


def test_takeover_waits_until_clients_can_reach_the_pod(engine, profile):
    cluster = Cluster(engine, profile.with_overrides({"endpoint_update": 1.0}))
    streaming_app(cluster, replicas=2, with_sc=True)
    kill_at(cluster, 7.5, "MS-0")
    cluster.engine.run_until(12)

    trace = cluster.engine.trace
    joined = [
        entry.time for entry in trace.of_kind(TraceKind.ENDPOINTS_CHANGED, service="vod")
        if entry.time > 7.5 and "MS-1" in entry.get("endpoints")
    ][0]
    # SC handling at 8.05 plus the endpoint update
    assert joined == pytest.approx(9.05)
    resumed = trace.of_kind(TraceKind.SERVICE_RESUMED, for_pod="MS-0")[0]
    assert resumed.get("by_pod") == "MS-1"
    assert joined <= resumed.time < joined + profile.env_poll_interval + 1e-9


def test_polling_reacts_to_env_changes(cluster):
    workload = streaming_app(cluster, replicas=2, with_sc=True)
    assert workload.poll_ha_state("MS-0") is None
    assert workload.poll_ha_state("nope") is None

    cluster.pod("MS-1").env["HAState"] = "active"
    assert workload.poll_ha_state("MS-1") == "activate"
    cluster.pod("MS-0").env["HAState"] = "standby"
    assert workload.poll_ha_state("MS-0") == "deactivate"

    session = workload.sessions["client-1"]
    assert session.streaming and session.serving_pod == "MS-1"


def test_replication_without_a_service_is_skipped(cluster):
    streaming_app(cluster, replicas=2, with_sc=True)
    cluster.delete_service("replicate-MS-0")
    cluster.engine.run_until(6.5)
    skipped = cluster.engine.trace.of_kind(TraceKind.REPLICATION_SKIPPED)
    assert skipped[0].get("reason") == "UnknownObjectError"


def test_replacement_pod_cannot_read_the_old_state(cluster):
    workload = streaming_app(cluster, kind=STATELESS)
    old = workload.sessions["client-1"].serving_pod
    cluster.engine.schedule_at(7.5, lambda: cluster.inject_node_failure(cluster.pod(old).node))
    cluster.engine.run_until(50)

    trace = cluster.engine.trace
    lost = trace.of_kind(TraceKind.STATE_LOST)
    assert [entry.get("for_pod") for entry in lost] == [old]
    resumed = trace.of_kind(TraceKind.SESSION_RESUMED)[0]
    assert resumed.get("position") == 0.0 and resumed.get("by_pod") != old
    # eviction 40 after the shutdown, then create 1.0, restore 0.3, resume 0.1
    assert resumed.time == pytest.approx(48.9)

    report = observe_continuity("client-1", trace)
    assert report.recovered and not report.continuous
    assert report.last_checkpoint == 2.0


def test_unknown_client():
    with pytest.raises(MetricsError):
        observe_continuity("client-9", Trace())
