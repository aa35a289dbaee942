import pytest
import yaml

from ha_sim.engine import RandomSource
from ha_sim.errors import ValidationError
from ha_sim.latency import Architecture, Duration, LatencyProfile, list_presets, load_profile


def test_shipped_presets():
    assert list_presets() == ["jittered", "table1"]
    assert load_profile().name == "table1"


def test_table1_resolves_per_architecture_and_mode(table1):
    stateful = table1.resolve(Architecture.STATEFUL_ORDERED, with_sc=False)
    assert stateful.detection_delay == Duration(0.679)
    assert stateful.container_restart.mean == 1.029
    assert stateful.endpoint_update.mean == 0.1

    stateless_sc = table1.resolve("stateless_parallel", with_sc=True)
    assert stateless_sc.detection_delay.mean == 0.784
    assert stateless_sc.pod_create.mean == 3.016
    assert stateless_sc.env_poll_interval == 0.002


def test_constant_durations_ignore_the_generator():
    rng = RandomSource(1)
    assert Duration(0.5).draw(rng) == 0.5
    assert Duration(0.5, spread=0.0, distribution="normal").draw(rng) == 0.5


def test_jittered_draws_stay_non_negative():
    rng = RandomSource(3)
    duration = Duration.from_config({"distribution": "normal", "mean": 0.01, "stddev": 0.5})
    assert all(duration.draw(rng) >= 0 for _ in range(200))
    uniform = Duration.from_config({"distribution": "uniform", "mean": 1.0, "spread": 0.2})
    assert all(0.8 <= uniform.draw(rng) <= 1.2 for _ in range(200))


@pytest.mark.parametrize("value", [-1, True, "fast", {"spread": 1}, {"mean": 1, "distribution": "cauchy"}])
def test_bad_durations(value):
    with pytest.raises(ValidationError):
        Duration.from_config(value)


def test_overrides():
    profile = LatencyProfile().with_overrides({"detection_delay": 0.2, "checkpoint_interval": 2})
    assert profile.detection_delay.mean == 0.2
    assert profile.checkpoint_interval == 2.0
    assert LatencyProfile().with_overrides(None) == LatencyProfile()
    with pytest.raises(ValidationError):
        LatencyProfile().with_overrides({"warp_drive": 1})
    with pytest.raises(ValidationError):
        LatencyProfile().with_overrides({"env_poll_interval": 0})


def test_unknown_preset():
    with pytest.raises(ValidationError):
        load_profile("table9")


def test_profile_file_round_trip(tmp_path, table1):
    path = tmp_path / "mine.yaml"
    config = {
        "name": "mine",
        "defaults": LatencyProfile().to_config(),
        "architectures": {"stateful_ordered": {"with_sc": {"sc_handling": 0.5}}},
    }
    path.write_text(yaml.safe_dump(config), encoding="utf-8")
    loaded = load_profile(str(path))
    assert loaded.name == "mine"
    assert loaded.resolve("stateful_ordered", True).sc_handling.mean == 0.5
    assert loaded.resolve("stateless_parallel", True) == LatencyProfile()


def test_bad_profile_files(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text("name: broken\narchitectures:\n  stateful_ordered:\n    sometimes_sc: {}\n", encoding="utf-8")
    with pytest.raises(ValidationError):
        load_profile(str(path))
