"""
Tests for configuration, schedule, event, demand and CSV file formats.
"""

import csv
import json

import numpy as np
import pytest

from tendonmux.codec import (
    CodecError,
    config_from_dict,
    config_to_dict,
    dump_config,
    event_from_json,
    event_to_json,
    load_config,
    parse_demand,
    schedule_to_dict,
    write_curves,
    write_events,
    write_telemetry_csv,
)
from tendonmux.hand_model import ConfigError, HandState, default_config
from tendonmux.scheduler import MotionDemand, plan_sequential
from tendonmux.sim_runtime import SimRuntime, telemetry_header
from tendonmux.tdmm import EngagementEvent, apply_event


@pytest.fixture
def config_dict(data_dir):
    return json.loads((data_dir / "default_config.json").read_text())


class TestConfigFiles:
    """Test reading and writing hand configurations."""

    def test_shipped_config_is_default(self, data_dir):
        assert load_config(data_dir / "default_config.json") == default_config()

    def test_dump_and_load(self, tmp_path, config):
        path = tmp_path / "hand.json"
        path.write_text(dump_config(config))
        assert load_config(path) == config

    def test_dict_matches_file(self, config, config_dict):
        assert config_to_dict(config) == config_dict

    def test_missing_section(self, config_dict):
        del config_dict["gears"]
        with pytest.raises(ConfigError) as exc_info:
            config_from_dict(config_dict)
        assert "missing required key: gears" in exc_info.value.violations

    def test_unknown_keys(self, config_dict):
        config_dict["fingers"] = 4
        config_dict["timing"]["warp_speed"] = 9
        with pytest.raises(ConfigError) as exc_info:
            config_from_dict(config_dict)
        violations = exc_info.value.violations
        assert "unknown key: fingers" in violations
        assert "unknown key: timing.warp_speed" in violations

    def test_wrong_type(self, config_dict):
        config_dict["geometry"]["r2_mm"] = "five"
        config_dict["magnet_reset_rate"] = True
        with pytest.raises(ConfigError) as exc_info:
            config_from_dict(config_dict)
        violations = exc_info.value.violations
        assert "geometry.r2_mm must be a finite number" in violations
        assert "magnet_reset_rate must be a finite number" in violations

    def test_float_counts_rejected(self, config_dict):
        """Counts and indices must be JSON integers, even when integral."""
        config_dict["shaft_map"]["num_shafts"] = 9.0
        config_dict["shaft_map"]["motor_offsets"] = [0.0, 3, 6.0]
        config_dict["shaft_map"]["joint_assignment"]["f1.roll"] = 5.0
        with pytest.raises(ConfigError) as exc_info:
            config_from_dict(config_dict)
        violations = exc_info.value.violations
        assert "shaft_map.num_shafts must be an integer, got 9.0" in violations
        assert "shaft_map.motor_offsets[0] must be an integer, got 0.0" in violations
        assert "shaft_map.motor_offsets[2] must be an integer, got 6.0" in violations
        assert not any("motor_offsets[1]" in v for v in violations)
        assert (
            "shaft_map.joint_assignment.f1.roll must be an integer shaft index"
            in violations
        )

    def test_non_finite_rejected(self, config_dict):
        config_dict["alignment_error_max_deg"] = float("nan")
        config_dict["timing"]["settle_time_s"] = float("inf")
        with pytest.raises(ConfigError) as exc_info:
            config_from_dict(config_dict)
        violations = exc_info.value.violations
        assert "alignment_error_max_deg must be a finite number" in violations
        assert "timing.settle_time_s must be a finite number" in violations

    def test_nan_in_file(self, tmp_path, config_dict):
        """Python's JSON reader accepts NaN literals; the decoder must not."""
        text = json.dumps(config_dict).replace(
            '"alignment_error_max_deg": 10.0', '"alignment_error_max_deg": NaN'
        )
        path = tmp_path / "nan.json"
        path.write_text(text)
        with pytest.raises(ConfigError):
            load_config(path)

    def test_invariants_checked(self, config_dict):
        config_dict["gears"]["z4"] = 12
        with pytest.raises(ConfigError) as exc_info:
            config_from_dict(config_dict)
        assert any("alignment_error_max / k" in v for v in exc_info.value.violations)

    def test_hardware_optional(self, config_dict):
        del config_dict["hardware"]
        assert config_from_dict(config_dict) == default_config()

    def test_bad_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{ geometry: ")
        with pytest.raises(CodecError):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CodecError):
            load_config(tmp_path / "nope.json")


class TestDemandFiles:
    """Test demand parsing."""

    def test_shipped_demand(self, data_dir):
        demand = parse_demand((data_dir / "full_hand.demand").read_text())
        assert demand == MotionDemand((10.0, 8.0, 5.0, 10.0, 8.0, -5.0, 10.0, 8.0, 0.5))

    def test_wrong_count(self):
        with pytest.raises(CodecError) as exc_info:
            parse_demand("1\n2\n3\n")
        assert "found 3" in str(exc_info.value)

    def test_bad_value_names_line(self):
        with pytest.raises(CodecError) as exc_info:
            parse_demand("# header\n1\nten\n")
        assert str(exc_info.value).startswith("line 3:")

    def test_non_finite(self):
        with pytest.raises(CodecError):
            parse_demand("\n".join(["inf"] + ["0"] * 8))


class TestSchedulesAndEvents:
    """Test schedule JSON and the event log."""

    def test_schedule_dict(self, config):
        schedule = plan_sequential(MotionDemand.single(4, 10.0), config)
        data = schedule_to_dict(schedule)
        assert data["start_position"] == 0
        assert data["makespan_s"] == schedule.makespan
        (phase,) = data["phases"]
        assert phase["position"] == 1
        assert phase["runs"] == [
            {"motor": 1, "shaft": 4, "motor_deg": schedule.phases[0].runs[0].motor_deg}
        ]
        json.dumps(data)

    def test_event_line(self):
        event = EngagementEvent("rotate_spindle", None, None, -80.0, 0.444,
                                t_start=1.5, position=7)
        line = event_to_json(event)
        assert "\n" not in line
        assert json.loads(line)["position"] == 7
        assert event_from_json(line) == event

    def test_event_log_replays(self, tmp_path, config):
        """Replaying the logged events with the same seed rebuilds the wheels."""
        demand = MotionDemand((10.0, 8.0, 5.0, 10.0, 8.0, -5.0, 10.0, 8.0, 0.5))
        runtime = SimRuntime(config, seed=21, closed_loop=False)
        runtime.execute(plan_sequential(demand, config))
        path = tmp_path / "events.jsonl"
        write_events(path, runtime.events)

        rng = np.random.default_rng(21)
        state = HandState.initial(config)
        for line in path.read_text().splitlines():
            state, _ = apply_event(state, event_from_json(line), rng, config)
        assert state.wheel_angle == pytest.approx(runtime.state.wheel_angle, abs=1e-9)

    def test_bad_events(self):
        with pytest.raises(CodecError):
            event_from_json("not json")
        with pytest.raises(CodecError):
            event_from_json('{"kind": "engage"}')
        with pytest.raises(CodecError):
            event_from_json(
                '{"kind":"jump","motor":0,"shaft":0,"amount_deg":0,'
                '"t_start_s":0,"duration_s":0}'
            )


class TestCsvOutputs:
    """Test telemetry and curve tables."""

    def test_telemetry_csv(self, tmp_path, config):
        runtime = SimRuntime(config)
        runtime.run_for(0.02)
        path = tmp_path / "telemetry.csv"
        write_telemetry_csv(path, runtime.telemetry)
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == telemetry_header()
        assert rows[0][:4] == ["t_s", "spindle_pos", "engaged", "wheel_0"]
        assert rows[0][-1] == "enc_8"
        assert len(rows) == 4
        assert rows[1][0] == "0.000000"
        assert rows[1][2] == ""

    def test_curves(self, tmp_path, config):
        joints, roll = write_curves(tmp_path / "curves", config.geometry, samples=11)
        with open(joints, newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["phi1_deg", "theta1_deg", "theta2_deg", "theta3_deg"]
        assert len(rows) == 12
        assert [float(v) for v in rows[1]] == [0.0, 0.0, 0.0, 0.0]
        with open(roll, newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["phi2_deg", "phi3_deg"]
        assert float(rows[-1][1]) == pytest.approx(config.geometry.roll_limit)
