"""
File formats of the simulator.
Handles configuration JSON, schedule JSON, the JSON-lines event log,
demand files and the CSV outputs.
"""

import csv
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Tuple

from .hand_model import (
    JOINT_IDS,
    ConfigError,
    FingerGeometry,
    GearTrain,
    HandConfig,
    HardwareInfo,
    ShaftMap,
    TendonMuxError,
    TimingModel,
    validate_config,
)
from .kinematics import joint_curves, roll_curve
from .scheduler import MotionDemand, Schedule
from .sim_runtime import TelemetryRecord, telemetry_header
from .tdmm import EngagementEvent

logger = logging.getLogger(__name__)


class CodecError(TendonMuxError, ValueError):
    """Raised when a file cannot be decoded."""
    pass


# File key -> dataclass field, per config section
_GEOMETRY_KEYS = {
    "r1_mm": "r1",
    "r2_mm": "r2",
    "r_pitch_mm": "r_pitch",
    "r_roll_mm": "r_roll",
    "r3_mm": "r3",
    "link_lengths_mm": "link_lengths",
    "roll_limit_deg": "roll_limit",
}
_GEAR_KEYS = {"z1": "z1", "z2": "z2", "z3": "z3", "z4": "z4"}
_SHAFT_MAP_KEYS = {
    "num_shafts": "num_shafts",
    "num_positions": "num_positions",
    "motor_offsets": "motor_offsets",
    "joint_assignment": "joint_assignment",
}
_TIMING_KEYS = {
    "spindle_speed_dps": "spindle_speed",
    "settle_time_s": "settle_time",
    "motor_speed_dps": "motor_speed",
    "encoder_bits": "encoder_bits",
    "sample_period_s": "sample_period",
}
_HARDWARE_KEYS = {
    "bldc_torque_nm": "bldc_torque_nm",
    "bldc_count": "bldc_count",
    "spindle_torque_nm": "spindle_torque_nm",
    "spi_baud": "spi_baud",
    "can_baud": "can_baud",
    "max_voltage_v": "max_voltage_v",
    "max_power_w": "max_power_w",
}
_SECTIONS = {
    "geometry": (FingerGeometry, _GEOMETRY_KEYS),
    "gears": (GearTrain, _GEAR_KEYS),
    "shaft_map": (ShaftMap, _SHAFT_MAP_KEYS),
    "timing": (TimingModel, _TIMING_KEYS),
}
_REQUIRED_KEYS = (
    "geometry", "gears", "shaft_map", "timing", "alignment_error_max_deg",
    "magnet_reset_rate",
)
_OPTIONAL_KEYS = ("hardware",)
# Keys whose values count things and must be JSON integers
_INTEGER_KEYS = frozenset({
    "z1", "z2", "z3", "z4", "num_shafts", "num_positions", "encoder_bits",
})


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value: Any) -> bool:
    return (
        isinstance(value, (int, float))
        and not isinstance(value, bool)
        and math.isfinite(value)
    )


# Configuration


def _decode_value(section: str, key: str, value: Any, problems: List[str]) -> Any:
    path = f"{section}.{key}"
    if key == "joint_assignment":
        if not isinstance(value, dict):
            problems.append(f"{path} must map joint ids to shaft indices")
            return None
        bad = [joint_id for joint_id, s in value.items() if not _is_int(s)]
        for joint_id in bad:
            problems.append(f"{path}.{joint_id} must be an integer shaft index")
        return None if bad else tuple(value.items())
    if key == "motor_offsets":
        if not isinstance(value, list):
            problems.append(f"{path} must be a list of integers")
            return None
        bad = [i for i, v in enumerate(value) if not _is_int(v)]
        for i in bad:
            problems.append(f"{path}[{i}] must be an integer, got {value[i]!r}")
        return None if bad else tuple(value)
    if key == "link_lengths_mm":
        if not isinstance(value, list) or not all(_is_number(v) for v in value):
            problems.append(f"{path} must be a list of finite numbers")
            return None
        return tuple(value)
    if key in _INTEGER_KEYS:
        if not _is_int(value):
            problems.append(f"{path} must be an integer, got {value!r}")
            return None
        return value
    if not _is_number(value):
        problems.append(f"{path} must be a finite number")
        return None
    return value


def _decode_section(
    name: str, data: Any, cls, keys: Dict[str, str], problems: List[str]
):
    if not isinstance(data, dict):
        problems.append(f"{name} must be an object")
        return cls()
    values = {}
    for key, value in data.items():
        if key not in keys:
            problems.append(f"unknown key: {name}.{key}")
            continue
        decoded = _decode_value(name, key, value, problems)
        if decoded is not None:
            values[keys[key]] = decoded
    return cls(**values)


def config_from_dict(data: Any) -> HandConfig:
    """
    Build and validate a configuration from decoded JSON.

    Every missing, unknown or mistyped key is reported at once; the
    resulting configuration then goes through ``validate_config``.

    Raises:
        ConfigError: listing every problem found
    """
    if not isinstance(data, dict):
        raise ConfigError(["configuration must be a JSON object"])
    problems: List[str] = []
    for key in _REQUIRED_KEYS:
        if key not in data:
            problems.append(f"missing required key: {key}")
    for key in data:
        if key not in _REQUIRED_KEYS and key not in _OPTIONAL_KEYS:
            problems.append(f"unknown key: {key}")

    sections = {
        name: _decode_section(name, data[name], cls, keys, problems)
        for name, (cls, keys) in _SECTIONS.items()
        if name in data
    }
    hardware = HardwareInfo()
    if "hardware" in data:
        hardware = _decode_section(
            "hardware", data["hardware"], HardwareInfo, _HARDWARE_KEYS, problems
        )
    scalars = {}
    for key, field_name in (
        ("alignment_error_max_deg", "alignment_error_max"),
        ("magnet_reset_rate", "magnet_reset_rate"),
    ):
        if key in data:
            if _is_number(data[key]):
                scalars[field_name] = data[key]
            else:
                problems.append(f"{key} must be a finite number")
    if problems:
        raise ConfigError(problems)
    return validate_config(HandConfig(hardware=hardware, **sections, **scalars))


def load_config(path) -> HandConfig:
    """
    Read a configuration file.

    Raises:
        CodecError: unreadable file or invalid JSON
        ConfigError: configuration problems
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise CodecError(f"cannot read configuration {path}: {e}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise CodecError(f"{path} is not valid JSON: {e}") from None
    logger.debug("loaded configuration from %s", path)
    return config_from_dict(data)


def _encode_section(obj, keys: Dict[str, str]) -> Dict[str, Any]:
    data = {}
    for key, field_name in keys.items():
        value = getattr(obj, field_name)
        if key == "joint_assignment":
            value = dict(value)
        elif isinstance(value, tuple):
            value = list(value)
        data[key] = value
    return data


def config_to_dict(config: HandConfig) -> Dict[str, Any]:
    """JSON-ready form of a configuration, keyed like the configuration file."""
    data = {
        name: _encode_section(getattr(config, name), keys)
        for name, (_, keys) in _SECTIONS.items()
    }
    data["alignment_error_max_deg"] = config.alignment_error_max
    data["magnet_reset_rate"] = config.magnet_reset_rate
    data["hardware"] = _encode_section(config.hardware, _HARDWARE_KEYS)
    return data


def dump_config(config: HandConfig) -> str:
    return json.dumps(config_to_dict(config), indent=2) + "\n"


# Schedules and events


def schedule_to_dict(schedule: Schedule) -> Dict[str, Any]:
    """
    JSON-ready form of a schedule.

    Returns:
        Mapping with start_position, phases (position, runs, duration_s)
        and makespan_s
    """
    return {
        "start_position": schedule.start_position,
        "phases": [
            {
                "position": phase.position,
                "runs": [
                    {"motor": r.motor, "shaft": r.shaft, "motor_deg": r.motor_deg}
                    for r in phase.runs
                ],
                "duration_s": phase.duration,
            }
            for phase in schedule.phases
        ],
        "makespan_s": schedule.makespan,
    }


def schedule_to_json(schedule: Schedule) -> str:
    """
    Serialize a schedule for the plan command.

    Args:
        schedule: planned phases

    Returns:
        Indented JSON with start_position, phases and makespan_s, ending in
        a newline
    """
    return json.dumps(schedule_to_dict(schedule), indent=2) + "\n"


def event_to_json(event: EngagementEvent) -> str:
    """One event as a compact JSON line (no trailing newline)."""
    data = {
        "kind": event.kind,
        "motor": event.motor,
        "shaft": event.shaft,
        "amount_deg": event.amount,
        "t_start_s": event.t_start,
        "duration_s": event.duration,
    }
    if event.position is not None:
        data["position"] = event.position
    return json.dumps(data, separators=(",", ":"))


def event_from_json(line: str) -> EngagementEvent:
    """
    Decode one event log line.

    Raises:
        CodecError: invalid JSON, missing fields or an unknown kind
    """
    try:
        data = json.loads(line)
    except json.JSONDecodeError as e:
        raise CodecError(f"event is not valid JSON: {e}") from None
    required = ["kind", "motor", "shaft", "amount_deg", "t_start_s", "duration_s"]
    for key in required:
        if key not in data:
            raise CodecError(f"event missing required field: {key}")
    if data["kind"] not in ("rotate_spindle", "engage", "disengage", "motor_run"):
        raise CodecError(f"unknown event kind '{data['kind']}'")
    return EngagementEvent(
        kind=data["kind"],
        motor=data["motor"],
        shaft=data["shaft"],
        amount=data["amount_deg"],
        duration=data["duration_s"],
        t_start=data["t_start_s"],
        position=data.get("position"),
    )


def write_events(path, events: Iterable[EngagementEvent]) -> None:
    """
    Write an event log, one JSON object per line in execution order.

    Args:
        path: output file, overwritten
        events: events as recorded by the runtime
    """
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for event in events:
            f.write(event_to_json(event) + "\n")


# Demand files


def parse_demand(text: str, num_shafts: int = len(JOINT_IDS)) -> MotionDemand:
    """
    Parse a demand file: one signed wheel rotation (deg) per shaft and line.

    Blank lines and ``#`` comments are ignored.

    Raises:
        CodecError: a value is not a finite number, or the count is wrong
    """
    values = []
    for number, raw in enumerate(text.splitlines(), start=1):
        token = raw.split("#", 1)[0].strip()
        if not token:
            continue
        try:
            value = float(token)
        except ValueError:
            raise CodecError(f"line {number}: '{token}' is not a number") from None
        if not math.isfinite(value):
            raise CodecError(f"line {number}: demand must be finite")
        values.append(value)
    if len(values) != num_shafts:
        raise CodecError(f"demand needs {num_shafts} values, found {len(values)}")
    return MotionDemand(tuple(values))


# CSV outputs


def write_telemetry_csv(
    path, records: Iterable[TelemetryRecord], num_shafts: int = 9
) -> None:
    """Write telemetry samples as CSV under the telemetry_header columns."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(telemetry_header(num_shafts))
        for record in records:
            writer.writerow(record.to_row())


def _write_table(path, header: List[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{value:.6f}" for value in row])


def write_curves(
    out_dir, geometry: FingerGeometry, samples: int = 101
) -> Tuple[Path, Path]:
    """
    Write ``joint_curves.csv`` and ``roll_curve.csv`` into ``out_dir``.

    Returns:
        Paths of the two files
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    joints = out / "joint_curves.csv"
    roll = out / "roll_curve.csv"
    _write_table(
        joints, ["phi1_deg", "theta1_deg", "theta2_deg", "theta3_deg"],
        joint_curves(geometry, samples),
    )
    _write_table(roll, ["phi2_deg", "phi3_deg"], roll_curve(geometry, samples))
    return joints, roll
