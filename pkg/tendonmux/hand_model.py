"""
Configuration and state types shared by every part of the simulator.
Handles parameter defaults, invariant checking and the mutable-by-copy hand state.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, List, Optional, Tuple

logger = logging.getLogger(__name__)


FINGERS = 3
ACTUATED_JOINTS = ("pip", "pitch", "roll")
# Order of the four pose components reported per finger (theta1, theta2, theta3, phi3)
POSE_JOINTS = ("dip", "pip", "pitch", "roll")

JOINT_IDS: Tuple[str, ...] = tuple(
    f"f{finger}.{joint}" for finger in range(FINGERS) for joint in ACTUATED_JOINTS
)

# Largest wheel-side alignment error a configuration may imply (deg)
MAX_WHEEL_ALIGNMENT_DEG = 0.5


class TendonMuxError(Exception):
    """Base class for every error raised by the simulator."""
    pass


class ConfigError(TendonMuxError):
    """Raised when a configuration violates one or more invariants."""

    def __init__(self, violations: List[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


def split_joint_id(joint_id: str) -> Tuple[int, str]:
    """
    Split a joint id like ``f1.pitch`` into ``(1, "pitch")``.

    Raises:
        ValueError: If the id does not name one of the actuated joints
    """
    if joint_id not in JOINT_IDS:
        raise ValueError(f"unknown joint id '{joint_id}'")
    finger, joint = joint_id.split(".", 1)
    return int(finger[1:]), joint


@dataclass(frozen=True)
class FingerGeometry:
    """
    Geometry shared by the three identical fingers.

    Fields:
        r1: DIP rolling-joint radius (mm)
        r2: PIP rolling-joint radius (mm)
        r_pitch: MCP-pitch rolling-joint radius (mm)
        r_roll: MCP-roll joint radius (mm)
        r3: winding-wheel radius (mm)
        link_lengths: proximal, intermediate and distal phalanx lengths (mm)
        roll_limit: symmetric MCP-roll range (deg)
    """
    r1: float = 5.0
    r2: float = 5.0
    r_pitch: float = 5.0
    r_roll: float = 8.0
    r3: float = 8.0
    link_lengths: Tuple[float, float, float] = (45.0, 30.0, 25.0)
    roll_limit: float = 90.0


@dataclass(frozen=True)
class GearTrain:
    """Tooth counts of the two-stage reduction between motor slot and worm."""
    z1: int = 12
    z2: int = 40
    z3: int = 12
    z4: int = 120

    @property
    def ratio(self) -> float:
        return reduction_ratio(self)


def _default_assignment() -> Tuple[Tuple[str, int], ...]:
    return tuple((joint_id, shaft) for shaft, joint_id in enumerate(JOINT_IDS))


@dataclass(frozen=True)
class ShaftMap:
    """
    Which output shaft each motor reaches at each spindle position.

    Motor ``m`` parked at position ``p`` drives shaft
    ``(motor_offsets[m] + p) mod num_shafts``.

    Fields:
        num_shafts: number of output shafts (one per actuated joint)
        num_positions: spindle park positions, evenly spaced over 360 deg
        motor_offsets: shaft offset of every motor in the group
        joint_assignment: (joint id, shaft index) pairs
    """
    num_shafts: int = 9
    num_positions: int = 9
    motor_offsets: Tuple[int, ...] = (0, 3, 6)
    joint_assignment: Tuple[Tuple[str, int], ...] = field(
        default_factory=_default_assignment
    )

    @property
    def num_motors(self) -> int:
        return len(self.motor_offsets)

    @property
    def position_angle(self) -> float:
        """Angular spacing between neighbouring park positions (deg)."""
        return 360.0 / self.num_positions

    def shaft_for(self, motor: int, position: int) -> int:
        """
        Shaft that ``motor`` faces with the spindle parked at ``position``.

        Args:
            motor: index into motor_offsets
            position: spindle park position

        Returns:
            (motor_offsets[motor] + position) mod num_shafts
        """
        return (self.motor_offsets[motor] + position) % self.num_shafts

    def shafts_at(self, position: int) -> Tuple[int, ...]:
        """Shafts reached by motors 0..n-1 at ``position``, in motor order."""
        return tuple(self.shaft_for(m, position) for m in range(self.num_motors))

    def motor_for(self, position: int, shaft: int) -> Optional[int]:
        """Motor facing ``shaft`` at ``position``, or None when no motor does."""
        for motor in range(self.num_motors):
            if self.shaft_for(motor, position) == shaft:
                return motor
        return None

    def assignment(self) -> Dict[str, int]:
        return dict(self.joint_assignment)

    def shaft_of(self, joint_id: str) -> int:
        return self.assignment()[joint_id]

    def joint_of(self, shaft: int) -> str:
        for joint_id, s in self.joint_assignment:
            if s == shaft:
                return joint_id
        raise KeyError(f"no joint assigned to shaft {shaft}")


@dataclass(frozen=True)
class TimingModel:
    """
    Speeds and delays of the actuation hardware.

    A phase costs reposition + settle + longest motor run + settle: the
    settle time is charged once when the plugs lift and once when they drop.
    One 40 deg reposition, two settles of 0.025 s and a 10 deg wheel run
    (333 motor deg) therefore take 0.2222 + 0.05 + 0.1667 = 0.439 s. The
    same example with a single settle charge would need settle_time = 0.05.

    Fields:
        spindle_speed: spindle rotation speed (deg/s)
        settle_time: one plug transition, lift or drop (s)
        motor_speed: drive motor speed at the motor shaft (deg/s)
        encoder_bits: joint encoder resolution
        sample_period: telemetry sampling period (s)
    """
    spindle_speed: float = 180.0
    settle_time: float = 0.025
    motor_speed: float = 2000.0
    encoder_bits: int = 14
    sample_period: float = 0.01


@dataclass(frozen=True)
class HardwareInfo:
    """Nameplate data of the physical hand; carried as metadata only."""
    bldc_torque_nm: float = 0.4
    bldc_count: int = 3
    spindle_torque_nm: float = 1.0
    spi_baud: int = 9_000_000
    can_baud: int = 1_000_000
    max_voltage_v: float = 60.0
    max_power_w: float = 240.0


@dataclass(frozen=True)
class HandConfig:
    """
    Complete parameterization of the hand.

    Fields:
        geometry: finger geometry shared by all three fingers
        gears: reduction gear train
        shaft_map: motor/shaft/joint wiring of the multiplexer
        timing: speeds and delays
        alignment_error_max: plug/slot misalignment bound at the motor (deg)
        magnet_reset_rate: first-order self-reset rate of the joints (1/s)
        hardware: metadata
    """
    geometry: FingerGeometry = field(default_factory=FingerGeometry)
    gears: GearTrain = field(default_factory=GearTrain)
    shaft_map: ShaftMap = field(default_factory=ShaftMap)
    timing: TimingModel = field(default_factory=TimingModel)
    alignment_error_max: float = 10.0
    magnet_reset_rate: float = 1.0
    hardware: HardwareInfo = field(default_factory=HardwareInfo)

    @property
    def k(self) -> float:
        """Reduction ratio between motor and winding wheel."""
        return reduction_ratio(self.gears)

    @property
    def wheel_alignment_bound(self) -> float:
        return self.alignment_error_max / self.k

    def copy_with(self, **kwargs) -> 'HandConfig':
        return replace(self, **kwargs)


def default_config() -> HandConfig:
    """The reference hand: k = 33.33, nine shafts, three motors at offsets 0/3/6."""
    return HandConfig()


def reduction_ratio(gears: GearTrain) -> float:
    """Transmission ratio k = (z2 * z4) / (z1 * z3)."""
    return (gears.z2 * gears.z4) / (gears.z1 * gears.z3)


def _is_number(value) -> bool:
    return (
        isinstance(value, (int, float))
        and not isinstance(value, bool)
        and math.isfinite(value)
    )


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _positive(violations: List[str], path: str, value) -> None:
    if not _is_number(value):
        violations.append(f"{path} must be a finite number")
    elif not value > 0:
        violations.append(f"{path} must be positive")


def _positive_int(value) -> bool:
    return _is_int(value) and value > 0


def config_violations(config: HandConfig) -> List[str]:
    """
    Collect every invariant violation of ``config``.

    Returns:
        List of messages, each starting with the offending field path;
        empty when the configuration is valid
    """
    violations: List[str] = []

    geometry = config.geometry
    for name in ("r1", "r2", "r_pitch", "r_roll", "r3", "roll_limit"):
        _positive(violations, f"geometry.{name}", getattr(geometry, name))
    if len(geometry.link_lengths) != 3:
        violations.append("geometry.link_lengths must have 3 entries")
    for i, length in enumerate(geometry.link_lengths):
        _positive(violations, f"geometry.link_lengths[{i}]", length)

    gears = config.gears
    teeth_ok = True
    for name in ("z1", "z2", "z3", "z4"):
        value = getattr(gears, name)
        if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
            violations.append(f"gears.{name} must be a positive integer")
            teeth_ok = False
    k = reduction_ratio(gears) if teeth_ok else None
    if k is not None and not k > 1:
        violations.append(f"gears reduction ratio must exceed 1, got {k:.4g}")

    violations.extend(_shaft_map_violations(config.shaft_map))

    timing = config.timing
    for name in ("spindle_speed", "settle_time", "motor_speed", "sample_period"):
        _positive(violations, f"timing.{name}", getattr(timing, name))
    if not _positive_int(timing.encoder_bits):
        violations.append("timing.encoder_bits must be a positive integer")

    error_max = config.alignment_error_max
    if not _is_number(error_max) or error_max < 0:
        violations.append("alignment_error_max must be a finite non-negative number")
    elif k is not None and k > 0 and error_max / k > MAX_WHEEL_ALIGNMENT_DEG:
        violations.append(
            f"alignment_error_max / k = {error_max / k:.3f} deg exceeds "
            f"{MAX_WHEEL_ALIGNMENT_DEG} deg at the winding wheel"
        )

    _positive(violations, "magnet_reset_rate", config.magnet_reset_rate)
    return violations


def _shaft_map_violations(shaft_map: ShaftMap) -> List[str]:
    violations: List[str] = []
    n = shaft_map.num_shafts
    if not _is_int(n):
        violations.append(f"shaft_map.num_shafts must be an integer, got {n!r}")
        return violations
    if n != len(JOINT_IDS):
        violations.append(f"shaft_map.num_shafts must be {len(JOINT_IDS)}, got {n}")
        return violations
    if not _positive_int(shaft_map.num_positions):
        violations.append("shaft_map.num_positions must be a positive integer")
        return violations

    offsets = shaft_map.motor_offsets
    if not offsets:
        violations.append("shaft_map.motor_offsets must not be empty")
        return violations
    bad_offsets = [i for i, offset in enumerate(offsets) if not _is_int(offset)]
    if bad_offsets:
        violations.extend(
            f"shaft_map.motor_offsets[{i}] must be an integer, got {offsets[i]!r}"
            for i in bad_offsets
        )
        return violations
    if len({o % n for o in offsets}) != len(offsets):
        violations.append("shaft_map.motor_offsets not distinct modulo num_shafts")
        return violations

    bad_shafts = [
        joint_id for joint_id, shaft in shaft_map.joint_assignment
        if not _is_int(shaft)
    ]
    if bad_shafts:
        violations.extend(
            f"shaft_map.joint_assignment.{joint_id} must be an integer shaft index"
            for joint_id in bad_shafts
        )
        return violations

    joints = [joint_id for joint_id, _ in shaft_map.joint_assignment]
    shafts = [shaft for _, shaft in shaft_map.joint_assignment]
    if sorted(joints) != sorted(JOINT_IDS):
        violations.append(
            "shaft_map.joint_assignment must name each of "
            f"{', '.join(JOINT_IDS)} exactly once"
        )
    if sorted(shafts) != list(range(n)):
        violations.append(
            "shaft_map.joint_assignment is not a bijection onto the shafts"
        )

    reachable = set()
    for position in range(shaft_map.num_positions):
        reachable.update(shaft_map.shafts_at(position))
    missing = sorted(set(range(n)) - reachable)
    if missing:
        violations.append(f"shaft_map leaves shafts {missing} unreachable")
    return violations


def validate_config(config: HandConfig) -> HandConfig:
    """
    Check every invariant of a configuration.

    Returns:
        The same configuration object when it is valid

    Raises:
        ConfigError: listing all violations at once
    """
    violations = config_violations(config)
    if violations:
        logger.debug("configuration rejected: %s", violations)
        raise ConfigError(violations)
    return config


@dataclass(frozen=True)
class HandState:
    """
    Full simulation state of the hand.

    Fields:
        clock: simulation time (s)
        spindle_position: park position of the motor group
        engaged: (motor, shaft) pairs whose plugs are lifted
        wheel_angle: winding-wheel angle of every shaft (deg)
        joint_angles: per finger (theta1, theta2, theta3, phi3) in deg,
            kinematics of the wheels plus any disturbance offset
        disturbance: per finger offset of each pose component (deg)
        held: (finger, pose index) pairs currently pushed by an external force
        pending_offset: per motor wheel-side alignment error waiting for the
            first run after engagement (deg)
    """
    clock: float
    spindle_position: int
    engaged: FrozenSet[Tuple[int, int]]
    wheel_angle: Tuple[float, ...]
    joint_angles: Tuple[Tuple[float, float, float, float], ...]
    disturbance: Tuple[Tuple[float, float, float, float], ...]
    held: FrozenSet[Tuple[int, int]] = frozenset()
    pending_offset: Tuple[float, ...] = ()

    @classmethod
    def initial(cls, config: HandConfig, spindle_position: int = 0) -> 'HandState':
        """Straight fingers, all plugs down, clock at zero."""
        zeros = (0.0, 0.0, 0.0, 0.0)
        return cls(
            clock=0.0,
            spindle_position=spindle_position,
            engaged=frozenset(),
            wheel_angle=(0.0,) * config.shaft_map.num_shafts,
            joint_angles=(zeros,) * FINGERS,
            disturbance=(zeros,) * FINGERS,
            held=frozenset(),
            pending_offset=(0.0,) * config.shaft_map.num_motors,
        )

    def copy_with(self, **kwargs) -> 'HandState':
        """Create a new state with some fields updated."""
        return replace(self, **kwargs)

    def shaft_of_motor(self, motor: int) -> Optional[int]:
        for m, shaft in self.engaged:
            if m == motor:
                return shaft
        return None

    def engaged_shafts(self) -> FrozenSet[int]:
        return frozenset(shaft for _, shaft in self.engaged)
