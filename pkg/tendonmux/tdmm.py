"""
Time-division multiplexing state machine.

A spindle parks the motor group at one of several positions; at each
position every motor faces one output shaft. Lifting a plug couples a motor
to its shaft through the reduction gears and the worm drive; dropping it
leaves the shaft locked by the non-backdrivable worm. Every operation takes
a HandState and returns the successor state with the time it occupies.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .hand_model import HandConfig, HandState, TendonMuxError, TimingModel
from .kinematics import hand_pose, joint_angles_with, refresh_joints

logger = logging.getLogger(__name__)


EVENT_KINDS = ("rotate_spindle", "engage", "disengage", "motor_run")

# Joint angles must match kinematics within this many degrees
STATE_TOL = 1e-9


class TdmmFault(TendonMuxError):
    """Raised when the multiplexer is driven against its mechanical rules."""
    pass


class SpindleJamError(TdmmFault):
    """Raised when the spindle is turned while a plug is still lifted."""
    pass


class EngagementError(TdmmFault):
    """Raised on double engagement or on driving a motor that is not engaged."""
    pass


@dataclass(frozen=True)
class EngagementEvent:
    """
    One primitive action of the multiplexer, as written to the event log.

    Fields:
        kind: rotate_spindle, engage, disengage or motor_run
        motor: motor index (None for spindle rotation)
        shaft: shaft index (None for spindle rotation)
        amount: motor degrees for motor_run, signed spindle degrees for
            rotate_spindle, 0 otherwise
        duration: time the action occupies (s)
        t_start: simulation time the action starts (s)
        position: spindle target for rotate_spindle
    """
    kind: str
    motor: Optional[int]
    shaft: Optional[int]
    amount: float
    duration: float
    t_start: float = 0.0
    position: Optional[int] = None


@dataclass(frozen=True)
class AlignmentError:
    """Plug/slot misalignment sampled at one engagement (deg)."""
    motor_side: float
    wheel_side: float


def spindle_steps(config: HandConfig, src: int, dst: int) -> int:
    """Signed number of positions along the shortest way from ``src`` to ``dst``."""
    n = config.shaft_map.num_positions
    forward = (dst - src) % n
    return forward if forward <= n - forward else forward - n


def reposition_time(config: HandConfig, src: int, dst: int) -> float:
    """Time to turn the spindle from ``src`` to ``dst`` by the shortest path (s)."""
    degrees = abs(spindle_steps(config, src, dst)) * config.shaft_map.position_angle
    return degrees / config.timing.spindle_speed


def run_time(motor_deg: float, timing: TimingModel) -> float:
    """
    Time a motor needs for a turn at constant speed.

    Args:
        motor_deg: signed rotation at the motor shaft (deg)
        timing: speeds of the hardware

    Returns:
        |motor_deg| / motor_speed (s)
    """
    return abs(motor_deg) / timing.motor_speed


def sample_alignment_error(
    rng: np.random.Generator, config: HandConfig
) -> AlignmentError:
    """
    Draw the plug/slot misalignment of one engagement.

    The motor-side error is uniform in [-alignment_error_max,
    alignment_error_max]; the gear train divides it by k at the wheel.

    Args:
        rng: the run's seeded generator, advanced by one draw
        config: hand configuration

    Returns:
        Both sides of the sampled error (deg)
    """
    bound = config.alignment_error_max
    motor_side = float(rng.uniform(-bound, bound))
    return AlignmentError(motor_side=motor_side, wheel_side=motor_side / config.k)


def _check_motor(config: HandConfig, motor: int) -> None:
    if not 0 <= motor < config.shaft_map.num_motors:
        raise EngagementError(f"no motor {motor} in the motor group")


def rotate_spindle(
    state: HandState, target: int, config: HandConfig
) -> Tuple[HandState, float]:
    """
    Park the motor group at ``target``.

    Raises:
        SpindleJamError: If any plug is still lifted
    """
    if not 0 <= target < config.shaft_map.num_positions:
        raise TdmmFault(f"spindle position {target} does not exist")
    if state.engaged:
        raise SpindleJamError(
            f"spindle turned while engaged: {sorted(state.engaged)}"
        )
    elapsed = reposition_time(config, state.spindle_position, target)
    logger.debug("spindle %d -> %d in %.4f s", state.spindle_position, target, elapsed)
    return state.copy_with(spindle_position=target), elapsed


def engage(
    state: HandState, motor: int, rng: np.random.Generator, config: HandConfig
) -> Tuple[HandState, float]:
    """
    Lift the plug of ``motor`` into the slot of the shaft it faces.

    A misalignment is sampled uniformly within the configured bound; its
    wheel-side value is applied once, on the next motor_run of this motor.

    Raises:
        EngagementError: If the motor is already engaged
    """
    _check_motor(config, motor)
    if state.shaft_of_motor(motor) is not None:
        raise EngagementError(f"motor {motor} is already engaged")
    shaft = config.shaft_map.shaft_for(motor, state.spindle_position)
    if shaft in state.engaged_shafts():
        raise EngagementError(f"shaft {shaft} is already driven by another motor")

    error = sample_alignment_error(rng, config)
    pending = list(state.pending_offset)
    pending[motor] = error.wheel_side
    logger.debug(
        "engage motor %d -> shaft %d (misalignment %.3f deg motor, %.4f deg wheel)",
        motor, shaft, error.motor_side, error.wheel_side,
    )
    new_state = state.copy_with(
        engaged=state.engaged | {(motor, shaft)},
        pending_offset=tuple(pending),
    )
    return new_state, config.timing.settle_time


def disengage(
    state: HandState, motor: int, config: HandConfig
) -> Tuple[HandState, float]:
    """
    Drop the plug of ``motor``; the worm drive keeps its shaft where it is.

    Raises:
        EngagementError: If the motor is not engaged
    """
    _check_motor(config, motor)
    shaft = state.shaft_of_motor(motor)
    if shaft is None:
        raise EngagementError(f"motor {motor} is not engaged")
    pending = list(state.pending_offset)
    pending[motor] = 0.0
    logger.debug("disengage motor %d from shaft %d", motor, shaft)
    new_state = state.copy_with(
        engaged=state.engaged - {(motor, shaft)},
        pending_offset=tuple(pending),
    )
    return new_state, config.timing.settle_time


def motor_run(
    state: HandState, motor: int, motor_degrees: float, config: HandConfig
) -> Tuple[HandState, float]:
    """
    Turn an engaged motor by ``motor_degrees``.

    The winding wheel moves by motor_degrees / k, plus the pending alignment
    error on the first run after engagement. Joint angles are recomputed.

    Raises:
        EngagementError: If the motor is not engaged
        KinematicRangeError: If the new wheel angle leaves a joint domain
    """
    _check_motor(config, motor)
    shaft = state.shaft_of_motor(motor)
    if shaft is None:
        raise EngagementError(f"motor {motor} run while disengaged")
    if motor_degrees == 0.0:
        return state, 0.0

    wheels = list(state.wheel_angle)
    wheels[shaft] += motor_degrees / config.k + state.pending_offset[motor]
    pending = list(state.pending_offset)
    pending[motor] = 0.0
    new_state = state.copy_with(
        wheel_angle=tuple(wheels), pending_offset=tuple(pending)
    )
    return refresh_joints(new_state, config), run_time(motor_degrees, config.timing)


def apply_event(
    state: HandState,
    event: EngagementEvent,
    rng: np.random.Generator,
    config: HandConfig,
) -> Tuple[HandState, float]:
    """
    Dispatch one logged event to the matching operation (used for replay).

    Raises:
        EngagementError: a motor event names a shaft other than the one its
            motor faces at the current spindle position
        TdmmFault: unknown event kind, or the operation itself faults
    """
    if event.kind == "rotate_spindle":
        return rotate_spindle(state, event.position, config)
    if event.kind in ("engage", "disengage", "motor_run") and event.shaft is not None:
        _check_motor(config, event.motor)
        facing = config.shaft_map.shaft_for(event.motor, state.spindle_position)
        if event.shaft != facing:
            raise EngagementError(
                f"{event.kind} event names shaft {event.shaft} but motor "
                f"{event.motor} faces shaft {facing} at position "
                f"{state.spindle_position}"
            )
    if event.kind == "engage":
        return engage(state, event.motor, rng, config)
    if event.kind == "disengage":
        return disengage(state, event.motor, config)
    if event.kind == "motor_run":
        return motor_run(state, event.motor, event.amount, config)
    raise TdmmFault(f"unknown event kind '{event.kind}'")


def check_state(state: HandState, config: HandConfig) -> None:
    """
    Assert the HandState invariants.

    Raises:
        TdmmFault: describing the first broken invariant
    """
    shaft_map = config.shaft_map
    if len(state.engaged) > shaft_map.num_motors:
        raise TdmmFault(
            f"{len(state.engaged)} engagements for {shaft_map.num_motors} motors"
        )
    motors = [m for m, _ in state.engaged]
    if len(set(motors)) != len(motors):
        raise TdmmFault("a motor is engaged twice")
    for motor, shaft in state.engaged:
        if shaft_map.shaft_for(motor, state.spindle_position) != shaft:
            raise TdmmFault(
                f"motor {motor} engaged on shaft {shaft} but faces "
                f"{shaft_map.shaft_for(motor, state.spindle_position)}"
            )
    expected = joint_angles_with(
        hand_pose(state.wheel_angle, config, strict=False), state.disturbance
    )
    for finger, (got, want) in enumerate(zip(state.joint_angles, expected)):
        if any(abs(g - w) > STATE_TOL for g, w in zip(got, want)):
            raise TdmmFault(f"finger {finger} joint angles {got} drifted from {want}")
