"""
Motion script parsing.

A script is line oriented:

    pose <9 joint targets, deg>          targets in f0.pip .. f2.roll order
    move <finger> <pip|pitch|roll> <deg>
    wait <seconds>
    disturb <finger> <dip|pip|pitch|roll> <deg> <seconds>
    # comment

Consecutive pose and move lines form one motion block; later targets in a
block override earlier ones for the same joint.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

from .hand_model import FINGERS, JOINT_IDS, POSE_JOINTS, HandConfig, TendonMuxError
from .kinematics import (
    KinematicRangeError,
    inverse_pip,
    inverse_pitch,
    inverse_roll,
)

logger = logging.getLogger(__name__)


class ScriptError(TendonMuxError):
    """Raised when a script line cannot be parsed."""

    def __init__(self, line: int, message: str):
        self.line = line
        self.detail = message
        super().__init__(f"line {line}: {message}")


@dataclass(frozen=True)
class JointTarget:
    """Commanded angle of one actuated joint (deg) and the line it came from."""
    joint_id: str
    angle: float
    line: int


@dataclass(frozen=True)
class MotionBlock:
    targets: Tuple[JointTarget, ...]


@dataclass(frozen=True)
class Wait:
    seconds: float
    line: int = 0


@dataclass(frozen=True)
class Disturb:
    finger: int
    joint: str
    offset: float
    duration: float
    line: int = 0


Command = Union[MotionBlock, Wait, Disturb]


def _number(token: str, line: int, what: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ScriptError(line, f"{what} '{token}' is not a number") from None
    if not math.isfinite(value):
        raise ScriptError(line, f"{what} must be finite, got '{token}'")
    return value


def _finger(token: str, line: int) -> int:
    text = token[1:] if token.startswith("f") else token
    if not text.isdigit() or not 0 <= int(text) < FINGERS:
        raise ScriptError(line, f"finger must be 0-{FINGERS - 1}, got '{token}'")
    return int(text)


def _expect(args: Sequence[str], count: int, line: int, usage: str) -> None:
    if len(args) != count:
        raise ScriptError(line, f"expected '{usage}', got {len(args)} arguments")


def _parse_line(words: List[str], line: int) -> Union[List[JointTarget], Wait, Disturb]:
    keyword, args = words[0].lower(), words[1:]

    if keyword == "pose":
        _expect(args, len(JOINT_IDS), line, f"pose <{len(JOINT_IDS)} angles>")
        return [
            JointTarget(joint_id, _number(arg, line, joint_id), line)
            for joint_id, arg in zip(JOINT_IDS, args)
        ]

    if keyword == "move":
        _expect(args, 3, line, "move <finger> <pip|pitch|roll> <deg>")
        finger = _finger(args[0], line)
        joint_id = f"f{finger}.{args[1].lower()}"
        if joint_id not in JOINT_IDS:
            raise ScriptError(
                line, f"cannot move joint '{args[1]}', use pip, pitch or roll"
            )
        return [JointTarget(joint_id, _number(args[2], line, "angle"), line)]

    if keyword == "wait":
        _expect(args, 1, line, "wait <seconds>")
        seconds = _number(args[0], line, "wait time")
        if seconds < 0:
            raise ScriptError(line, f"wait time must not be negative, got {seconds}")
        return Wait(seconds, line)

    if keyword == "disturb":
        _expect(args, 4, line, "disturb <finger> <dip|pip|pitch|roll> <deg> <seconds>")
        finger = _finger(args[0], line)
        joint = args[1].lower()
        if joint not in POSE_JOINTS:
            raise ScriptError(line, f"unknown joint '{args[1]}'")
        duration = _number(args[3], line, "duration")
        if not duration > 0:
            raise ScriptError(
                line, f"disturbance duration must be positive, got {duration}"
            )
        return Disturb(finger, joint, _number(args[2], line, "offset"), duration, line)

    raise ScriptError(line, f"unknown command '{words[0]}'")


def parse_script(text: str) -> List[Command]:
    """
    Parse a motion script into commands.

    Raises:
        ScriptError: carrying the 1-based line number of the first bad line
    """
    commands: List[Command] = []
    block: List[JointTarget] = []

    def flush():
        if block:
            commands.append(MotionBlock(tuple(block)))
            block.clear()

    for number, raw in enumerate(text.splitlines(), start=1):
        words = raw.split("#", 1)[0].split()
        if not words:
            continue
        parsed = _parse_line(words, number)
        if isinstance(parsed, list):
            block.extend(parsed)
        else:
            flush()
            commands.append(parsed)
    flush()
    logger.debug("parsed %d commands", len(commands))
    return commands


def joint_wheel_angle(joint_id: str, angle: float, config: HandConfig) -> float:
    """Wheel angle (deg) that puts an actuated joint at ``angle``."""
    joint = joint_id.split(".", 1)[1]
    geometry = config.geometry
    if joint == "pip":
        return inverse_pip(angle, geometry.r2, geometry.r3)
    if joint == "pitch":
        return inverse_pitch(angle, geometry.r_pitch, geometry.r3)
    return inverse_roll(angle, geometry.r3, geometry.r_roll, geometry.roll_limit)


def wheel_targets(
    block: MotionBlock, config: HandConfig, commanded: Sequence[float]
) -> Tuple[float, ...]:
    """
    Wheel angles after a motion block, starting from the commanded ones.

    Raises:
        KinematicRangeError: naming the joint as ``f<finger>.<joint>`` and the
            script line of the offending target
    """
    wheels = list(commanded)
    for target in block.targets:
        try:
            wheel = joint_wheel_angle(target.joint_id, target.angle, config)
        except KinematicRangeError as e:
            raise KinematicRangeError(
                target.joint_id, f"line {target.line}: {e.detail}"
            ) from None
        wheels[config.shaft_map.shaft_of(target.joint_id)] = wheel
    return tuple(wheels)
