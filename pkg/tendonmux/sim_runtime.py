"""
Discrete-time executor of schedules and motion scripts.

The runtime owns one HandState. Schedules are broken into timed segments
(spindle rotation, plug lift, motor runs, plug drop) and the clock is only
ever advanced to the next segment end, disturbance release or requested time,
so sampling never aliases an event. Telemetry is taken on a fixed grid.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .hand_model import (
    FINGERS,
    POSE_JOINTS,
    HandConfig,
    HandState,
    TendonMuxError,
)
from .kinematics import refresh_joints
from .scheduler import (
    MotionDemand,
    MotorRun,
    Phase,
    PlanningError,
    Schedule,
    plan_interleaved,
    plan_sequential,
)
from .script import Disturb, MotionBlock, Wait, parse_script, wheel_targets
from .tdmm import (
    EngagementEvent,
    check_state,
    disengage,
    engage,
    motor_run,
    reposition_time,
    rotate_spindle,
    run_time,
    spindle_steps,
)

logger = logging.getLogger(__name__)


DEFAULT_SEED = 0
MODES = ("sequential", "interleaved")


class DisturbanceError(TendonMuxError):
    """Raised for a malformed or overlapping external disturbance."""
    pass


# Encoder model


def wrap_angle(angle: float) -> float:
    """Wrap an angle into [0, 360) deg."""
    wrapped = math.fmod(angle, 360.0)
    if wrapped < 0.0:
        wrapped += 360.0
    return 0.0 if wrapped >= 360.0 else wrapped


def encoder_read(angle: float, bits: int = 14) -> int:
    """
    Absolute magnetic encoder reading of a shaft angle.

    Code 0 is the straight-finger zero; rounding is half-up.

    Returns:
        round(wrap(angle) / 360 * 2^bits) mod 2^bits
    """
    counts = 1 << bits
    return int(math.floor(wrap_angle(angle) / 360.0 * counts + 0.5)) % counts


def dequantize(code: int, bits: int = 14) -> float:
    """
    Angle (deg) at the centre of an encoder code.

    Args:
        code: reading in [0, 2^bits)
        bits: encoder resolution

    Returns:
        code * 360 / 2^bits
    """
    return code * 360.0 / (1 << bits)


def angle_difference(a: float, b: float) -> float:
    """Signed shortest rotation from ``b`` to ``a`` (deg), in [-180, 180)."""
    return (a - b + 180.0) % 360.0 - 180.0


# Telemetry


def telemetry_header(num_shafts: int = 9) -> List[str]:
    """
    Column names of the telemetry CSV.

    Time, spindle position and engaged pairs come first, then one wheel
    angle per shaft, four pose angles per finger and one encoder code per
    shaft.

    Args:
        num_shafts: number of output shafts

    Returns:
        Header matching TelemetryRecord.to_row
    """
    header = ["t_s", "spindle_pos", "engaged"]
    header += [f"wheel_{s}" for s in range(num_shafts)]
    for finger in range(FINGERS):
        header += [f"f{finger}_{name}" for name in ("th1", "th2", "th3", "phi3")]
    header += [f"enc_{s}" for s in range(num_shafts)]
    return header


@dataclass(frozen=True)
class TelemetryRecord:
    """
    One telemetry sample.

    Fields:
        t: simulation time (s)
        spindle_position: spindle park position
        engaged: (motor, shaft) pairs, sorted
        wheel_angles: per shaft (deg)
        joint_angles: per finger (theta1, theta2, theta3, phi3) in deg
        encoder_codes: per shaft encoder reading
    """
    t: float
    spindle_position: int
    engaged: Tuple[Tuple[int, int], ...]
    wheel_angles: Tuple[float, ...]
    joint_angles: Tuple[Tuple[float, float, float, float], ...]
    encoder_codes: Tuple[int, ...]

    @staticmethod
    def from_state(state: HandState, bits: int = 14) -> 'TelemetryRecord':
        return TelemetryRecord(
            t=state.clock,
            spindle_position=state.spindle_position,
            engaged=tuple(sorted(state.engaged)),
            wheel_angles=state.wheel_angle,
            joint_angles=state.joint_angles,
            encoder_codes=tuple(encoder_read(w, bits) for w in state.wheel_angle),
        )

    def to_row(self) -> List[str]:
        """CSV cells in ``telemetry_header`` order."""
        row = [
            f"{self.t:.6f}",
            str(self.spindle_position),
            ";".join(f"{m}:{s}" for m, s in self.engaged),
        ]
        row += [f"{w:.6f}" for w in self.wheel_angles]
        for angles in self.joint_angles:
            row += [f"{a:.6f}" for a in angles]
        row += [str(code) for code in self.encoder_codes]
        return row


# Disturbances


@dataclass(frozen=True)
class Disturbance:
    """
    External push on one pose component of a finger.

    Fields:
        finger: finger index
        joint: dip, pip, pitch or roll
        offset: joint angle offset while pushed (deg)
        applied_at: start time (s)
        released_at: release time (s), after applied_at
    """
    finger: int
    joint: str
    offset: float
    applied_at: float
    released_at: float


def _check_disturbance_target(finger: int, joint: str) -> int:
    if not 0 <= finger < FINGERS:
        raise DisturbanceError(f"no finger {finger}")
    if joint not in POSE_JOINTS:
        raise DisturbanceError(
            f"unknown joint '{joint}', expected one of {POSE_JOINTS}"
        )
    return POSE_JOINTS.index(joint)


def _with_offset(state: HandState, finger: int, index: int, offset: float) -> HandState:
    rows = [list(row) for row in state.disturbance]
    rows[finger][index] = offset
    return state.copy_with(disturbance=tuple(tuple(row) for row in rows))


def apply_disturbance(
    state: HandState, d: Disturbance, config: HandConfig
) -> HandState:
    """
    Start pushing a joint; the reported angle becomes kinematics plus offset.

    Any residual of an earlier, released disturbance on the joint is replaced.

    Raises:
        DisturbanceError: unknown joint, bad timing, or the joint is already held
    """
    index = _check_disturbance_target(d.finger, d.joint)
    if not d.released_at > d.applied_at:
        raise DisturbanceError(
            f"disturbance released at {d.released_at} s before it is applied "
            f"at {d.applied_at} s"
        )
    if (d.finger, index) in state.held:
        raise DisturbanceError(f"f{d.finger}.{d.joint} is already being disturbed")
    state = _with_offset(state, d.finger, index, d.offset)
    state = state.copy_with(held=state.held | {(d.finger, index)})
    return refresh_joints(state, config)


def release_disturbance(state: HandState, finger: int, joint: str) -> HandState:
    """Let go of a joint; its offset now decays on every step."""
    index = _check_disturbance_target(finger, joint)
    if (finger, index) not in state.held:
        raise DisturbanceError(f"f{finger}.{joint} is not being disturbed")
    return state.copy_with(held=state.held - {(finger, index)})


def decay_disturbance(state: HandState, dt: float, config: HandConfig) -> HandState:
    """First-order self-reset of every released offset over ``dt`` seconds."""
    if not any(any(row) for row in state.disturbance):
        return state
    factor = math.exp(-config.magnet_reset_rate * dt)
    rows = tuple(
        tuple(
            offset if (finger, index) in state.held else offset * factor
            for index, offset in enumerate(row)
        )
        for finger, row in enumerate(state.disturbance)
    )
    return refresh_joints(state.copy_with(disturbance=rows), config)


# Runtime


@dataclass
class _Segment:
    kind: str
    duration: float
    on_start: Optional[Callable[[], None]] = None
    on_progress: Optional[Callable[[float], None]] = None
    on_end: Optional[Callable[[], None]] = None


@dataclass
class RunResult:
    """Outcome of a script run."""
    telemetry: List[TelemetryRecord]
    final_state: HandState
    events: List[EngagementEvent] = field(default_factory=list)
    schedules: List[Schedule] = field(default_factory=list)


class SimRuntime:
    """
    Executes schedules against one HandState.

    Motors of a phase lift their plugs together, run concurrently at constant
    speed and drop their plugs together. With closed_loop set, each engaged
    wheel is read back through its encoder after the runs and a corrective
    run is issued when the reading misses the expected angle by more than
    one count.
    """

    def __init__(
        self,
        config: HandConfig,
        seed: int = DEFAULT_SEED,
        closed_loop: bool = True,
        state: Optional[HandState] = None,
    ):
        self.config = config
        self.closed_loop = closed_loop
        self.rng = np.random.default_rng(seed)
        self.state = state if state is not None else HandState.initial(config)
        self.events: List[EngagementEvent] = []
        self.telemetry: List[TelemetryRecord] = []

        self._expected: List[float] = list(self.state.wheel_angle)
        self._plan: Optional[Iterator[_Segment]] = None
        self._segment: Optional[_Segment] = None
        self._segment_start = 0.0
        self._elapsed = 0.0
        self._releases: List[Disturbance] = []
        self._sample_index = 0

    @property
    def busy(self) -> bool:
        return self._segment is not None

    @property
    def lsb(self) -> float:
        return 360.0 / (1 << self.config.timing.encoder_bits)

    # Schedules

    def load(self, schedule: Schedule) -> None:
        """Make ``schedule`` the active one; it progresses with every step."""
        if self.busy:
            raise TendonMuxError("a schedule is already running")
        if schedule.start_position != self.state.spindle_position:
            logger.warning(
                "schedule planned from position %d, spindle is at %d",
                schedule.start_position, self.state.spindle_position,
            )
        self._elapsed = 0.0
        self._plan = self._schedule_segments(schedule)
        self._next_segment()

    def execute(self, schedule: Schedule) -> float:
        """
        Run a schedule to completion, sampling telemetry on the way.

        Returns:
            Busy time of the schedule (s)
        """
        self.load(schedule)
        while self.busy:
            self._advance_to(self._next_sample_time(), stop_when_idle=True)
            self.sample_due()
        logger.info(
            "schedule done in %.4f s at t=%.4f s", self._elapsed, self.state.clock
        )
        return self._elapsed

    def run_for(self, seconds: float) -> None:
        """Let time pass, sampling telemetry, until ``seconds`` have elapsed."""
        end = self.state.clock + seconds
        while self.state.clock < end:
            self._advance_to(min(self._next_sample_time(), end))
            self.sample_due()

    def step(self, dt: float) -> HandState:
        """Advance the clock by ``dt`` without sampling."""
        if not dt > 0:
            raise ValueError(f"step needs dt > 0, got {dt}")
        self._advance_to(self.state.clock + dt)
        return self.state

    # Disturbances

    def disturb(
        self, finger: int, joint: str, offset: float, duration: float
    ) -> Disturbance:
        """Push a joint now and release it after ``duration`` seconds."""
        now = self.state.clock
        d = Disturbance(
            finger, joint, offset, applied_at=now, released_at=now + duration
        )
        self.state = apply_disturbance(self.state, d, self.config)
        self._releases.append(d)
        self._releases.sort(key=lambda item: item.released_at)
        logger.info("disturb f%d.%s by %.3f deg until t=%.4f s", finger, joint, offset,
                    d.released_at)
        return d

    # Telemetry

    def sample(self) -> TelemetryRecord:
        """Record the current state off the sampling grid."""
        record = TelemetryRecord.from_state(self.state, self.config.timing.encoder_bits)
        self.telemetry.append(record)
        return record

    def _next_sample_time(self) -> float:
        return self._sample_index * self.config.timing.sample_period

    def sample_due(self) -> None:
        """Record every grid sample whose time has been reached."""
        while self.state.clock >= self._next_sample_time():
            self.sample()
            self._sample_index += 1

    # Time advance

    def _advance_to(self, t_target: float, stop_when_idle: bool = False) -> None:
        while True:
            if stop_when_idle and not self.busy:
                return
            boundary = t_target
            if self._segment is not None:
                boundary = min(boundary, self._segment_end())
            if self._releases:
                boundary = min(boundary, self._releases[0].released_at)
            if boundary > self.state.clock:
                self._move_clock(boundary)
            self._fire_releases()
            if self._segment is not None and self.state.clock >= self._segment_end():
                self._finish_segment()
                continue
            if self.state.clock >= t_target:
                return

    def _segment_end(self) -> float:
        return self._segment_start + self._segment.duration

    def _move_clock(self, t: float) -> None:
        dt = t - self.state.clock
        segment = self._segment
        if segment is not None and segment.on_progress is not None:
            segment.on_progress(t - self._segment_start)
        self.state = decay_disturbance(self.state, dt, self.config).copy_with(clock=t)
        self._check()

    def _check(self) -> None:
        """Raise TdmmFault when the current state breaks a HandState invariant."""
        check_state(self.state, self.config)

    def _fire_releases(self) -> None:
        while self._releases and self._releases[0].released_at <= self.state.clock:
            d = self._releases.pop(0)
            self.state = release_disturbance(self.state, d.finger, d.joint)
            logger.debug(
                "released f%d.%s at t=%.4f s", d.finger, d.joint, self.state.clock
            )

    def _next_segment(self) -> None:
        self._segment = next(self._plan, None) if self._plan is not None else None
        if self._segment is None:
            self._plan = None
            return
        self._segment_start = self.state.clock
        if self._segment.on_start is not None:
            self._segment.on_start()

    def _finish_segment(self) -> None:
        segment = self._segment
        if segment.on_end is not None:
            segment.on_end()
        self._check()
        self._elapsed += segment.duration
        self._next_segment()

    # Segment construction

    def _schedule_segments(self, schedule: Schedule) -> Iterator[_Segment]:
        for phase in schedule.phases:
            logger.debug(
                "phase at position %d with %d runs", phase.position, len(phase.runs)
            )
            yield from self._phase_segments(phase)

    def _phase_segments(self, phase: Phase) -> Iterator[_Segment]:
        settle = self.config.timing.settle_time
        motors = [run.motor for run in phase.runs]

        yield self._rotate_segment(phase.position)
        yield _Segment("engage", settle, on_start=lambda: self._engage_all(motors))
        yield self._run_segment(phase.runs, planned=True)
        if self.closed_loop:
            corrections = self._corrections(phase.runs)
            if corrections:
                yield self._run_segment(corrections, planned=False)
        yield _Segment(
            "disengage", settle, on_start=lambda: self._disengage_all(motors)
        )

    def _rotate_segment(self, target: int) -> _Segment:
        source = self.state.spindle_position
        duration = reposition_time(self.config, source, target)

        def finish():
            start = self._segment_start
            self.state, _ = rotate_spindle(self.state, target, self.config)
            steps = spindle_steps(self.config, source, target)
            self.events.append(EngagementEvent(
                "rotate_spindle", None, None,
                amount=steps * self.config.shaft_map.position_angle,
                duration=duration, t_start=start, position=target,
            ))

        return _Segment("rotate", duration, on_end=finish)

    def _engage_all(self, motors: Sequence[int]) -> None:
        for motor in motors:
            self.state, elapsed = engage(self.state, motor, self.rng, self.config)
            self.events.append(EngagementEvent(
                "engage", motor, self.state.shaft_of_motor(motor), 0.0,
                duration=elapsed, t_start=self.state.clock,
            ))
        self._check()

    def _disengage_all(self, motors: Sequence[int]) -> None:
        for motor in motors:
            shaft = self.state.shaft_of_motor(motor)
            self.state, elapsed = disengage(self.state, motor, self.config)
            self.events.append(EngagementEvent(
                "disengage", motor, shaft, 0.0,
                duration=elapsed, t_start=self.state.clock,
            ))
        self._check()

    def _run_segment(self, runs: Sequence[MotorRun], planned: bool) -> _Segment:
        timing = self.config.timing
        times = {run.motor: run_time(run.motor_deg, timing) for run in runs}
        duration = max(times.values(), default=0.0)
        done: Dict[int, float] = {run.motor: 0.0 for run in runs}

        def start():
            for run in runs:
                if planned:
                    self._expected[run.shaft] += run.motor_deg / self.config.k
                self.events.append(EngagementEvent(
                    "motor_run", run.motor, run.shaft, run.motor_deg,
                    duration=times[run.motor], t_start=self.state.clock,
                ))

        def progress(elapsed: float):
            for run in runs:
                total = times[run.motor]
                fraction = 1.0 if total <= 0.0 or elapsed >= total else elapsed / total
                target = run.motor_deg if fraction == 1.0 else run.motor_deg * fraction
                increment = target - done[run.motor]
                if increment != 0.0:
                    self.state, _ = motor_run(
                        self.state, run.motor, increment, self.config
                    )
                    done[run.motor] = target

        return _Segment(
            "run" if planned else "correct", duration,
            on_start=start, on_progress=progress, on_end=lambda: progress(duration),
        )

    def _corrections(self, runs: Sequence[MotorRun]) -> List[MotorRun]:
        bits = self.config.timing.encoder_bits
        corrections = []
        for run in runs:
            code = encoder_read(self.state.wheel_angle[run.shaft], bits)
            reading = dequantize(code, bits)
            error = angle_difference(self._expected[run.shaft], reading)
            if abs(error) > self.lsb:
                correction = MotorRun(run.motor, run.shaft, error * self.config.k)
                corrections.append(correction)
        if corrections:
            logger.debug("closed-loop corrections: %s", corrections)
        return corrections


def run_script(
    script_text: str,
    config: HandConfig,
    mode: str = "sequential",
    chunk: Optional[float] = None,
    seed: int = DEFAULT_SEED,
    closed_loop: bool = True,
) -> RunResult:
    """
    Parse, plan and execute a motion script.

    Consecutive pose/move lines form one motion block that is planned as a
    single demand; wait lets time pass; disturb pushes a joint for a while
    and blocks until it is released.

    Raises:
        ScriptError: the script does not parse
        KinematicRangeError: a target is unreachable, naming the joint
        PlanningError: bad mode or chunk
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode '{mode}', expected one of {MODES}")
    if mode == "interleaved" and (chunk is None or not chunk > 0):
        raise PlanningError(f"interleaved mode needs a positive chunk, got {chunk}")
    program = parse_script(script_text)
    runtime = SimRuntime(config, seed=seed, closed_loop=closed_loop)
    runtime.sample_due()
    commanded = list(runtime.state.wheel_angle)
    schedules = []

    for command in program:
        if isinstance(command, MotionBlock):
            targets = wheel_targets(command, config, commanded)
            demand = MotionDemand(tuple(t - c for t, c in zip(targets, commanded)))
            start = runtime.state.spindle_position
            if mode == "interleaved":
                schedule = plan_interleaved(demand, config, chunk, start, commanded)
            else:
                schedule = plan_sequential(demand, config, start, commanded)
            schedules.append(schedule)
            runtime.execute(schedule)
            commanded = list(targets)
        elif isinstance(command, Wait):
            runtime.run_for(command.seconds)
        elif isinstance(command, Disturb):
            runtime.disturb(
                command.finger, command.joint, command.offset, command.duration
            )
            runtime.run_for(command.duration)

    if runtime.telemetry[-1].t < runtime.state.clock:
        runtime.sample()
    logger.info(
        "script done: %d blocks, %d events, t=%.4f s",
        len(schedules), len(runtime.events), runtime.state.clock,
    )
    return RunResult(
        telemetry=runtime.telemetry,
        final_state=runtime.state,
        events=runtime.events,
        schedules=schedules,
    )
