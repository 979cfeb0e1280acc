"""
Planning of time-multiplexed motion.

A motion demand asks every shaft for a signed wheel rotation. The motor group
can only drive the shafts of one position class at a time, so the planner
picks which spindle positions to visit, in which order, and which motor runs
how far at each of them.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, Iterator, List, Optional, Sequence, Tuple

from .hand_model import HandConfig, ShaftMap, TendonMuxError
from .kinematics import hand_pose
from .tdmm import reposition_time, run_time

logger = logging.getLogger(__name__)


# Largest number of position classes the exhaustive searches accept
EXHAUSTIVE_CLASSES = 3
ORACLE_MAX_CLASSES = 4

# Makespans closer than this count as equal when breaking ties (s)
_TIE_DIGITS = 12


class PlanningError(TendonMuxError):
    """Raised when a demand cannot be turned into a schedule."""
    pass


class OracleTooLargeError(PlanningError):
    """Raised when a demand needs too many position classes to enumerate."""
    pass


@dataclass(frozen=True)
class MotionDemand:
    """
    Signed wheel rotation requested per shaft (deg); zero means no motion.

    Fields:
        deltas: one entry per output shaft
    """
    deltas: Tuple[float, ...]

    @classmethod
    def zeros(cls, num_shafts: int = 9) -> 'MotionDemand':
        return cls(deltas=(0.0,) * num_shafts)

    @classmethod
    def single(cls, shaft: int, degrees: float, num_shafts: int = 9) -> 'MotionDemand':
        deltas = [0.0] * num_shafts
        deltas[shaft] = degrees
        return cls(deltas=tuple(deltas))

    def active_shafts(self) -> FrozenSet[int]:
        return frozenset(s for s, d in enumerate(self.deltas) if d != 0.0)

    def is_zero(self) -> bool:
        return not self.active_shafts()


@dataclass(frozen=True)
class MotorRun:
    """One motor turn inside a phase; ``motor_deg`` is measured at the motor."""
    motor: int
    shaft: int
    motor_deg: float


@dataclass(frozen=True)
class Phase:
    """
    One spindle park with the motor runs performed there.

    Fields:
        position: spindle position of the phase
        runs: motor runs in motor order, all executed concurrently
        duration: reposition + settle + longest run + settle (s)
    """
    position: int
    runs: Tuple[MotorRun, ...]
    duration: float


@dataclass(frozen=True)
class Schedule:
    """Ordered phases and the resulting makespan (s)."""
    phases: Tuple[Phase, ...] = ()
    start_position: int = 0
    makespan: float = 0.0

    @property
    def positions(self) -> Tuple[int, ...]:
        return tuple(phase.position for phase in self.phases)

    def wheel_totals(self, config: HandConfig) -> List[float]:
        """Wheel rotation per shaft that executing the schedule produces."""
        totals = [0.0] * config.shaft_map.num_shafts
        for phase in self.phases:
            for run in phase.runs:
                totals[run.shaft] += run.motor_deg / config.k
        return totals


@dataclass(frozen=True)
class _Candidate:
    positions: Tuple[int, ...]
    schedule: Schedule = field(compare=False)

    @property
    def key(self) -> Tuple[float, Tuple[int, ...]]:
        return (round(self.schedule.makespan, _TIE_DIGITS), self.positions)


# Demand checks


def validate_demand(
    demand: MotionDemand,
    config: HandConfig,
    current: Optional[Sequence[float]] = None,
) -> Tuple[float, ...]:
    """
    Check a demand against the kinematic domains.

    Args:
        demand: requested wheel rotations
        config: hand configuration
        current: wheel angles the demand starts from (zeros when None)

    Returns:
        Wheel angles after the demand

    Raises:
        PlanningError: wrong length or a non-finite entry
        KinematicRangeError: a resulting wheel angle leaves its joint domain
    """
    n = config.shaft_map.num_shafts
    if len(demand.deltas) != n:
        raise PlanningError(f"demand has {len(demand.deltas)} entries, expected {n}")
    if not all(math.isfinite(d) for d in demand.deltas):
        raise PlanningError("demand entries must be finite")
    start = tuple(current) if current is not None else (0.0,) * n
    target = tuple(c + d for c, d in zip(start, demand.deltas))
    hand_pose(target, config, strict=True)
    return target


def position_classes(config: HandConfig) -> Dict[FrozenSet[int], Tuple[int, ...]]:
    """
    Group spindle positions by the shaft set their motors reach.

    Returns:
        Mapping shaft set -> positions reaching exactly that set, in
        first-seen order
    """
    classes: Dict[FrozenSet[int], List[int]] = {}
    for position in range(config.shaft_map.num_positions):
        classes.setdefault(frozenset(config.shaft_map.shafts_at(position)), []).append(
            position
        )
    return {shafts: tuple(positions) for shafts, positions in classes.items()}


def _minimum_covers(
    active: FrozenSet[int], classes: Sequence[FrozenSet[int]]
) -> List[Tuple[FrozenSet[int], ...]]:
    for size in range(1, len(classes) + 1):
        covers = [
            combo for combo in itertools.combinations(classes, size)
            if active <= frozenset().union(*combo)
        ]
        if covers:
            return covers
    raise PlanningError(f"shafts {sorted(active)} cannot all be reached")


# Timing


def phase_duration(
    config: HandConfig, prev_position: int, position: int, runs: Sequence[MotorRun]
) -> float:
    """Duration of one phase entered from ``prev_position`` (s)."""
    longest = max((run_time(r.motor_deg, config.timing) for r in runs), default=0.0)
    settle = config.timing.settle_time
    return reposition_time(config, prev_position, position) + settle + longest + settle


def makespan(schedule: Schedule, config: HandConfig) -> float:
    """
    Total time of a schedule, starting from its start position.

    Components are accumulated one by one in execution order, the same
    way the runtime advances its busy time.
    """
    total = 0.0
    previous = schedule.start_position
    settle = config.timing.settle_time
    for phase in schedule.phases:
        total += reposition_time(config, previous, phase.position)
        total += settle
        total += max(
            (run_time(r.motor_deg, config.timing) for r in phase.runs), default=0.0
        )
        total += settle
        previous = phase.position
    return total


# Building schedules


def _assignments(
    positions: Sequence[int], active: FrozenSet[int], shaft_map: ShaftMap
) -> Iterator[Dict[int, int]]:
    """
    Every way of driving each active shaft at exactly one visited position.

    Args:
        positions: visited spindle positions, in order
        active: shafts with a non-zero demand
        shaft_map: motor/shaft wiring

    Returns:
        Lazy sequence of mappings shaft -> phase index. Shafts reachable at
        several phases branch over them, earliest phase first, so the first
        mapping drives every shaft as early as possible.

    Raises:
        PlanningError: some active shaft is reached by none of the positions
    """
    reached = [set(shaft_map.shafts_at(p)) for p in positions]
    choices = {
        shaft: tuple(i for i, shafts in enumerate(reached) if shaft in shafts)
        for shaft in sorted(active)
    }
    missing = [shaft for shaft, phases in choices.items() if not phases]
    if missing:
        raise PlanningError(f"positions {list(positions)} leave shafts {missing}")
    shafts = list(choices)
    return (
        dict(zip(shafts, picks))
        for picks in itertools.product(*(choices[s] for s in shafts))
    )


def _build_schedule(
    positions: Sequence[int],
    demand: MotionDemand,
    config: HandConfig,
    start_position: int,
    assignment: Dict[int, int],
) -> Schedule:
    """Turn a position sequence and a shaft -> phase index mapping into a schedule."""
    phases = []
    previous = start_position
    for index, position in enumerate(positions):
        runs = tuple(
            MotorRun(motor, shaft, demand.deltas[shaft] * config.k)
            for motor, shaft in enumerate(config.shaft_map.shafts_at(position))
            if assignment.get(shaft) == index
        )
        phases.append(
            Phase(position, runs, phase_duration(config, previous, position, runs))
        )
        previous = position
    schedule = Schedule(phases=tuple(phases), start_position=start_position)
    return replace(schedule, makespan=makespan(schedule, config))


def _best(candidates) -> _Candidate:
    best = None
    for candidate in candidates:
        if best is None or candidate.key < best.key:
            best = candidate
    return best


def _candidate(positions, demand, config, start_position) -> _Candidate:
    """Best shaft-to-phase pairing for a fixed position sequence."""
    positions = tuple(positions)
    assignments = _assignments(positions, demand.active_shafts(), config.shaft_map)
    return _best(
        _Candidate(
            positions,
            _build_schedule(positions, demand, config, start_position, assignment),
        )
        for assignment in assignments
    )


def _best_positions(
    order: Sequence[FrozenSet[int]],
    classes: Dict[FrozenSet[int], Tuple[int, ...]],
    config: HandConfig,
    start_position: int,
) -> Tuple[int, ...]:
    """Cheapest position per class for a fixed class order, by dynamic programming."""
    # best (cost, path) ending at each position of the current class
    frontier = {start_position: (0.0, ())}
    for shafts in order:
        step = {}
        for position in classes[shafts]:
            step[position] = min(
                (
                    round(cost + reposition_time(config, prev, position), _TIE_DIGITS),
                    path + (position,),
                )
                for prev, (cost, path) in frontier.items()
            )
        frontier = step
    return min(frontier.values())[1]


def _greedy_order(
    cover: Sequence[FrozenSet[int]],
    classes: Dict[FrozenSet[int], Tuple[int, ...]],
    config: HandConfig,
    start_position: int,
) -> List[FrozenSet[int]]:
    left = list(cover)
    order = []
    here = start_position
    while left:
        _, position, chosen = min(
            (reposition_time(config, here, p), p, shafts)
            for shafts in left for p in classes[shafts]
        )
        order.append(chosen)
        left.remove(chosen)
        here = position
    return order


def _two_opt(order, classes, demand, config, start_position) -> _Candidate:
    def evaluate(candidate_order):
        positions = _best_positions(candidate_order, classes, config, start_position)
        return _candidate(positions, demand, config, start_position)

    best = evaluate(order)
    improved = True
    while improved:
        improved = False
        for i in range(len(order) - 1):
            for j in range(i + 1, len(order)):
                trial = order[:i] + order[i:j + 1][::-1] + order[j + 1:]
                candidate = evaluate(trial)
                if candidate.key < best.key:
                    best, order, improved = candidate, trial, True
    return best


def plan_sequential(
    demand: MotionDemand,
    config: HandConfig,
    start_position: int = 0,
    current: Optional[Sequence[float]] = None,
) -> Schedule:
    """
    Plan a demand visiting each needed position class exactly once.

    Up to three classes every class order and every position choice inside
    the classes is scored; larger covers start from a nearest-neighbour order
    improved by 2-opt. For each position sequence a shaft reachable at more
    than one visited position is tried at each of them.

    Args:
        demand: requested wheel rotations
        config: hand configuration
        start_position: spindle position before the first phase
        current: wheel angles before the demand (zeros when None)

    Returns:
        Schedule with minimal makespan among the orderings searched

    Raises:
        KinematicRangeError: a target lies outside its joint domain
        PlanningError: malformed demand
    """
    validate_demand(demand, config, current)
    active = demand.active_shafts()
    if not active:
        return Schedule(start_position=start_position)

    classes = position_classes(config)
    covers = _minimum_covers(active, list(classes))
    if len(covers[0]) <= EXHAUSTIVE_CLASSES:
        best = _best(
            _candidate(positions, demand, config, start_position)
            for cover in covers
            for order in itertools.permutations(cover)
            for positions in itertools.product(*(classes[c] for c in order))
        )
    else:
        best = _best(
            _two_opt(
                _greedy_order(cover, classes, config, start_position),
                classes, demand, config, start_position,
            )
            for cover in covers
        )
    logger.info(
        "sequential plan: positions %s, makespan %.4f s",
        best.positions, best.schedule.makespan,
    )
    return best.schedule


def plan_interleaved(
    demand: MotionDemand,
    config: HandConfig,
    chunk: float,
    start_position: int = 0,
    current: Optional[Sequence[float]] = None,
) -> Schedule:
    """
    Plan a demand in rounds so all joints progress together.

    Every active shaft is cut into N equal pieces, N being the largest
    ceil(|demand| / chunk) over the shafts; each round repeats the sequential
    plan's phases with one piece per shaft.

    Raises:
        PlanningError: chunk not positive, or malformed demand
        KinematicRangeError: a target lies outside its joint domain
    """
    if not chunk > 0:
        raise PlanningError(f"chunk must be positive, got {chunk}")
    sequential = plan_sequential(demand, config, start_position, current)
    if not sequential.phases:
        return sequential

    pieces = max(math.ceil(abs(d) / chunk) for d in demand.deltas if d != 0.0)
    phases = []
    previous = start_position
    for _ in range(pieces):
        for phase in sequential.phases:
            runs = tuple(
                MotorRun(r.motor, r.shaft, demand.deltas[r.shaft] / pieces * config.k)
                for r in phase.runs
            )
            phases.append(
                Phase(
                    phase.position, runs,
                    phase_duration(config, previous, phase.position, runs),
                )
            )
            previous = phase.position
    schedule = Schedule(phases=tuple(phases), start_position=start_position)
    schedule = replace(schedule, makespan=makespan(schedule, config))
    logger.info(
        "interleaved plan: %d rounds of %d phases, makespan %.4f s",
        pieces, len(sequential.phases), schedule.makespan,
    )
    return schedule


def oracle_optimal(
    demand: MotionDemand,
    config: HandConfig,
    start_position: int = 0,
    current: Optional[Sequence[float]] = None,
) -> Schedule:
    """
    Brute-force reference planner.

    Enumerates every ordered tuple of spindle positions from distinct classes
    that covers the active shafts, with as many positions as the smallest
    cover needs, and for each tuple every (motor, phase) at which each active
    shaft can be driven. Keeps the minimum-makespan schedule.

    Raises:
        OracleTooLargeError: more than four classes are needed
    """
    validate_demand(demand, config, current)
    active = demand.active_shafts()
    if not active:
        return Schedule(start_position=start_position)

    classes = position_classes(config)
    size = len(_minimum_covers(active, list(classes))[0])
    if size > ORACLE_MAX_CLASSES:
        raise OracleTooLargeError(
            f"demand needs {size} position classes, oracle handles {ORACLE_MAX_CLASSES}"
        )
    shaft_map = config.shaft_map

    shafts = sorted(active)

    def feasible(positions) -> bool:
        reached = [frozenset(shaft_map.shafts_at(p)) for p in positions]
        distinct = len(set(reached)) == len(reached)
        return distinct and active <= frozenset().union(*reached)

    def schedules(positions):
        # (phase index, motor) pairs able to drive each shaft
        options = [
            [
                (index, motor)
                for index, position in enumerate(positions)
                for motor in range(shaft_map.num_motors)
                if shaft_map.shaft_for(motor, position) == shaft
            ]
            for shaft in shafts
        ]
        for picks in itertools.product(*options):
            per_phase = [[] for _ in positions]
            for shaft, (index, motor) in zip(shafts, picks):
                per_phase[index].append(
                    MotorRun(motor, shaft, demand.deltas[shaft] * config.k)
                )
            phases = []
            previous = start_position
            for position, runs in zip(positions, per_phase):
                runs = tuple(sorted(runs, key=lambda r: r.motor))
                phases.append(
                    Phase(position, runs,
                          phase_duration(config, previous, position, runs))
                )
                previous = position
            schedule = Schedule(phases=tuple(phases), start_position=start_position)
            yield _Candidate(
                tuple(positions),
                replace(schedule, makespan=makespan(schedule, config)),
            )

    best = _best(
        candidate
        for positions in itertools.permutations(range(shaft_map.num_positions), size)
        if feasible(positions)
        for candidate in schedules(positions)
    )
    return best.schedule


def completed_fractions(
    schedule: Schedule, demand: MotionDemand, config: HandConfig
) -> List[Dict[int, float]]:
    """
    Completed fraction of every active shaft after each phase.

    Returns:
        One mapping shaft -> fraction in [0, 1] per phase boundary
    """
    done = {shaft: 0.0 for shaft in demand.active_shafts()}
    history = []
    for phase in schedule.phases:
        for run in phase.runs:
            done[run.shaft] += run.motor_deg / config.k
        history.append({s: done[s] / demand.deltas[s] for s in done})
    return history
