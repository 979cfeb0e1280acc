"""
Tests for the executor: encoders, disturbances, stepping and scripts.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tendonmux.hand_model import POSE_JOINTS, HandState, default_config
from tendonmux.kinematics import KinematicRangeError, hand_pose, joint_angles_with
from tendonmux.scheduler import MotionDemand, PlanningError, plan_sequential
from tendonmux.sim_runtime import (
    Disturbance,
    DisturbanceError,
    SimRuntime,
    angle_difference,
    apply_disturbance,
    decay_disturbance,
    dequantize,
    encoder_read,
    release_disturbance,
    run_script,
    telemetry_header,
    wrap_angle,
)
from tendonmux.tdmm import TdmmFault, check_state

LSB = 360.0 / 16384


def disturbed(state, config, finger, joint, offset):
    d = Disturbance(finger, joint, offset, applied_at=0.0, released_at=1.0)
    return apply_disturbance(state, d, config)


class TestEncoder:
    """Test the 14-bit encoder model."""

    def test_known_codes(self):
        assert encoder_read(0.0) == 0
        assert encoder_read(180.0) == 8192
        assert encoder_read(360.0) == 0
        assert encoder_read(-90.0) == 12288

    def test_wrap(self):
        assert wrap_angle(360.0) == 0.0
        assert wrap_angle(-30.0) == 330.0
        assert wrap_angle(725.0) == pytest.approx(5.0)
        assert encoder_read(359.999999) == 0

    def test_quantization_error(self):
        """10,000 random angles read back within one count."""
        gen = np.random.default_rng(16384)
        for angle in gen.uniform(-720.0, 720.0, 10000):
            code = encoder_read(float(angle))
            assert 0 <= code < 16384
            error = angle_difference(dequantize(code), wrap_angle(float(angle)))
            assert abs(error) <= LSB

    def test_other_resolution(self):
        assert encoder_read(180.0, bits=10) == 512
        assert dequantize(512, bits=10) == 180.0


class TestDisturbance:
    """Test external pushes and magnetic self-reset."""

    def test_offset_added(self, state, config):
        pushed = disturbed(state, config, 0, "pip", 12.0)
        assert pushed.joint_angles[0] == (0.0, 12.0, 0.0, 0.0)
        assert (0, 1) in pushed.held

    def test_dip_disturbance_is_local(self, state, config):
        pushed = disturbed(state, config, 2, "dip", 7.5)
        assert pushed.joint_angles[2] == (7.5, 0.0, 0.0, 0.0)
        assert pushed.joint_angles[0] == (0.0, 0.0, 0.0, 0.0)

    def test_overlap_rejected(self, state, config):
        pushed = disturbed(state, config, 0, "pip", 12.0)
        with pytest.raises(DisturbanceError):
            disturbed(pushed, config, 0, "pip", 3.0)

    def test_release_must_follow_apply(self, state, config):
        d = Disturbance(0, "pip", 5.0, applied_at=1.0, released_at=1.0)
        with pytest.raises(DisturbanceError):
            apply_disturbance(state, d, config)

    def test_unknown_joint(self, state, config):
        with pytest.raises(DisturbanceError):
            disturbed(state, config, 0, "wrist", 5.0)

    def test_held_offset_does_not_decay(self, state, config):
        pushed = disturbed(state, config, 0, "pip", 10.0)
        assert decay_disturbance(pushed, 3.0, config).disturbance == pushed.disturbance

    def test_half_life(self, state, config):
        """10 deg released, ln 2 seconds later 5 deg remain."""
        runtime = SimRuntime(config, state=disturbed(state, config, 0, "pip", 10.0))
        runtime.state = release_disturbance(runtime.state, 0, "pip")
        runtime.step(math.log(2.0))
        assert runtime.state.disturbance[0][1] == pytest.approx(5.0, abs=1e-9)
        assert runtime.state.joint_angles[0][1] == pytest.approx(5.0, abs=1e-9)

    def test_reset_within_five_time_constants(self, config):
        """15 deg decays below 0.11 deg after 5 / rate seconds."""
        runtime = SimRuntime(config)
        runtime.disturb(1, "dip", 15.0, 0.5)
        runtime.run_for(0.5)
        assert runtime.state.held == frozenset()
        assert runtime.state.disturbance[1][0] == 15.0
        runtime.run_for(5.0 / config.magnet_reset_rate)
        assert runtime.state.disturbance[1][0] < 0.11
        assert runtime.state.disturbance[1][0] == pytest.approx(15.0 * math.exp(-5.0))

    def test_fast_reset_limit(self, state, config):
        fast = config.copy_with(magnet_reset_rate=1e9)
        runtime = SimRuntime(fast, state=disturbed(state, fast, 0, "roll", 20.0))
        runtime.state = release_disturbance(runtime.state, 0, "roll")
        runtime.step(0.01)
        assert runtime.state.joint_angles == state.joint_angles

    def test_release_splits_the_step(self, config):
        """A single long step still releases the joint at the right instant."""
        runtime = SimRuntime(config)
        runtime.disturb(0, "pitch", 10.0, 1.0)
        runtime.step(2.0)
        assert runtime.state.clock == 2.0
        assert runtime.state.disturbance[0][2] == pytest.approx(10.0 * math.exp(-1.0))


class TestStepping:
    """Test event-driven time advance."""

    @given(st.lists(st.floats(min_value=1e-4, max_value=2.0), min_size=1, max_size=20))
    @settings(max_examples=50, deadline=None)
    def test_idle_hand_holds(self, steps):
        """Without schedule or disturbance only the clock moves."""
        config = default_config()
        runtime = SimRuntime(config)
        initial = runtime.state
        for dt in steps:
            runtime.step(dt)
        assert runtime.state.copy_with(clock=0.0) == initial

    def test_step_needs_positive_dt(self, config):
        with pytest.raises(ValueError):
            SimRuntime(config).step(0.0)

    def test_step_size_independence(self, config):
        demand = MotionDemand((10.0, 8.0, 5.0, 10.0, 8.0, -5.0, 10.0, 8.0, 0.5))
        schedule = plan_sequential(demand, config)
        finals = []
        for dt in (0.01, 0.001, 10.0):
            runtime = SimRuntime(config, seed=3)
            runtime.load(schedule)
            while runtime.busy:
                runtime.step(dt)
            finals.append(runtime.state.wheel_angle)
        for other in finals[1:]:
            for a, b in zip(finals[0], other):
                assert abs(a - b) <= 1e-9

    def test_execute_matches_makespan(self, exact_config):
        """Busy time equals the planned makespan exactly."""
        gen = np.random.default_rng(4)
        for _ in range(20):
            deltas = tuple(float(d) for d in gen.uniform(0.5, 20.0, 9))
            schedule = plan_sequential(MotionDemand(deltas), exact_config)
            runtime = SimRuntime(exact_config, closed_loop=False)
            assert runtime.execute(schedule) == schedule.makespan

    def test_execute_reaches_demand(self, exact_config):
        demand = MotionDemand((10.0, 8.0, 5.0, 10.0, 8.0, -5.0, 10.0, 8.0, 0.5))
        runtime = SimRuntime(exact_config, closed_loop=False)
        runtime.execute(plan_sequential(demand, exact_config))
        for got, want in zip(runtime.state.wheel_angle, demand.deltas):
            assert abs(got - want) <= 1e-9
        assert runtime.state.engaged == frozenset()
        check_state(runtime.state, exact_config)

    def test_events_logged(self, config):
        runtime = SimRuntime(config)
        runtime.execute(plan_sequential(MotionDemand.single(4, 10.0), config))
        kinds = [event.kind for event in runtime.events]
        assert kinds[:3] == ["rotate_spindle", "engage", "motor_run"]
        assert kinds[-1] == "disengage"
        rotate = runtime.events[0]
        assert rotate.position == 1
        assert rotate.amount == 40.0
        assert rotate.duration == pytest.approx(40.0 / 180.0)

    def test_closed_loop_correction(self, config):
        """Encoder feedback removes the plug misalignment from the wheel."""
        demand = MotionDemand.single(0, 20.0)
        schedule = plan_sequential(demand, config)
        for seed in range(20):
            runtime = SimRuntime(config, seed=seed)
            runtime.execute(schedule)
            assert abs(runtime.state.wheel_angle[0] - 20.0) <= 2 * LSB

    def test_open_loop_keeps_misalignment(self, config):
        demand = MotionDemand.single(0, 20.0)
        runtime = SimRuntime(config, seed=1, closed_loop=False)
        runtime.execute(plan_sequential(demand, config))
        error = runtime.state.wheel_angle[0] - 20.0
        assert 0.0 < abs(error) <= config.wheel_alignment_bound + 1e-12

    def test_corrupted_joint_angles_fault(self, state, config):
        """Joint angles that disagree with the wheels stop the next step."""
        bent = ((0.0, 5.0, 0.0, 0.0),) + state.joint_angles[1:]
        runtime = SimRuntime(config, state=state.copy_with(joint_angles=bent))
        with pytest.raises(TdmmFault) as exc_info:
            runtime.step(0.01)
        assert "finger 0" in str(exc_info.value)

    def test_misrouted_engagement_fault(self, state, config):
        """Motor 0 at position 0 faces shaft 0; claiming shaft 4 is a fault."""
        runtime = SimRuntime(config, state=state.copy_with(engaged=frozenset({(0, 4)})))
        with pytest.raises(TdmmFault):
            runtime.step(0.01)

    def test_fault_during_schedule(self, state, config):
        wheels = list(state.wheel_angle)
        wheels[3] = 10.0
        runtime = SimRuntime(config, state=state.copy_with(wheel_angle=tuple(wheels)))
        with pytest.raises(TdmmFault):
            runtime.execute(plan_sequential(MotionDemand.single(0, 5.0), config))

    def test_telemetry_grid(self, config):
        runtime = SimRuntime(config)
        runtime.run_for(0.05)
        times = [record.t for record in runtime.telemetry]
        assert times == pytest.approx([0.0, 0.01, 0.02, 0.03, 0.04, 0.05])


class TestRunScript:
    """Test script execution end to end."""

    def test_empty_script(self, config):
        result = run_script("", config)
        assert len(result.telemetry) == 1
        assert result.telemetry[0].t == 0.0
        assert result.final_state == HandState.initial(config)

    def test_move_pip(self, config):
        result = run_script("move f0 pip 42.21\n", config)
        assert result.final_state.joint_angles[0][1] == pytest.approx(42.21, abs=0.30)

    def test_demo_grasp(self, config, data_dir):
        text = (data_dir / "demo_grasp.script").read_text()
        result = run_script(text, config, seed=11)
        for finger in range(3):
            theta1, theta2, theta3, _ = result.final_state.joint_angles[finger]
            assert theta2 == pytest.approx(60.0, abs=0.30)
            assert theta3 == pytest.approx(30.0, abs=0.30)
        assert result.final_state.disturbance[1][0] < 0.5

    @pytest.mark.parametrize(
        "name, targets",
        [
            (
                "two_finger_pinch",
                {(0, "roll"): 30.0, (0, "pitch"): 35.0, (0, "pip"): 40.0,
                 (1, "roll"): -30.0, (1, "pitch"): 35.0, (1, "pip"): 40.0,
                 (2, "pip"): 0.0, (2, "pitch"): 0.0, (2, "roll"): 0.0},
            ),
            (
                "three_finger_clip",
                {(f, joint): angle for f in range(3)
                 for joint, angle in (("pip", 70.0), ("pitch", 45.0), ("roll", 0.0))},
            ),
            (
                "opposed_roll_pinch",
                {(0, "roll"): 80.0, (0, "pitch"): 60.0, (0, "pip"): 15.0,
                 (2, "roll"): -80.0, (2, "pitch"): 60.0, (2, "pip"): 15.0,
                 (1, "pitch"): 0.0},
            ),
            ("roll_scissor", {(0, "roll"): 0.0, (1, "roll"): 0.0}),
        ],
    )
    def test_grasp_scripts(self, config, data_dir, name, targets):
        text = (data_dir / f"{name}.script").read_text()
        result = run_script(text, config, seed=7)
        for (finger, joint), angle in targets.items():
            got = result.final_state.joint_angles[finger][POSE_JOINTS.index(joint)]
            assert got == pytest.approx(angle, abs=0.30), f"f{finger}.{joint}"
        assert result.final_state.engaged == frozenset()

    def test_scissor_opens_twice(self, config, data_dir):
        text = (data_dir / "roll_scissor.script").read_text()
        result = run_script(text, config, seed=7)
        spread = [r.joint_angles[0][3] - r.joint_angles[1][3] for r in result.telemetry]
        assert max(spread) == pytest.approx(50.0, abs=0.6)
        opened = [s > 45.0 for s in spread]
        openings = sum(1 for a, b in zip(opened, opened[1:]) if b and not a)
        assert openings == 2

    def test_interleaved_mode(self, config):
        text = "move 0 pip 50\nmove 1 pitch 40\nmove 2 roll -30\n"
        result = run_script(text, config, mode="interleaved", chunk=2.0)
        assert result.final_state.joint_angles[0][1] == pytest.approx(50.0, abs=0.30)
        assert result.final_state.joint_angles[1][2] == pytest.approx(40.0, abs=0.30)
        assert result.final_state.joint_angles[2][3] == pytest.approx(-30.0, abs=0.30)
        assert len(result.schedules[0].phases) > 3

    def test_deterministic(self, config, data_dir):
        text = (data_dir / "demo_grasp.script").read_text()
        first = run_script(text, config, seed=5)
        second = run_script(text, config, seed=5)
        rows = [r.to_row() for r in first.telemetry]
        assert rows == [r.to_row() for r in second.telemetry]
        assert first.events == second.events

    def test_seed_matters(self, config):
        first = run_script("move 0 pip 30", config, seed=1, closed_loop=False)
        second = run_script("move 0 pip 30", config, seed=2, closed_loop=False)
        assert first.final_state.wheel_angle != second.final_state.wheel_angle

    def test_unreachable_target(self, config):
        with pytest.raises(KinematicRangeError) as exc_info:
            run_script("wait 0.1\nmove 0 pip 200\n", config)
        assert exc_info.value.joint == "f0.pip"
        assert "line 2" in str(exc_info.value)

    def test_telemetry_invariants(self, config):
        result = run_script("move 1 pip 30\nmove 2 roll 20\nwait 0.1\n", config)
        zeros = ((0.0,) * 4,) * 3
        times = [record.t for record in result.telemetry]
        assert times == sorted(times)
        for record in result.telemetry:
            expected = joint_angles_with(
                hand_pose(record.wheel_angles, config, strict=False), zeros
            )
            assert record.joint_angles == expected
            assert len(record.to_row()) == len(telemetry_header())

    def test_unknown_mode(self, config):
        with pytest.raises(ValueError):
            run_script("", config, mode="parallel")

    @pytest.mark.parametrize("chunk", [None, 0.0, -1.0])
    def test_interleaved_needs_chunk(self, config, chunk):
        with pytest.raises(PlanningError) as exc_info:
            run_script("move 0 pip 10\n", config, mode="interleaved", chunk=chunk)
        assert "chunk" in str(exc_info.value)
