"""
Tendon kinematics of one finger and of the whole hand.

Angles cross the public boundary in degrees; trigonometry runs in radians.
The PIP and MCP-pitch joints are rolling joints pulled by a drive cable wound
on a wheel of radius r3; the DIP joint follows the PIP joint through a
coupling cable; the MCP-roll joint follows its wheel by equal arc length.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, Sequence, Tuple

import numpy as np

from .hand_model import (
    FINGERS,
    FingerGeometry,
    HandConfig,
    HandState,
    TendonMuxError,
)

logger = logging.getLogger(__name__)

# Rounding slack for range checks (mm or deg); not a clamp for real violations
RANGE_TOL = 1e-9

# Coupling-cable growth peaks when (2 - dx2/r2)^2 reaches this value
_COUPLING_PEAK_T = 2.0 / 3.0


class KinematicRangeError(TendonMuxError, ValueError):
    """Raised when an input lies outside the domain of a joint map."""

    def __init__(self, joint: str, message: str):
        self.joint = joint
        self.detail = message
        super().__init__(f"{joint}: {message}")

    def with_joint(self, joint: str) -> 'KinematicRangeError':
        """Re-label the error with a more specific joint name."""
        return KinematicRangeError(joint, self.detail)


class DegenerateFitError(TendonMuxError, ValueError):
    """Raised when regression samples cannot define a line."""
    pass


@dataclass(frozen=True)
class CableDisplacement:
    """
    Cable length changes of one finger (mm).

    Fields:
        dx2: PIP drive-cable shortening
        dx1: coupling-cable length change driving the DIP joint
        dx_pitch: MCP-pitch drive-cable shortening
    """
    dx2: float
    dx1: float
    dx_pitch: float


@dataclass(frozen=True)
class FingerPose:
    """Joint angles of one finger (deg)."""
    theta1: float
    theta2: float
    theta3: float
    phi3: float

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.theta1, self.theta2, self.theta3, self.phi3)


@dataclass(frozen=True)
class LinearFit:
    """Ordinary least squares line with its coefficient of determination."""
    slope: float
    intercept: float
    r_squared: float
    samples: int = 0

    def predict(self, x: float) -> float:
        return self.slope * x + self.intercept


# Single-joint maps


def cable_displacement(phi1: float, r3: float) -> float:
    """
    Drive-cable shortening produced by a winding-wheel rotation.

    Args:
        phi1: wheel angle (deg), non-negative
        r3: winding-wheel radius (mm)

    Returns:
        dx2 = phi1[rad] * r3 (mm)
    """
    if phi1 < -RANGE_TOL:
        raise KinematicRangeError("cable", f"wheel angle {phi1:.6g} deg is negative")
    return float(np.radians(max(phi1, 0.0)) * r3)


def _check_rolling_domain(dx: float, r: float, joint: str) -> float:
    if dx < -RANGE_TOL or dx > 2.0 * r + RANGE_TOL:
        raise KinematicRangeError(
            joint, f"cable displacement {dx:.6g} mm outside [0, {2.0 * r:.6g}] mm"
        )
    return min(max(dx, 0.0), 2.0 * r)


def pip_link_length(dx2: float, r2: float) -> float:
    """Length l2 of the virtual link across the PIP rolling joint (mm)."""
    dx2 = _check_rolling_domain(dx2, r2, "pip")
    return float(np.sqrt(r2 ** 2 + (2.0 * r2 - dx2) ** 2))


def pip_half_angle(l2: float, r2: float) -> float:
    """Rotation alpha2 of the virtual link (deg), half of the PIP angle."""
    s = (5.0 * r2 ** 2 - l2 ** 2) / (4.0 * r2 ** 2)
    if s < -1.0 - RANGE_TOL or s > 1.0 + RANGE_TOL:
        raise KinematicRangeError(
            "pip", f"link length {l2:.6g} mm gives arcsin argument {s:.6g}"
        )
    return float(np.degrees(np.arcsin(np.clip(s, -1.0, 1.0))))


def _rolling_joint_angle(dx: float, r: float, joint: str) -> float:
    # 2*arcsin(dx/r - (dx/2r)^2), written as 1 - (1 - u)^2 so it never exceeds 1
    dx = _check_rolling_domain(dx, r, joint)
    u = dx / (2.0 * r)
    return float(2.0 * np.degrees(np.arcsin(1.0 - (1.0 - u) ** 2)))


def pip_angle(dx2: float, r2: float) -> float:
    """PIP angle theta2 (deg) for a drive-cable shortening dx2 (mm)."""
    return _rolling_joint_angle(dx2, r2, "pip")


def coupling_displacement(l2: float, alpha2: float) -> float:
    """Coupling-cable length change dx1 = 2 * l2 * sin(alpha2) (mm)."""
    if alpha2 < -RANGE_TOL or alpha2 > 90.0 + RANGE_TOL:
        raise KinematicRangeError("pip", f"half angle {alpha2:.6g} deg outside [0, 90]")
    return float(2.0 * l2 * np.sin(np.radians(alpha2)))


def dip_angle(dx1: float, r1: float) -> float:
    """DIP angle theta1 (deg) for a coupling-cable change dx1 (mm)."""
    return _rolling_joint_angle(dx1, r1, "dip")


def mcp_pitch_angle(dx_pitch: float, r_pitch: float) -> float:
    """MCP-pitch angle theta3 (deg); same rolling-joint form as the PIP."""
    return _rolling_joint_angle(dx_pitch, r_pitch, "pitch")


def mcp_roll_angle(phi2: float, r3: float, r_roll: float) -> float:
    """MCP-roll angle phi3 (deg): equal arc length on wheel and joint."""
    return phi2 * r3 / r_roll


def coupling_from_pip(dx2: float, r2: float) -> float:
    """Coupling-cable change dx1 caused by a PIP drive shortening dx2."""
    l2 = pip_link_length(dx2, r2)
    return coupling_displacement(l2, pip_half_angle(l2, r2))


# Finger and hand maps


def finger_cables(
    wheels: Sequence[float], geometry: FingerGeometry
) -> CableDisplacement:
    """Cable changes for wheel angles (phi_pip, phi_pitch, phi_roll)."""
    phi_pip, phi_pitch, _ = wheels
    try:
        dx2 = cable_displacement(phi_pip, geometry.r3)
        dx1 = coupling_from_pip(dx2, geometry.r2)
    except KinematicRangeError as e:
        raise e.with_joint("pip") from None
    try:
        dx_pitch = cable_displacement(phi_pitch, geometry.r3)
    except KinematicRangeError as e:
        raise e.with_joint("pitch") from None
    return CableDisplacement(dx2=dx2, dx1=dx1, dx_pitch=dx_pitch)


def forward_finger(wheels: Sequence[float], geometry: FingerGeometry) -> FingerPose:
    """
    Joint angles of one finger from its three wheel angles.

    Each pose component depends only on its own wheel: theta1 and theta2 on
    the PIP wheel, theta3 on the pitch wheel, phi3 on the roll wheel.

    Args:
        wheels: (phi_pip, phi_pitch, phi_roll) in deg
        geometry: finger geometry

    Raises:
        KinematicRangeError: naming the joint whose domain is violated
    """
    cables = finger_cables(wheels, geometry)
    theta2 = pip_angle(cables.dx2, geometry.r2)
    theta1 = dip_angle(cables.dx1, geometry.r1)
    theta3 = mcp_pitch_angle(cables.dx_pitch, geometry.r_pitch)
    phi3 = mcp_roll_angle(wheels[2], geometry.r3, geometry.r_roll)
    if abs(phi3) > geometry.roll_limit + RANGE_TOL:
        raise KinematicRangeError(
            "roll", f"roll angle {phi3:.6g} deg beyond +/-{geometry.roll_limit:g} deg"
        )
    return FingerPose(theta1=theta1, theta2=theta2, theta3=theta3, phi3=phi3)


def finger_wheels(
    wheel_angles: Sequence[float], config: HandConfig, finger: int
) -> Tuple[float, float, float]:
    """Pick (phi_pip, phi_pitch, phi_roll) of one finger out of the shaft angles."""
    shafts = config.shaft_map.assignment()
    return tuple(
        wheel_angles[shafts[f"f{finger}.{joint}"]] for joint in ("pip", "pitch", "roll")
    )


def hand_pose(
    wheel_angles: Sequence[float], config: HandConfig, strict: bool = True
) -> Tuple[FingerPose, ...]:
    """
    Poses of all fingers from the nine shaft wheel angles.

    Args:
        wheel_angles: wheel angle per shaft (deg)
        config: hand configuration
        strict: when False a PIP or pitch wheel below zero is treated as a
            slack cable and its joint rests at zero

    Raises:
        KinematicRangeError: joint named as ``f<finger>.<joint>``
    """
    poses = []
    for finger in range(FINGERS):
        wheels = finger_wheels(wheel_angles, config, finger)
        if not strict:
            wheels = (max(wheels[0], 0.0), max(wheels[1], 0.0), wheels[2])
        try:
            poses.append(forward_finger(wheels, config.geometry))
        except KinematicRangeError as e:
            raise e.with_joint(f"f{finger}.{e.joint}") from None
    return tuple(poses)


def joint_angles_with(
    poses: Iterable[FingerPose], disturbance: Sequence[Sequence[float]]
) -> Tuple[Tuple[float, float, float, float], ...]:
    """Reported joint angles: kinematic pose plus disturbance offset."""
    return tuple(
        tuple(angle + offset for angle, offset in zip(pose.as_tuple(), offsets))
        for pose, offsets in zip(poses, disturbance)
    )


def refresh_joints(state: HandState, config: HandConfig) -> HandState:
    """Recompute ``joint_angles`` of a state from its wheels and disturbance."""
    poses = hand_pose(state.wheel_angle, config, strict=False)
    return state.copy_with(joint_angles=joint_angles_with(poses, state.disturbance))


# Inverse maps


def inverse_pip(theta2: float, r2: float, r3: float) -> float:
    """
    Wheel angle (deg) that bends the PIP joint to ``theta2``.

    Closed-form inverse of the rolling-joint map:
    dx2 = 2*r2*(1 - sqrt(1 - sin(theta2/2))), phi1 = dx2 / r3.
    """
    return _inverse_rolling(theta2, r2, r3, "pip")


def inverse_pitch(theta3: float, r_pitch: float, r3: float) -> float:
    """Wheel angle (deg) that bends the MCP-pitch joint to ``theta3``."""
    return _inverse_rolling(theta3, r_pitch, r3, "pitch")


def _inverse_rolling(theta: float, r: float, r3: float, joint: str) -> float:
    if theta < -RANGE_TOL or theta > 180.0 + RANGE_TOL:
        raise KinematicRangeError(joint, f"target {theta:.6g} deg outside [0, 180] deg")
    half = np.radians(min(max(theta, 0.0), 180.0)) / 2.0
    dx = 2.0 * r * (1.0 - np.sqrt(1.0 - np.sin(half)))
    return float(np.degrees(dx / r3))


def inverse_roll(
    phi3: float, r3: float, r_roll: float, roll_limit: float = 180.0
) -> float:
    """Wheel angle (deg) that rolls the MCP joint to ``phi3``."""
    if abs(phi3) > roll_limit + RANGE_TOL:
        raise KinematicRangeError(
            "roll", f"target {phi3:.6g} deg beyond +/-{roll_limit:g} deg"
        )
    return phi3 * r_roll / r3


def _pip_shortening_for_coupling(dx1: float, r2: float) -> float:
    """
    Invert dx1(dx2) on its rising branch.

    With t = (2 - dx2/r2)^2 the coupling change is
    dx1 = (r2/2) * sqrt(1 + t) * (4 - t); squaring gives the cubic
    t^3 - 7t^2 + 8t + 16 - (2*dx1/r2)^2 = 0, solved for t in [2/3, 4].
    """
    if dx1 <= 0.0:
        return 0.0
    q = (2.0 * dx1 / r2) ** 2
    roots = np.roots([1.0, -7.0, 8.0, 16.0 - q])
    # double roots at either end of the branch come back with tiny imaginary parts
    real = [
        float(root.real) for root in roots
        if abs(root.imag) < 1e-6 and _COUPLING_PEAK_T - 1e-6 <= root.real <= 4.0 + 1e-6
    ]
    if not real:
        raise KinematicRangeError(
            "dip", f"coupling change {dx1:.6g} mm is beyond what the PIP can produce"
        )
    # the rising branch has the largest t (smallest PIP shortening)
    t = min(max(real), 4.0)
    return r2 * (2.0 - np.sqrt(max(t, _COUPLING_PEAK_T)))


def coupling_peak(r2: float) -> float:
    """Largest coupling-cable change the PIP can produce (mm)."""
    t = _COUPLING_PEAK_T
    return 0.5 * r2 * np.sqrt(1.0 + t) * (4.0 - t)


def pip_wheel_limit(geometry: FingerGeometry) -> float:
    """
    Largest PIP wheel angle (deg) keeping the coupled DIP in its domain.

    The DIP map is valid while dx1 <= 2*r1 and strictly increasing while the
    coupling change still grows with the PIP, whichever ends first.
    """
    target = min(2.0 * geometry.r1, coupling_peak(geometry.r2))
    dx2 = min(_pip_shortening_for_coupling(target, geometry.r2), 2.0 * geometry.r2)
    return float(np.degrees(dx2 / geometry.r3))


def inverse_dip(theta1: float, geometry: FingerGeometry) -> float:
    """PIP wheel angle (deg) that brings the coupled DIP joint to ``theta1``."""
    if theta1 < -RANGE_TOL or theta1 > 180.0 + RANGE_TOL:
        raise KinematicRangeError(
            "dip", f"target {theta1:.6g} deg outside [0, 180] deg"
        )
    half = np.radians(min(max(theta1, 0.0), 180.0)) / 2.0
    dx1 = 2.0 * geometry.r1 * (1.0 - np.sqrt(1.0 - np.sin(half)))
    peak = coupling_peak(geometry.r2)
    if dx1 > peak + RANGE_TOL:
        raise KinematicRangeError(
            "dip", f"target {theta1:.6g} deg needs more coupling than the PIP gives"
        )
    dx2 = _pip_shortening_for_coupling(min(dx1, peak), geometry.r2)
    return float(np.degrees(dx2 / geometry.r3))


# Regression and curves


def fit_linear_map(samples: Sequence[Tuple[float, float]]) -> LinearFit:
    """
    Ordinary least squares fit of theta against wheel angle.

    A target with zero variance is fitted exactly by a horizontal line and
    gets R^2 = 1.

    Raises:
        DegenerateFitError: fewer than two samples or a single abscissa
    """
    data = np.asarray(samples, dtype=float)
    if data.ndim != 2 or data.shape[0] < 2 or data.shape[1] != 2:
        raise DegenerateFitError("need at least two (x, y) samples")
    x, y = data[:, 0], data[:, 1]
    xc = x - x.mean()
    sxx = float(np.dot(xc, xc))
    if sxx == 0.0:
        raise DegenerateFitError("all samples share the same wheel angle")
    yc = y - y.mean()
    slope = float(np.dot(xc, yc)) / sxx
    intercept = float(y.mean() - slope * x.mean())

    ss_tot = float(np.dot(yc, yc))
    if ss_tot == 0.0:
        return LinearFit(
            slope=slope, intercept=intercept, r_squared=1.0, samples=len(x)
        )
    residuals = y - (slope * x + intercept)
    r_squared = 1.0 - float(np.dot(residuals, residuals)) / ss_tot
    r_squared = min(max(r_squared, 0.0), 1.0)
    return LinearFit(
        slope=slope, intercept=intercept, r_squared=r_squared, samples=len(x)
    )


def joint_curves(geometry: FingerGeometry, samples: int = 101) -> np.ndarray:
    """
    Joint angles against winding-wheel angle, one row per sample.

    Columns are phi1, theta1, theta2, theta3 (deg). theta1 and theta2 follow
    the PIP wheel, theta3 the pitch wheel turned by the same angle. The sweep
    stops where the first of the three maps leaves its domain.
    """
    pitch_limit = float(np.degrees(2.0 * geometry.r_pitch / geometry.r3))
    phi_max = min(pip_wheel_limit(geometry), pitch_limit)
    rows = []
    for phi in np.linspace(0.0, phi_max, samples):
        pose = forward_finger((phi, phi, 0.0), geometry)
        rows.append((phi, pose.theta1, pose.theta2, pose.theta3))
    return np.array(rows)


def roll_curve(geometry: FingerGeometry, samples: int = 101) -> np.ndarray:
    """MCP-roll angle against its wheel angle over the positive roll range."""
    phi_max = inverse_roll(geometry.roll_limit, geometry.r3, geometry.r_roll,
                           geometry.roll_limit)
    phis = np.linspace(0.0, phi_max, samples)
    return np.column_stack(
        [phis, [mcp_roll_angle(p, geometry.r3, geometry.r_roll) for p in phis]]
    )


def fit_joint_curves(
    geometry: FingerGeometry, samples: int = 100
) -> Dict[str, LinearFit]:
    """
    Linear fits of each joint against its wheel over the joint's 0-90 deg range.

    theta2 is sampled from the PIP rolling joint alone, so its range reaches
    90 deg even though the coupled DIP cable runs out near 80 deg. theta1 is
    cut at that wheel limit.

    Args:
        geometry: finger geometry
        samples: wheel angles per fit, evenly spaced from zero

    Returns:
        Fits keyed ``theta1``, ``theta2``, ``theta3`` and ``phi3``
    """
    r3 = geometry.r3

    def dip(phi):
        return forward_finger((phi, 0.0, 0.0), geometry).theta1

    def pip(phi):
        return pip_angle(cable_displacement(phi, r3), geometry.r2)

    def pitch(phi):
        return forward_finger((0.0, phi, 0.0), geometry).theta3

    ranges = {
        "theta1": (dip, min(inverse_dip(90.0, geometry), pip_wheel_limit(geometry))),
        "theta2": (pip, inverse_pip(90.0, geometry.r2, r3)),
        "theta3": (pitch, inverse_pitch(90.0, geometry.r_pitch, r3)),
    }
    fits = {}
    for name, (joint, phi_max) in ranges.items():
        phis = np.linspace(0.0, phi_max, samples)
        fits[name] = fit_linear_map([(phi, joint(float(phi))) for phi in phis])
    fits["phi3"] = fit_linear_map(roll_curve(geometry, samples))
    logger.debug("joint fits: %s", fits)
    return fits


def fingertip_position(pose: FingerPose, geometry: FingerGeometry) -> np.ndarray:
    """
    Cartesian fingertip position (mm) in the finger base frame.

    z points out of the palm along the straight finger; flexion (theta3 at
    the MCP, then theta2, then theta1) bends the planar chain towards +y, and
    the roll angle phi3 turns that plane about z.
    """
    l1, l2, l3 = geometry.link_lengths
    a1 = np.radians(pose.theta3)
    a2 = a1 + np.radians(pose.theta2)
    a3 = a2 + np.radians(pose.theta1)
    y = l1 * np.sin(a1) + l2 * np.sin(a2) + l3 * np.sin(a3)
    z = l1 * np.cos(a1) + l2 * np.cos(a2) + l3 * np.cos(a3)
    roll = np.radians(pose.phi3)
    rotation = np.array([
        [np.cos(roll), -np.sin(roll), 0.0],
        [np.sin(roll), np.cos(roll), 0.0],
        [0.0, 0.0, 1.0],
    ])
    return rotation @ np.array([0.0, y, z])
