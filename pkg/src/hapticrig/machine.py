"""Closed-form geometry of the gantry haptic machine.

The machine is an 8-row chain: two prismatic gantry axes (the moving
carriage) followed by a 6-joint arm.  Joints 3 and onward form a SCARA-like
planar pair, a vertical drop, and a 3-axis wrist, which admits a closed-form
inverse given the carriage position as a free parameter.

World frame is z-up; the carriage translates in world x/y.  With the arm at
q=0 the hand sits at (L1+L2, 0, -DROP-L4-L6) relative to the carriage.
"""

from __future__ import annotations

import numpy as np

from .chain import KinematicChain, Pose
from .errors import ContractViolation, DegenerateOrientationError, UnreachableTargetError

# link lengths (m), fixed by the machine geometry
L1 = 0.53   # first planar link
L2 = 0.67   # second planar link
DROP = 0.75  # vertical drop from the planar pair to the elbow
L4 = 0.42   # elbow link
L6 = 0.12   # hand flange offset

ELBOW_FRAME = 5  # chain frame at the elbow point (after the drop)

# heading of the hand's radial offset: psi = q1 + q2 + q3 + pi
PSI_OFFSET = np.pi

ELBOW_UP = "elbow-up"
ELBOW_DOWN = "elbow-down"

_ROT_X_PI = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    w = (-a + np.pi) % (2.0 * np.pi)
    return np.pi - w


def singularity_coordinate(q_m) -> float:
    """q4+q5: the wrist fold angle; 0 and pi are singular."""
    q_m = np.asarray(q_m, dtype=float).reshape(6)
    return float(q_m[3] + q_m[4])


def inverse_kinematics_hg(target: Pose, ppu_hint, branch: str = ELBOW_UP
                          ) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form inverse kinematics of the full machine.

    The carriage position is a redundancy parameter and is taken verbatim
    from ppu_hint; the 6 arm angles are solved so the hand frame matches
    target.  branch picks the sign of the planar knee angle.

    Raises UnreachableTargetError when no arm configuration exists for the
    given carriage position, DegenerateOrientationError when the target
    orientation puts the wrist fold at 0 or pi where the decomposition
    (and the real machine) is singular.
    """
    if branch not in (ELBOW_UP, ELBOW_DOWN):
        raise ContractViolation(f"unknown branch {branch!r}")
    q_p = np.asarray(ppu_hint, dtype=float).reshape(2).copy()

    # orientation: R_target = Rz(psi) Ry(-sigma) Rz(-q6) Rx(pi)
    Rw = target.rotation @ _ROT_X_PI  # strip the hand-frame flip
    cb = min(1.0, max(-1.0, Rw[2, 2]))
    sb2 = Rw[0, 2] ** 2 + Rw[1, 2] ** 2  # = sin^2 b
    if np.sqrt(sb2) < 1e-7:
        raise DegenerateOrientationError(
            "wrist fold angle at 0 or pi: orientation decomposition is singular")
    # zyz factors Rz(a) Ry(b) Rz(c) with the b < 0 branch, so sigma = -b > 0
    b = -np.arccos(cb)
    psi = np.arctan2(-Rw[1, 2], -Rw[0, 2])
    q6 = -np.arctan2(-Rw[2, 1], Rw[2, 0])
    sigma = -b

    # height fixes q4 (canonical non-negative branch), then q5
    c4 = (-DROP - L6 * np.cos(sigma) - target.position[2]) / L4
    if abs(c4) > 1.0 + 1e-12:
        raise UnreachableTargetError(
            f"target height {target.position[2]:.4f} m outside the elbow reach")
    q4 = np.arccos(min(1.0, max(-1.0, c4)))
    q5 = sigma - q4

    # radial hand offset in the horizontal plane
    w = L4 * np.sin(q4) + L6 * np.sin(sigma)

    # planar 2R problem for the carriage-relative wrist point
    px = target.position[0] - q_p[0] - w * np.cos(psi)
    py = target.position[1] - q_p[1] - w * np.sin(psi)
    r2 = px * px + py * py
    c2 = (r2 - L1 * L1 - L2 * L2) / (2.0 * L1 * L2)
    if abs(c2) > 1.0 + 1e-12:
        raise UnreachableTargetError(
            "planar wrist point outside the reach of the two planar links")
    c2 = min(1.0, max(-1.0, c2))
    q2 = np.arccos(c2)
    if branch == ELBOW_DOWN:
        q2 = -q2
    q1 = np.arctan2(py, px) - np.arctan2(L2 * np.sin(q2), L1 + L2 * np.cos(q2))
    q1 = wrap_angle(q1)
    q3 = wrap_angle(psi - PSI_OFFSET - q1 - q2)

    return q_p, np.array([q1, q2, q3, q4, q5, q6])


def aux_arm_configuration(q_m) -> np.ndarray:
    """Preferred arm posture used by the carriage recentering controller.

    Keeps the hand heading (q1+q2+q3) and the wrist angles, sets the planar
    knee to pi/2 for best manipulability and the third angle so the elbow
    link's ground projection lines up with the planar pair.  q1 absorbs the
    heading, wrapped nearest the current q1 since joint 1 is continuous.
    """
    q_m = np.asarray(q_m, dtype=float).reshape(6)
    q2_aux = np.pi / 2.0
    q3_aux = -np.arctan(L1 / L2)
    heading = q_m[0] + q_m[1] + q_m[2]
    q1_aux = heading - q2_aux - q3_aux
    q1_aux = q_m[0] + wrap_angle(q1_aux - q_m[0])
    out = q_m.copy()
    out[0] = q1_aux
    out[1] = q2_aux
    out[2] = q3_aux
    return out


def split_full_state(q_full) -> tuple[np.ndarray, np.ndarray]:
    """(q_p, q_m) blocks of the 8-vector gantry+arm state."""
    q_full = np.asarray(q_full, dtype=float).reshape(8)
    return q_full[:2].copy(), q_full[2:].copy()


def join_full_state(q_p, q_m) -> np.ndarray:
    q_p = np.asarray(q_p, dtype=float).reshape(2)
    q_m = np.asarray(q_m, dtype=float).reshape(6)
    return np.concatenate([q_p, q_m])


def machine_home_pose(chain: KinematicChain) -> Pose:
    """Hand pose at the all-zero configuration (regression anchor)."""
    from .chain import forward_kinematics
    return forward_kinematics(chain, np.zeros(chain.n))
