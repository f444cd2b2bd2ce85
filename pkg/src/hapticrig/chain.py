"""Serial-chain kinematics and dynamics.

A chain is a list of classic DH rows (theta, d, a, alpha) with per-joint
ratings and per-link inertial data, plus a fixed base pose placing chain
frame 0 in the world.  All public results (poses, Jacobians, dynamics) are
expressed in world coordinates.

Conventions:
  * frame i+1 sits after row i; joint i actuates about/along z of frame i
  * revolute rows: theta = q[i] + theta_offset, d fixed
  * prismatic rows: d = q[i] + d_offset, theta fixed
  * the inertial record of row i describes the link body attached to
    frame i+1 (mass, com and inertia tensor in that frame)
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import ContractViolation

REVOLUTE = "revolute"
PRISMATIC = "prismatic"

_KIND_CODE = {REVOLUTE: K.REVOLUTE, PRISMATIC: K.PRISMATIC}


def _as_vec(x, n: int, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=float).reshape(-1)
    if v.shape[0] != n:
        raise ContractViolation(f"{name}: expected length {n}, got {v.shape[0]}")
    return v


@dataclass(frozen=True)
class DHRow:
    """One DH row plus the joint/link data riding along with it."""

    name: str
    kind: str  # revolute | prismatic
    theta_offset: float = 0.0
    d: float = 0.0
    a: float = 0.0
    alpha: float = 0.0
    q_min: float = -np.inf
    q_max: float = np.inf
    dq_max: float = np.inf
    ddq_max: float = np.inf
    mass: float = 1.0
    com: tuple[float, float, float] = (0.0, 0.0, 0.0)
    inertia: tuple[float, ...] = (1e-6, 1e-6, 1e-6, 0.0, 0.0, 0.0)  # xx yy zz xy xz yz

    def __post_init__(self):
        if self.kind not in _KIND_CODE:
            raise ContractViolation(f"joint {self.name}: unknown kind {self.kind!r}")
        for v, nm in ((self.theta_offset, "theta_offset"), (self.d, "d"),
                      (self.a, "a"), (self.alpha, "alpha")):
            if not np.isfinite(v):
                raise ContractViolation(f"joint {self.name}: {nm} must be finite")
        if not self.q_min < self.q_max:
            raise ContractViolation(f"joint {self.name}: q_min must be < q_max")
        if not self.dq_max > 0 or not self.ddq_max > 0:
            raise ContractViolation(f"joint {self.name}: velocity/acceleration ratings must be > 0")
        if not self.mass > 0:
            raise ContractViolation(f"joint {self.name}: mass must be > 0")

    def inertia_matrix(self) -> np.ndarray:
        xx, yy, zz, xy, xz, yz = self.inertia
        return np.array([[xx, xy, xz], [xy, yy, yz], [xz, yz, zz]], dtype=float)


@dataclass(frozen=True)
class Pose:
    """Position + rotation matrix of a frame, world coordinates."""

    position: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        object.__setattr__(self, "rotation", R)
        if np.max(np.abs(R @ R.T - np.eye(3))) > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ContractViolation("Pose rotation is not orthonormal with det +1")

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.position
        return T


@dataclass(frozen=True)
class Wrench:
    """Stacked force (N) and torque (N m)."""

    force: np.ndarray
    torque: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.force, dtype=float).reshape(3)
        t = np.asarray(self.torque, dtype=float).reshape(3)
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(t))):
            raise ContractViolation("Wrench entries must be finite")
        object.__setattr__(self, "force", f)
        object.__setattr__(self, "torque", t)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.force, self.torque])

    @staticmethod
    def zero() -> "Wrench":
        return Wrench(np.zeros(3), np.zeros(3))

    @staticmethod
    def from_array(w) -> "Wrench":
        w = np.asarray(w, dtype=float).reshape(6)
        return Wrench(w[:3], w[3:])


@dataclass
class ChainState:
    """Joint positions and velocities of one chain."""

    q: np.ndarray
    dq: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(-1).copy()
        self.dq = np.asarray(self.dq, dtype=float).reshape(-1).copy()
        if self.q.shape != self.dq.shape:
            raise ContractViolation("ChainState: q and dq lengths differ")

    def copy(self) -> "ChainState":
        return ChainState(self.q.copy(), self.dq.copy())


class KinematicChain:
    """Immutable serial chain; packs itself into kernel arrays once."""

    def __init__(self, name: str, rows: list[DHRow] | tuple[DHRow, ...],
                 gravity=(0.0, 0.0, -9.81),
                 base_position=(0.0, 0.0, 0.0),
                 base_rotation=None):
        self.name = str(name)
        self.rows: tuple[DHRow, ...] = tuple(rows)
        if not self.rows:
            raise ContractViolation("chain needs at least one row")
        self.gravity = np.asarray(gravity, dtype=float).reshape(3)
        self.base_position = np.asarray(base_position, dtype=float).reshape(3)
        if base_rotation is None:
            base_rotation = np.eye(3)
        self.base_rotation = np.asarray(base_rotation, dtype=float).reshape(3, 3)
        if np.max(np.abs(self.base_rotation @ self.base_rotation.T - np.eye(3))) > 1e-9:
            raise ContractViolation("base_rotation is not orthonormal")
        n = len(self.rows)
        self.kinds = np.array([_KIND_CODE[r.kind] for r in self.rows], dtype=np.int64)
        self.th_off = np.array([r.theta_offset for r in self.rows], dtype=float)
        self.d_off = np.array([r.d for r in self.rows], dtype=float)
        self.a_len = np.array([r.a for r in self.rows], dtype=float)
        self.ca = np.cos(np.array([r.alpha for r in self.rows], dtype=float))
        self.sa = np.sin(np.array([r.alpha for r in self.rows], dtype=float))
        self.q_min = np.array([r.q_min for r in self.rows], dtype=float)
        self.q_max = np.array([r.q_max for r in self.rows], dtype=float)
        self.dq_max = np.array([r.dq_max for r in self.rows], dtype=float)
        self.ddq_max = np.array([r.ddq_max for r in self.rows], dtype=float)
        self.mass = np.array([r.mass for r in self.rows], dtype=float)
        self.com = np.array([r.com for r in self.rows], dtype=float).reshape(n, 3)
        self.inertia = np.stack([r.inertia_matrix() for r in self.rows]).reshape(n, 3, 3)
        for r in self.rows:
            I = r.inertia_matrix()
            if np.max(np.abs(I - I.T)) > 1e-12 or np.min(np.linalg.eigvalsh(I)) <= 0:
                raise ContractViolation(f"joint {r.name}: inertia tensor must be symmetric positive definite")

    @property
    def n(self) -> int:
        return len(self.rows)

    @property
    def joint_names(self) -> list[str]:
        return [r.name for r in self.rows]

    def frames(self, q) -> tuple[np.ndarray, np.ndarray]:
        """All frame rotations (n+1,3,3) and origins (n+1,3), world."""
        q = _as_vec(q, self.n, "q")
        return K.chain_frames(self.kinds, self.th_off, self.d_off, self.a_len,
                              self.ca, self.sa, self.base_rotation,
                              self.base_position, q)


def forward_kinematics(chain: KinematicChain, q, frame_index: int | None = None) -> Pose:
    """Pose of a link frame (default: end effector) in world coordinates."""
    if frame_index is None:
        frame_index = chain.n
    if not 0 <= frame_index <= chain.n:
        raise ContractViolation(f"frame_index must be in 0..{chain.n}")
    R, p = chain.frames(q)
    return Pose(p[frame_index].copy(), R[frame_index].copy())


def jacobian(chain: KinematicChain, q, frame_index: int | None = None,
             point_offset=None) -> np.ndarray:
    """Geometric Jacobian (6,n): rows 1-3 linear, 4-6 angular, world frame.

    point_offset (in the selected frame) moves the attached point; columns of
    joints beyond frame_index are zero.
    """
    if frame_index is None:
        frame_index = chain.n
    if not 0 <= frame_index <= chain.n:
        raise ContractViolation(f"frame_index must be in 0..{chain.n}")
    q = _as_vec(q, chain.n, "q")
    R, p = chain.frames(q)
    pt = p[frame_index].copy()
    if point_offset is not None:
        pt = pt + R[frame_index] @ np.asarray(point_offset, dtype=float).reshape(3)
    return K.jacobian_k(chain.kinds, R, p, frame_index, pt)


def jacobian_dot(chain: KinematicChain, q, dq, frame_index: int | None = None,
                 point_offset=None) -> np.ndarray:
    """Time derivative of jacobian along (q, dq)."""
    if frame_index is None:
        frame_index = chain.n
    if not 0 <= frame_index <= chain.n:
        raise ContractViolation(f"frame_index must be in 0..{chain.n}")
    q = _as_vec(q, chain.n, "q")
    dq = _as_vec(dq, chain.n, "dq")
    R, p = chain.frames(q)
    pt = p[frame_index].copy()
    if point_offset is not None:
        pt = pt + R[frame_index] @ np.asarray(point_offset, dtype=float).reshape(3)
    J = K.jacobian_k(chain.kinds, R, p, frame_index, pt)
    w, v = K.frame_rates(chain.kinds, R, p, dq)
    return K.jacobian_dot_k(chain.kinds, R, p, w, v, dq, frame_index, pt, J)


def joint_space_dynamics(chain: KinematicChain, q, dq) -> tuple[np.ndarray, np.ndarray]:
    """Joint-space inertia M and nonlinear torque c with M qdd + c = tau."""
    q = _as_vec(q, chain.n, "q")
    dq = _as_vec(dq, chain.n, "dq")
    R, p = chain.frames(q)
    zeros = np.zeros(chain.n)
    c = K.rnea_k(chain.kinds, R, p, dq, zeros, chain.mass, chain.com,
                 chain.inertia, chain.gravity)
    M = K.crba_k(chain.kinds, R, p, chain.mass, chain.com, chain.inertia)
    return M, c


def rotation_log(Rm: np.ndarray) -> np.ndarray:
    """Rotation vector (axis * angle) of a rotation matrix."""
    return K.rotlog(np.asarray(Rm, dtype=float).reshape(3, 3))


def rotation_rpy(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Rz(yaw) Ry(pitch) Rx(roll)."""
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    Rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1.0]])
    Ry = np.array([[cp, 0, sp], [0, 1.0, 0], [-sp, 0, cp]])
    Rx = np.array([[1.0, 0, 0], [0, cr, -sr], [0, sr, cr]])
    return Rz @ Ry @ Rx
