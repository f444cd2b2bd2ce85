"""Constraint-consistent admittance rendering.

Each control cycle assembles an 11-priority task stack over the decision
vector

    x = (ddq_m(6), ddq_a(n), alpha_a(n), alpha_m(6), alpha_sing(1),
         alpha_ee(3), alpha_elbow(3)),           N = 19 + 2n

and solves it lexicographically:

     1  EQ  end-effector acceleration coupling (carriage acceleration is a
            known disturbance on the right-hand side)
     2  IQ  manipulator bounds_A
     3  IQ  singularity band via bounds_C on the wrist fold angle
     4  IQ  end-effector Cartesian box via bounds_C + differential kinematics
     5  IQ  elbow Cartesian box, same construction
     6  IQ  admittance bounds_A (lock-modified)
     7  IQ  manipulator bounds_B
     8  IQ  admittance bounds_B (lock-modified)
     9  EQ  admittance dynamics in acceleration space with the mapped
            constraint torque
    10  IQ  per-entry constraint force ranges from the previous active set
    11  EQ  all constraint forces to zero

The digital twin then behaves dynamically consistent in free space and like
a physically constrained mechanism at any active limit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from . import hqp
from .chain import ChainState, KinematicChain, Pose, Wrench, forward_kinematics
from .errors import ContractViolation
from .limits import ChainRatings
from .machine import ELBOW_FRAME

TASK_LABELS = ("coupling", "manip_A", "sing_C", "ee_C", "elbow_C",
               "adm_A", "manip_B", "adm_B", "dynamics", "alpha_range",
               "alpha_zero")


@dataclass(frozen=True)
class SpringDrive:
    """Torsional/linear return spring on one DT joint."""

    joint: int
    stiffness: float
    rest: float = 0.0

    def __post_init__(self):
        if self.stiffness < 0:
            raise ContractViolation("SpringDrive: stiffness must be >= 0")


@dataclass(frozen=True)
class ReleaseWhen:
    """One release predicate of a lock rule: joint q above/below threshold."""

    joint: int
    op: str  # "above" | "below"
    threshold: float

    def __post_init__(self):
        if self.op not in ("above", "below"):
            raise ContractViolation("ReleaseWhen: op must be 'above' or 'below'")

    def holds(self, q: np.ndarray) -> bool:
        v = q[self.joint]
        return v > self.threshold if self.op == "above" else v < self.threshold


@dataclass(frozen=True)
class LockRule:
    """A joint held at lock_position unless any release predicate holds."""

    joint: int
    lock_position: float
    release: tuple[ReleaseWhen, ...] = ()

    def locked(self, q: np.ndarray) -> bool:
        return not any(r.holds(q) for r in self.release)


@dataclass(frozen=True)
class AdmittanceSpec:
    """Digital-twin dynamics drivers and limit data."""

    chain: KinematicChain
    w_ref: Wrench
    dissipation: np.ndarray            # per-joint viscous coefficients
    drives: tuple[SpringDrive, ...]
    lock_rules: tuple[LockRule, ...]
    ratings: ChainRatings

    def __post_init__(self):
        n = self.chain.n
        D = np.asarray(self.dissipation, dtype=float).reshape(-1)
        if D.shape[0] != n:
            raise ContractViolation("AdmittanceSpec: dissipation length != n")
        if np.any(D < 0):
            raise ContractViolation("AdmittanceSpec: dissipation must be >= 0")
        object.__setattr__(self, "dissipation", D)
        object.__setattr__(self, "drives", tuple(self.drives))
        object.__setattr__(self, "lock_rules", tuple(self.lock_rules))
        for dr in self.drives:
            if not 0 <= dr.joint < n:
                raise ContractViolation("AdmittanceSpec: drive joint out of range")
        for lr in self.lock_rules:
            if not 0 <= lr.joint < n:
                raise ContractViolation("AdmittanceSpec: lock joint out of range")
        if self.ratings.n != n:
            raise ContractViolation("AdmittanceSpec: ratings length != n")

    @staticmethod
    def plain(chain: KinematicChain, dt: float, w_ref: Wrench | None = None,
              dissipation=None, drives=(), lock_rules=()) -> "AdmittanceSpec":
        D = np.zeros(chain.n) if dissipation is None else dissipation
        return AdmittanceSpec(chain, w_ref or Wrench.zero(), D, tuple(drives),
                              tuple(lock_rules), ChainRatings.of(chain, dt))

    def drive_torque(self, q: np.ndarray) -> np.ndarray:
        tau = np.zeros(self.chain.n)
        for dr in self.drives:
            tau[dr.joint] += dr.stiffness * (dr.rest - q[dr.joint])
        return tau

    def evaluate_locks(self, q: np.ndarray) -> np.ndarray:
        locked = np.zeros(self.chain.n, dtype=bool)
        for lr in self.lock_rules:
            if lr.locked(q):
                locked[lr.joint] = True
        return locked

    def lock_position(self, joint: int) -> float:
        for lr in self.lock_rules:
            if lr.joint == joint:
                return lr.lock_position
        raise ContractViolation(f"no lock rule for joint {joint}")


@dataclass(frozen=True)
class RendererConfig:
    """Gains, protection bands, and numerical knobs of the render loop."""

    dt: float = 1e-3
    kP_tran: float = 400.0
    kD_tran: float = 40.0
    kP_rot: float = 400.0
    kD_rot: float = 40.0
    s_min: float = 0.35
    s_max: float = float(np.pi) - 0.35
    ee_box_lb: np.ndarray = field(default_factory=lambda: np.array([-3.6, -4.0, -1.30]))
    ee_box_ub: np.ndarray = field(default_factory=lambda: np.array([3.6, 4.0, -0.20]))
    elbow_box_lb: np.ndarray = field(default_factory=lambda: np.array([-3.6, -4.0, -1.30]))
    elbow_box_ub: np.ndarray = field(default_factory=lambda: np.array([3.6, 4.0, -0.40]))
    eps_active: float = 1e-6
    eps_jinv: float = 1e-6
    margin: float = 1e-3        # inward shrink of the band/boxes
    hqp: hqp.HqpConfig = field(default_factory=hqp.HqpConfig)

    def __post_init__(self):
        for name in ("ee_box_lb", "ee_box_ub", "elbow_box_lb", "elbow_box_ub"):
            object.__setattr__(self, name,
                               np.asarray(getattr(self, name), dtype=float).reshape(3))
        if not (0.0 < self.s_min < self.s_max < np.pi):
            raise ContractViolation("RendererConfig: need 0 < s_min < s_max < pi")
        if np.any(self.ee_box_lb >= self.ee_box_ub) or np.any(self.elbow_box_lb >= self.elbow_box_ub):
            raise ContractViolation("RendererConfig: boxes must be non-degenerate")
        if min(self.kP_tran, self.kD_tran, self.kP_rot, self.kD_rot) < 0:
            raise ContractViolation("RendererConfig: gains must be >= 0")
        if not self.dt > 0:
            raise ContractViolation("RendererConfig: dt must be > 0")


@dataclass(frozen=True)
class ActiveLimitSet:
    """Which inequality rows held with equality in the previous solution."""

    adm_upper: np.ndarray
    adm_lower: np.ndarray
    manip_upper: np.ndarray
    manip_lower: np.ndarray
    sing_upper: bool
    sing_lower: bool
    ee_upper: np.ndarray
    ee_lower: np.ndarray
    elbow_upper: np.ndarray
    elbow_lower: np.ndarray
    locked: np.ndarray

    @staticmethod
    def all_inactive(n: int) -> "ActiveLimitSet":
        z6 = np.zeros(6, dtype=bool)
        z3 = np.zeros(3, dtype=bool)
        zn = np.zeros(n, dtype=bool)
        return ActiveLimitSet(zn, zn.copy(), z6, z6.copy(), False, False,
                              z3, z3.copy(), z3.copy(), z3.copy(), zn.copy())

    def counts(self) -> int:
        return int(np.sum(self.adm_upper) + np.sum(self.adm_lower)
                   + np.sum(self.manip_upper) + np.sum(self.manip_lower)
                   + self.sing_upper + self.sing_lower
                   + np.sum(self.ee_upper) + np.sum(self.ee_lower)
                   + np.sum(self.elbow_upper) + np.sum(self.elbow_lower))


@dataclass(frozen=True)
class ConstraintForces:
    alpha_adm: np.ndarray
    alpha_manip: np.ndarray
    alpha_sing: float
    alpha_ee: np.ndarray
    alpha_elbow: np.ndarray


@dataclass(frozen=True)
class PlantFeedback:
    """Measured machine-side quantities entering one render cycle."""

    q_p: np.ndarray
    dq_p: np.ndarray
    ddq_p: np.ndarray           # estimated carriage acceleration
    hand_pose: Pose
    hand_twist: np.ndarray      # measured hand twist (6,), world frame

    def __post_init__(self):
        object.__setattr__(self, "q_p", np.asarray(self.q_p, dtype=float).reshape(2))
        object.__setattr__(self, "dq_p", np.asarray(self.dq_p, dtype=float).reshape(2))
        object.__setattr__(self, "ddq_p", np.asarray(self.ddq_p, dtype=float).reshape(2))
        object.__setattr__(self, "hand_twist",
                           np.asarray(self.hand_twist, dtype=float).reshape(6))


@dataclass
class RendererState:
    adm: ChainState
    manip_ref: ChainState
    locked: np.ndarray
    active: ActiveLimitSet
    prev_ddq_m: np.ndarray
    prev_ddq_a: np.ndarray
    last_solution: hqp.HqpSolution | None = None

    @staticmethod
    def initial(q_a, dq_a, q_m, dq_m, n: int) -> "RendererState":
        return RendererState(ChainState(q_a, dq_a), ChainState(q_m, dq_m),
                             np.zeros(n, dtype=bool), ActiveLimitSet.all_inactive(n),
                             np.zeros(6), np.zeros(int(n)))


@dataclass(frozen=True)
class RendererOutput:
    ddq_m: np.ndarray
    ddq_a: np.ndarray
    state: RendererState
    forces: ConstraintForces
    slack_norms: np.ndarray     # per-task residuals (11,)
    solver_us: float
    solver_failed: bool
    fallback_rows: int          # count of empty-interval fallbacks this cycle
    solution: hqp.HqpSolution | None


def sync_term(hand_pose: Pose, hand_twist, dt_pose: Pose, dt_twist,
              config: RendererConfig) -> np.ndarray:
    """PD correction pulling the two end effectors together.

    Translational rows act on the position error, rotational rows on the
    axis-angle of the relative rotation, averaged into the world frame.
    """
    hand_twist = np.asarray(hand_twist, dtype=float).reshape(6)
    dt_twist = np.asarray(dt_twist, dtype=float).reshape(6)
    s = np.empty(6)
    s[:3] = (config.kP_tran * (dt_pose.position - hand_pose.position)
             + config.kD_tran * (dt_twist[:3] - hand_twist[:3]))
    C_rel = hand_pose.rotation.T @ dt_pose.rotation
    rgam = K.rotlog(C_rel)
    s[3:] = (config.kP_rot * 0.5 * (dt_pose.rotation + hand_pose.rotation) @ rgam
             + config.kD_rot * (dt_twist[3:] - hand_twist[3:]))
    return s


def damped_transpose_inverse(J: np.ndarray, eps_rel: float = 1e-6,
                             cond_threshold: float = 1e8) -> tuple[np.ndarray, bool]:
    """(J^T)^-1 via SVD; Tikhonov-damped only when badly conditioned."""
    U, sv, Vt = np.linalg.svd(J)
    smax = sv[0]
    if smax <= 0.0:
        return np.zeros_like(J), True
    damped = sv[-1] <= smax / cond_threshold
    if damped:
        lam2 = (eps_rel * smax) ** 2
        inv = sv / (sv * sv + lam2)
    else:
        inv = 1.0 / sv
    return (U * inv) @ Vt, damped


def map_constraint_torques(J_a, J_m, J_elbow, r_elbow_axis,
                           forces: ConstraintForces,
                           eps_jinv: float = 1e-6) -> np.ndarray:
    """Numeric post-solve evaluation of the total constraint torque."""
    B_a, B_m, B_s, B_e, B_el, _ = constraint_torque_blocks(
        J_a, J_m, J_elbow, r_elbow_axis, eps_jinv)
    return (B_a @ forces.alpha_adm + B_m @ forces.alpha_manip
            + B_s[:, 0] * forces.alpha_sing + B_e @ forces.alpha_ee
            + B_el @ forces.alpha_elbow)


def constraint_torque_blocks(J_a, J_m, J_elbow, r_elbow_axis,
                             eps_jinv: float = 1e-6):
    """Coefficient blocks mapping each constraint force group to DT torque.

    Returns (B_a(n,n), B_m(n,6), B_sing(n,1), B_ee(n,3), B_elbow(n,3),
    damped_flag).  J_elbow is the 6-column manipulator block of the elbow
    point Jacobian.
    """
    n = J_a.shape[1]
    JmT_inv, damped = damped_transpose_inverse(J_m, eps_jinv)
    JaT_JmTinv = J_a.T @ JmT_inv
    B_a = np.eye(n)
    B_m = JaT_JmTinv
    B_s = (J_a[3:6, :].T @ np.asarray(r_elbow_axis, dtype=float).reshape(3)).reshape(n, 1)
    B_e = J_a[0:3, :].T
    B_el = JaT_JmTinv @ J_elbow[0:3, :].T
    return B_a, B_m, B_s, B_e, B_el, damped


class Renderer:
    """Owns per-cycle workspaces; drive from exactly one control loop."""

    def __init__(self, machine: KinematicChain, spec: AdmittanceSpec,
                 config: RendererConfig | None = None):
        if machine.n != 8:
            raise ContractViolation("machine chain must have 8 rows (2 carriage + 6 arm)")
        self.machine = machine
        self.spec = spec
        self.config = config or RendererConfig()
        if abs(self.spec.ratings.dt - self.config.dt) > 1e-15:
            raise ContractViolation("AdmittanceSpec ratings dt != renderer dt")
        n = spec.chain.n
        self.n = n
        self.N = 19 + 2 * n
        # decision vector slices
        self.sl_ddq_m = slice(0, 6)
        self.sl_ddq_a = slice(6, 6 + n)
        self.sl_a_adm = slice(6 + n, 6 + 2 * n)
        self.sl_a_man = slice(6 + 2 * n, 12 + 2 * n)
        self.i_a_sing = 12 + 2 * n
        self.sl_a_ee = slice(13 + 2 * n, 16 + 2 * n)
        self.sl_a_el = slice(16 + 2 * n, 19 + 2 * n)
        self.n_alpha = 13 + n
        # machine (arm rows only) ratings at the cycle time
        self.mach_ratings = ChainRatings(
            machine.q_min[2:].copy(), machine.q_max[2:].copy(),
            machine.dq_max[2:].copy(), machine.ddq_max[2:].copy(), self.config.dt)
        # packed stack layout
        me = [6, 0, 0, 0, 0, 0, 0, 0, n, 0, self.n_alpha]
        mi = [0, 6, 1, 3, 3, n, 6, n, 0, self.n_alpha, 0]
        self.ae_off = np.zeros(12, dtype=np.int64)
        self.ci_off = np.zeros(12, dtype=np.int64)
        for i in range(11):
            self.ae_off[i + 1] = self.ae_off[i] + me[i]
            self.ci_off[i + 1] = self.ci_off[i] + mi[i]
        self.A_all = np.zeros((int(self.ae_off[-1]), self.N))
        self.b_all = np.zeros(int(self.ae_off[-1]))
        self.C_all = np.zeros((int(self.ci_off[-1]), self.N))
        self.flb_all = np.zeros(int(self.ci_off[-1]))
        self.fub_all = np.zeros(int(self.ci_off[-1]))
        # static selector rows
        r = int(self.ci_off[1])
        for j in range(6):                      # task 2: manipulator bounds_A
            self.C_all[r + j, j] = 1.0
        r = int(self.ci_off[2])                 # task 3: wrist fold selector
        self.C_all[r, 3] = 1.0
        self.C_all[r, 4] = 1.0
        r = int(self.ci_off[5])                 # task 6: admittance bounds_A
        for j in range(n):
            self.C_all[r + j, 6 + j] = 1.0
        r = int(self.ci_off[6])                 # task 7: manipulator bounds_B
        for j in range(6):
            self.C_all[r + j, j] = 1.0
        r = int(self.ci_off[7])                 # task 8: admittance bounds_B
        for j in range(n):
            self.C_all[r + j, 6 + j] = 1.0
        r = int(self.ci_off[9])                 # task 10: force ranges
        for j in range(self.n_alpha):
            self.C_all[r + j, 6 + n + j] = 1.0
        r = int(self.ae_off[8])                 # task 9: ddq_a identity block
        for j in range(n):
            self.A_all[r + j, 6 + j] = 1.0
        r = int(self.ae_off[10])                # task 11: all forces to zero
        for j in range(self.n_alpha):
            self.A_all[r + j, 6 + n + j] = 1.0
        # effective protection bands (margin applied inward)
        m = self.config.margin
        self.sing_lb = self.config.s_min + m
        self.sing_ub = self.config.s_max - m
        self.ee_lb = self.config.ee_box_lb + m
        self.ee_ub = self.config.ee_box_ub - m
        self.el_lb = self.config.elbow_box_lb + m
        self.el_ub = self.config.elbow_box_ub - m
        if self.sing_lb >= self.sing_ub or np.any(self.ee_lb >= self.ee_ub) \
                or np.any(self.el_lb >= self.el_ub):
            raise ContractViolation("margin leaves no admissible band")
        self._scratch_rat = None  # lock-modified admittance ratings cache

    # ------------------------------------------------------------------
    def locked_ratings(self, locked: np.ndarray) -> ChainRatings:
        r = self.spec.ratings
        if not np.any(locked):
            return r
        q_min = r.q_min.copy()
        q_max = r.q_max.copy()
        for j in np.nonzero(locked)[0]:
            pos = self.spec.lock_position(int(j))
            q_min[j] = pos
            q_max[j] = pos
        return ChainRatings(q_min, q_max, r.dq_max, r.ddq_max, r.dt)

    def initial_state(self, q_a=None, dq_a=None, q_m=None, dq_m=None) -> RendererState:
        n = self.n
        q_a = np.zeros(n) if q_a is None else np.asarray(q_a, dtype=float).copy()
        dq_a = np.zeros(n) if dq_a is None else np.asarray(dq_a, dtype=float).copy()
        q_m = np.zeros(6) if q_m is None else np.asarray(q_m, dtype=float).copy()
        dq_m = np.zeros(6) if dq_m is None else np.asarray(dq_m, dtype=float).copy()
        st = RendererState.initial(q_a, dq_a, q_m, dq_m, n)
        st.locked = self.spec.evaluate_locks(q_a)
        return st

    # ------------------------------------------------------------------
    def _geometry(self, q_p, dq_p, q_m, dq_m, q_a, dq_a):
        """All Jacobian/dynamics data for one cycle."""
        mach = self.machine
        qf = np.concatenate([q_p, q_m])
        dqf = np.concatenate([dq_p, dq_m])
        Rm, pm = K.chain_frames(mach.kinds, mach.th_off, mach.d_off, mach.a_len,
                                mach.ca, mach.sa, mach.base_rotation,
                                mach.base_position, qf)
        w_r, v_r = K.frame_rates(mach.kinds, Rm, pm, dqf)
        J_full = K.jacobian_k(mach.kinds, Rm, pm, 8, pm[8])
        Jd_full = K.jacobian_dot_k(mach.kinds, Rm, pm, w_r, v_r, dqf, 8, pm[8], J_full)
        J_el = K.jacobian_k(mach.kinds, Rm, pm, ELBOW_FRAME, pm[ELBOW_FRAME])
        Jd_el = K.jacobian_dot_k(mach.kinds, Rm, pm, w_r, v_r, dqf, ELBOW_FRAME,
                                 pm[ELBOW_FRAME], J_el)
        r_elbow = Rm[5][:, 2].copy()
        dt = self.spec.chain
        Ra, pa = K.chain_frames(dt.kinds, dt.th_off, dt.d_off, dt.a_len,
                                dt.ca, dt.sa, dt.base_rotation, dt.base_position, q_a)
        w_a, v_a = K.frame_rates(dt.kinds, Ra, pa, dq_a)
        J_a = K.jacobian_k(dt.kinds, Ra, pa, dt.n, pa[dt.n])
        Jd_a = K.jacobian_dot_k(dt.kinds, Ra, pa, w_a, v_a, dq_a, dt.n, pa[dt.n], J_a)
        M_a = K.crba_k(dt.kinds, Ra, pa, dt.mass, dt.com, dt.inertia)
        c_a = K.rnea_k(dt.kinds, Ra, pa, dq_a, np.zeros(dt.n), dt.mass, dt.com,
                       dt.inertia, dt.gravity)
        return {
            "J_p": J_full[:, :2], "J_m": J_full[:, 2:],
            "Jd_p": Jd_full[:, :2], "Jd_m": Jd_full[:, 2:],
            "Jel_p": J_el[:, :2], "Jel_m": J_el[:, 2:],
            "Jdel_p": Jd_el[:, :2], "Jdel_m": Jd_el[:, 2:],
            "x_ee": pm[8].copy(), "x_elbow": pm[ELBOW_FRAME].copy(),
            "r_elbow": r_elbow,
            "dt_pose": Pose(pa[dt.n].copy(), Ra[dt.n].copy()),
            "J_a": J_a, "Jd_a": Jd_a, "M_a": M_a, "c_a": c_a,
        }

    def _range_row(self, idx: int, upper: bool, lower: bool, locked: bool):
        r = int(self.ci_off[9]) + idx
        if locked:
            self.flb_all[r] = -np.inf
            self.fub_all[r] = np.inf
        elif upper and not lower:
            self.flb_all[r] = -np.inf
            self.fub_all[r] = 0.0
        elif lower and not upper:
            self.flb_all[r] = 0.0
            self.fub_all[r] = np.inf
        else:
            self.flb_all[r] = 0.0
            self.fub_all[r] = 0.0

    def assemble(self, wrench: Wrench, plant: PlantFeedback, q_m, dq_m,
                 q_a, dq_a, locked: np.ndarray, active: ActiveLimitSet,
                 geo: dict) -> int:
        """Fill the packed stack arrays in place; returns fallback-row count."""
        cfg = self.config
        n = self.n
        fallbacks = 0
        # task 1: coupling equality
        s = sync_term(plant.hand_pose, plant.hand_twist, geo["dt_pose"],
                      geo["J_a"] @ dq_a, cfg)
        self.A_all[0:6, 0:6] = geo["J_m"]
        self.A_all[0:6, 6:6 + n] = -geo["J_a"]
        self.b_all[0:6] = (s - geo["J_p"] @ plant.ddq_p - geo["Jd_p"] @ plant.dq_p
                           - geo["Jd_m"] @ dq_m + geo["Jd_a"] @ dq_a)
        # task 2 / 7: manipulator bounds
        lbA, ubA, flA = K.bounds_a_k(q_m, dq_m, self.mach_ratings.q_min,
                                     self.mach_ratings.q_max, self.mach_ratings.dq_max,
                                     self.mach_ratings.ddq_max, cfg.dt)
        r = int(self.ci_off[1])
        self.flb_all[r:r + 6] = lbA
        self.fub_all[r:r + 6] = ubA
        lbB, ubB, flB = K.bounds_b_k(q_m, dq_m, self.mach_ratings.q_min,
                                     self.mach_ratings.q_max, self.mach_ratings.dq_max,
                                     self.mach_ratings.ddq_max, cfg.dt)
        r = int(self.ci_off[6])
        self.flb_all[r:r + 6] = lbB
        self.fub_all[r:r + 6] = ubB
        fallbacks += int(np.sum(flA) + np.sum(flB))
        # task 3: wrist fold band (bounds_C on the virtual sum joint)
        q_s = q_m[3] + q_m[4]
        dq_s = dq_m[3] + dq_m[4]
        lbS, ubS = K.bounds_c_k(np.array([q_s]), np.array([dq_s]),
                                np.array([self.sing_lb]), np.array([self.sing_ub]),
                                cfg.dt)
        r = int(self.ci_off[2])
        self.flb_all[r] = lbS[0]
        self.fub_all[r] = ubS[0]
        # task 4: ee box
        dx_ee = geo["J_p"][0:3] @ plant.dq_p + geo["J_m"][0:3] @ dq_m
        lbE, ubE = K.bounds_c_k(geo["x_ee"], dx_ee, self.ee_lb, self.ee_ub, cfg.dt)
        known = (geo["J_p"][0:3] @ plant.ddq_p + geo["Jd_p"][0:3] @ plant.dq_p
                 + geo["Jd_m"][0:3] @ dq_m)
        r = int(self.ci_off[3])
        self.C_all[r:r + 3, 0:6] = geo["J_m"][0:3]
        self.flb_all[r:r + 3] = lbE - known
        self.fub_all[r:r + 3] = ubE - known
        # task 5: elbow box
        dx_el = geo["Jel_p"][0:3] @ plant.dq_p + geo["Jel_m"][0:3] @ dq_m
        lbL, ubL = K.bounds_c_k(geo["x_elbow"], dx_el, self.el_lb, self.el_ub, cfg.dt)
        known = (geo["Jel_p"][0:3] @ plant.ddq_p + geo["Jdel_p"][0:3] @ plant.dq_p
                 + geo["Jdel_m"][0:3] @ dq_m)
        r = int(self.ci_off[4])
        self.C_all[r:r + 3, 0:6] = geo["Jel_m"][0:3]
        self.flb_all[r:r + 3] = lbL - known
        self.fub_all[r:r + 3] = ubL - known
        # tasks 6 / 8: admittance bounds (lock-modified ratings)
        rat = self.locked_ratings(locked)
        lba, uba, fla = K.bounds_a_k(q_a, dq_a, rat.q_min, rat.q_max,
                                     rat.dq_max, rat.ddq_max, cfg.dt)
        r = int(self.ci_off[5])
        self.flb_all[r:r + n] = lba
        self.fub_all[r:r + n] = uba
        lbb, ubb, flb = K.bounds_b_k(q_a, dq_a, rat.q_min, rat.q_max,
                                     rat.dq_max, rat.ddq_max, cfg.dt)
        r = int(self.ci_off[7])
        self.flb_all[r:r + n] = lbb
        self.fub_all[r:r + n] = ubb
        fallbacks += int(np.sum(fla) + np.sum(flb))
        # task 9: admittance dynamics
        B_a, B_m, B_s, B_e, B_el, _ = constraint_torque_blocks(
            geo["J_a"], geo["J_m"], geo["Jel_m"], geo["r_elbow"], cfg.eps_jinv)
        Minv = np.linalg.inv(geo["M_a"])
        r = int(self.ae_off[8])
        self.A_all[r:r + n, self.sl_a_adm] = -Minv @ B_a
        self.A_all[r:r + n, self.sl_a_man] = -Minv @ B_m
        self.A_all[r:r + n, self.i_a_sing:self.i_a_sing + 1] = -Minv @ B_s
        self.A_all[r:r + n, self.sl_a_ee] = -Minv @ B_e
        self.A_all[r:r + n, self.sl_a_el] = -Minv @ B_el
        tau_dri = self.spec.drive_torque(q_a)
        tau_dis = self.spec.dissipation * dq_a
        rhs = (geo["J_a"].T @ (wrench.as_array() - self.spec.w_ref.as_array())
               - tau_dis + tau_dri - geo["c_a"])
        self.b_all[r:r + n] = Minv @ rhs
        # task 10: constraint force ranges from the previous active set
        for j in range(n):
            self._range_row(j, bool(active.adm_upper[j]), bool(active.adm_lower[j]),
                            bool(locked[j]))
        for j in range(6):
            self._range_row(n + j, bool(active.manip_upper[j]),
                            bool(active.manip_lower[j]), False)
        self._range_row(n + 6, active.sing_upper, active.sing_lower, False)
        for j in range(3):
            self._range_row(n + 7 + j, bool(active.ee_upper[j]),
                            bool(active.ee_lower[j]), False)
        for j in range(3):
            self._range_row(n + 10 + j, bool(active.elbow_upper[j]),
                            bool(active.elbow_lower[j]), False)
        # task 11 RHS is static zero
        return fallbacks

    def build_task_stack(self, wrench: Wrench, plant: PlantFeedback,
                         state: RendererState) -> hqp.Hierarchy:
        """Assemble the stack for the given inputs as an immutable Hierarchy."""
        rat = self.locked_ratings(state.locked)
        q_a, dq_a = K.clamp_viable_k(state.adm.q, state.adm.dq, rat.q_min,
                                     rat.q_max, rat.dq_max, rat.ddq_max)
        q_m, dq_m = K.clamp_viable_k(state.manip_ref.q, state.manip_ref.dq,
                                     self.mach_ratings.q_min, self.mach_ratings.q_max,
                                     self.mach_ratings.dq_max, self.mach_ratings.ddq_max)
        geo = self._geometry(plant.q_p, plant.dq_p, q_m, dq_m, q_a, dq_a)
        self.assemble(wrench, plant, q_m, dq_m, q_a, dq_a, state.locked,
                      state.active, geo)
        tasks = []
        for p in range(11):
            a0, a1 = int(self.ae_off[p]), int(self.ae_off[p + 1])
            c0, c1 = int(self.ci_off[p]), int(self.ci_off[p + 1])
            tasks.append(hqp.Task(p + 1, self.A_all[a0:a1].copy(), self.b_all[a0:a1].copy(),
                                  self.C_all[c0:c1].copy(), self.flb_all[c0:c1].copy(),
                                  self.fub_all[c0:c1].copy(), TASK_LABELS[p]))
        return hqp.Hierarchy(tuple(tasks), self.N)

    # ------------------------------------------------------------------
    def _detect_active(self, x: np.ndarray, v_all: np.ndarray,
                       locked: np.ndarray) -> ActiveLimitSet:
        eps = self.config.eps_active
        n = self.n
        cv = self.C_all @ x + v_all
        up = np.zeros(self.C_all.shape[0], dtype=bool)
        lo = np.zeros(self.C_all.shape[0], dtype=bool)
        c0, c1 = int(self.ci_off[1]), int(self.ci_off[8])  # rows of tasks 2..8
        for r in range(c0, c1):
            hit_u = np.isfinite(self.fub_all[r]) and cv[r] >= self.fub_all[r] - eps
            hit_l = np.isfinite(self.flb_all[r]) and cv[r] <= self.flb_all[r] + eps
            if hit_u and hit_l:
                # unlocked singleton: attribute the nearer side (upper on ties)
                if (self.fub_all[r] - cv[r]) <= (cv[r] - self.flb_all[r]):
                    hit_l = False
                else:
                    hit_u = False
            up[r] = hit_u
            lo[r] = hit_l

        def rows(task: int) -> slice:
            return slice(int(self.ci_off[task]), int(self.ci_off[task + 1]))

        manip_u = up[rows(1)] | up[rows(6)]
        manip_l = lo[rows(1)] | lo[rows(6)]
        adm_u = up[rows(5)] | up[rows(7)]
        adm_l = lo[rows(5)] | lo[rows(7)]
        sing_u = bool(up[rows(2)][0])
        sing_l = bool(lo[rows(2)][0])
        ee_u = up[rows(3)].copy()
        ee_l = lo[rows(3)].copy()
        el_u = up[rows(4)].copy()
        el_l = lo[rows(4)].copy()
        # a locked joint pins both sides by construction
        for j in np.nonzero(locked)[0]:
            adm_u[j] = True
            adm_l[j] = True
        # keep upper&lower exclusive for unlocked joints
        both = adm_u & adm_l & ~locked
        if np.any(both):
            adm_l[both] = False
        return ActiveLimitSet(adm_u, adm_l, manip_u, manip_l, sing_u, sing_l,
                              ee_u, ee_l, el_u, el_l, locked.copy())

    def step(self, wrench: Wrench, plant: PlantFeedback,
             state: RendererState) -> RendererOutput:
        """One render cycle: clamp, assemble, solve, integrate, re-evaluate."""
        cfg = self.config
        n = self.n
        rat = self.locked_ratings(state.locked)
        q_a, dq_a = K.clamp_viable_k(state.adm.q, state.adm.dq, rat.q_min,
                                     rat.q_max, rat.dq_max, rat.ddq_max)
        q_m, dq_m = K.clamp_viable_k(state.manip_ref.q, state.manip_ref.dq,
                                     self.mach_ratings.q_min, self.mach_ratings.q_max,
                                     self.mach_ratings.dq_max, self.mach_ratings.ddq_max)
        geo = self._geometry(plant.q_p, plant.dq_p, q_m, dq_m, q_a, dq_a)
        fallbacks = self.assemble(wrench, plant, q_m, dq_m, q_a, dq_a,
                                  state.locked, state.active, geo)
        t0 = time.perf_counter()
        x, w_all, v_all, resid, ranks, nulldims, fails, eps_used, qp_iters = \
            K.hqp_solve_k(self.N, 11, self.A_all, self.ae_off, self.b_all,
                          self.C_all, self.ci_off, self.flb_all, self.fub_all,
                          cfg.hqp.rank_tol, cfg.hqp.eps_h, cfg.hqp.eps_z,
                          cfg.hqp.eps_f, cfg.hqp.max_qp_iter)
        solver_us = (time.perf_counter() - t0) * 1e6
        failed = bool(np.any(fails != 0)) or not bool(np.all(np.isfinite(x)))
        if failed:
            # decay toward rest rather than emitting an untrusted solution
            decay = float(np.exp(-0.2))  # dt / (5 dt)
            ddq_m = state.prev_ddq_m * decay
            ddq_a = state.prev_ddq_a * decay
            forces = ConstraintForces(np.zeros(n), np.zeros(6), 0.0,
                                      np.zeros(3), np.zeros(3))
            solution = None
            active = state.active
        else:
            ddq_m = x[self.sl_ddq_m].copy()
            ddq_a = x[self.sl_ddq_a].copy()
            forces = ConstraintForces(x[self.sl_a_adm].copy(), x[self.sl_a_man].copy(),
                                      float(x[self.i_a_sing]), x[self.sl_a_ee].copy(),
                                      x[self.sl_a_el].copy())
            w = tuple(w_all[self.ae_off[i]:self.ae_off[i + 1]].copy() for i in range(11))
            v = tuple(v_all[self.ci_off[i]:self.ci_off[i + 1]].copy() for i in range(11))
            solution = hqp.HqpSolution(x.copy(), w, v, resid, ranks, nulldims,
                                       fails, eps_used, qp_iters, solver_us)
            active = self._detect_active(x, v_all, state.locked)
        # constant-acceleration integration of both sides
        dt = cfg.dt
        q_a2 = q_a + dt * dq_a + 0.5 * dt * dt * ddq_a
        dq_a2 = dq_a + dt * ddq_a
        q_m2 = q_m + dt * dq_m + 0.5 * dt * dt * ddq_m
        dq_m2 = dq_m + dt * ddq_m
        locked2 = self.spec.evaluate_locks(q_a2)
        active = replace(active, locked=locked2.copy())
        new_state = RendererState(ChainState(q_a2, dq_a2), ChainState(q_m2, dq_m2),
                                  locked2, active, ddq_m.copy(), ddq_a.copy(),
                                  solution)
        return RendererOutput(ddq_m, ddq_a, new_state, forces,
                              resid.copy(), solver_us, failed, fallbacks, solution)


def detect_active_limits(renderer: Renderer, solution: hqp.HqpSolution,
                         hierarchy: hqp.Hierarchy, eps_active: float,
                         locked: np.ndarray) -> ActiveLimitSet:
    """Standalone form of the active-set detection for a dumped pair.

    Rebuilds the row scan from the hierarchy blocks (labels fix the layout).
    """
    by_label = {t.label: t for t in hierarchy.tasks}
    x = solution.x_star
    n = renderer.n

    def flags(label: str, v: np.ndarray):
        t = by_label[label]
        cv = t.C @ x + v
        u = np.isfinite(t.f_ub) & (cv >= t.f_ub - eps_active)
        l = np.isfinite(t.f_lb) & (cv <= t.f_lb + eps_active)
        both = u & l
        if np.any(both):
            nearer_up = (t.f_ub - cv) <= (cv - t.f_lb)
            l[both & nearer_up] = False
            u[both & ~nearer_up] = False
        return u, l

    mu1, ml1 = flags("manip_A", solution.v[1])
    mu2, ml2 = flags("manip_B", solution.v[6])
    su, sl_ = flags("sing_C", solution.v[2])
    eu, el = flags("ee_C", solution.v[3])
    lu, ll = flags("elbow_C", solution.v[4])
    au1, al1 = flags("adm_A", solution.v[5])
    au2, al2 = flags("adm_B", solution.v[7])
    adm_u = au1 | au2
    adm_l = al1 | al2
    for j in np.nonzero(locked)[0]:
        adm_u[j] = True
        adm_l[j] = True
    both = adm_u & adm_l & ~locked
    adm_l[both] = False
    return ActiveLimitSet(adm_u, adm_l, mu1 | mu2, ml1 | ml2,
                          bool(su[0]), bool(sl_[0]), eu, el, lu, ll,
                          np.asarray(locked, dtype=bool).copy())
