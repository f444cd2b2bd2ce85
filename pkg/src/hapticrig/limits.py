"""Admissible joint-acceleration intervals under position/velocity/acceleration
ratings for a time-discrete controller with sample time dt.

Three aggregate flavors feed the rendering task stack:
  bounds_A: intervals 1 (position) cap 2 (velocity); acceleration unbounded
  bounds_B: intervals 1-4 (adds viability and the plain rating)
  bounds_C: soft second-order Taylor position bound that tolerates and
            recovers from violations

Empty intersections (possible only for non-viable numeric states) collapse to
the admissible singleton nearest the interval-1 set, flagged so callers can
log the event.  Infinite ratings disable the corresponding intervals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .chain import KinematicChain
from .errors import ContractViolation


@dataclass(frozen=True)
class JointRatings:
    """Ratings of a single joint plus the controller sample time."""

    q_min: float
    q_max: float
    dq_max: float
    ddq_max: float
    dt: float

    def __post_init__(self):
        if not self.q_min < self.q_max:
            raise ContractViolation("JointRatings: q_min must be < q_max")
        if not self.dq_max > 0 or not self.ddq_max > 0:
            raise ContractViolation("JointRatings: velocity/acceleration ratings must be > 0")
        if not self.dt > 0:
            raise ContractViolation("JointRatings: dt must be > 0")


@dataclass(frozen=True)
class AccInterval:
    """One admissible acceleration interval; empty flags no solution,
    fallback flags the documented singleton substitution."""

    lb: float
    ub: float
    empty: bool = False
    fallback: bool = False

    def __post_init__(self):
        if not self.empty and not self.lb <= self.ub:
            raise ContractViolation("AccInterval: lb must be <= ub unless empty")

    def contains(self, a: float, tol: float = 0.0) -> bool:
        return (not self.empty) and (self.lb - tol <= a <= self.ub + tol)


@dataclass(frozen=True)
class ChainRatings:
    """Vectorized ratings of a whole chain (arrays aligned with joints)."""

    q_min: np.ndarray
    q_max: np.ndarray
    dq_max: np.ndarray
    ddq_max: np.ndarray
    dt: float

    @staticmethod
    def of(chain: KinematicChain, dt: float) -> "ChainRatings":
        if not dt > 0:
            raise ContractViolation("dt must be > 0")
        return ChainRatings(chain.q_min.copy(), chain.q_max.copy(),
                            chain.dq_max.copy(), chain.ddq_max.copy(), float(dt))

    def with_lock(self, joint: int, position: float) -> "ChainRatings":
        """Ratings with one joint pinned: q_min = q_max = lock position."""
        q_min = self.q_min.copy()
        q_max = self.q_max.copy()
        q_min[joint] = position
        q_max[joint] = position
        return ChainRatings(q_min, q_max, self.dq_max, self.ddq_max, self.dt)

    @property
    def n(self) -> int:
        return self.q_min.shape[0]


def _arr(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=float))


def _scal(r: JointRatings):
    return (np.array([r.q_min]), np.array([r.q_max]),
            np.array([r.dq_max]), np.array([r.ddq_max]), r.dt)


def acc_bounds_from_pos_limits(q: float, dq: float, r: JointRatings) -> AccInterval:
    """Interval 1: no next-step position violation, no committed overshoot."""
    qmin, qmax, dqm, ddqm, dt = _scal(r)
    lb, ub = K.interval_pos_k(_arr(q), _arr(dq), qmin, qmax, ddqm, dt)
    if lb[0] > ub[0]:
        return AccInterval(float(lb[0]), float(ub[0]), empty=True)
    return AccInterval(float(lb[0]), float(ub[0]))


def acc_bounds_from_viability(q: float, dq: float, r: JointRatings) -> AccInterval:
    """Interval 3: the next state can still brake inside both limits."""
    qmin, qmax, dqm, ddqm, dt = _scal(r)
    lb, ub, empty = K.interval_viab_k(_arr(q), _arr(dq), qmin, qmax, ddqm, dt)
    if empty[0] or lb[0] > ub[0]:
        return AccInterval(0.0, 0.0, empty=True)
    return AccInterval(float(lb[0]), float(ub[0]))


def bounds_A(q: float, dq: float, r: JointRatings) -> AccInterval:
    qmin, qmax, dqm, ddqm, dt = _scal(r)
    lb, ub, flag = K.bounds_a_k(_arr(q), _arr(dq), qmin, qmax, dqm, ddqm, dt)
    return AccInterval(float(lb[0]), float(ub[0]), fallback=bool(flag[0]))


def bounds_B(q: float, dq: float, r: JointRatings) -> AccInterval:
    qmin, qmax, dqm, ddqm, dt = _scal(r)
    lb, ub, flag = K.bounds_b_k(_arr(q), _arr(dq), qmin, qmax, dqm, ddqm, dt)
    return AccInterval(float(lb[0]), float(ub[0]), fallback=bool(flag[0]))


def bounds_C(q: float, dq: float, r: JointRatings) -> AccInterval:
    qmin, qmax, _, _, dt = _scal(r)
    lb, ub = K.bounds_c_k(_arr(q), _arr(dq), qmin, qmax, dt)
    return AccInterval(float(lb[0]), float(ub[0]))


def clamp_to_viable(q: float, dq: float, r: JointRatings) -> tuple[float, float]:
    qmin, qmax, dqm, ddqm, _ = _scal(r)
    qc, dqc = K.clamp_viable_k(_arr(q), _arr(dq), qmin, qmax, dqm, ddqm)
    return float(qc[0]), float(dqc[0])


# vectorized forms used by the renderer (thin wrappers over the same kernels,
# so scalar and vector paths agree bit for bit)

def bounds_A_vec(q, dq, r: ChainRatings):
    return K.bounds_a_k(_arr(q), _arr(dq), r.q_min, r.q_max,
                        r.dq_max, r.ddq_max, r.dt)


def bounds_B_vec(q, dq, r: ChainRatings):
    return K.bounds_b_k(_arr(q), _arr(dq), r.q_min, r.q_max,
                        r.dq_max, r.ddq_max, r.dt)


def bounds_C_vec(q, dq, r: ChainRatings):
    return K.bounds_c_k(_arr(q), _arr(dq), r.q_min, r.q_max, r.dt)


def clamp_to_viable_vec(q, dq, r: ChainRatings):
    return K.clamp_viable_k(_arr(q), _arr(dq), r.q_min, r.q_max,
                            r.dq_max, r.ddq_max)
