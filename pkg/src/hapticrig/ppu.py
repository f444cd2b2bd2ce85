"""Carriage (prepositioning unit) velocity setpoint.

The two gantry axes are velocity-controlled and do not take part in the
per-cycle optimization; instead a P-controller recenters the arm into a
well-conditioned posture.  The key identity: the hand's world xy position
equals carriage position plus a pure function of the arm angles, so moving
the carriage by the xy difference between the current and the preferred arm
posture keeps the hand in place.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain import KinematicChain, forward_kinematics
from .errors import ContractViolation
from .machine import aux_arm_configuration, join_full_state


@dataclass(frozen=True)
class PpuConfig:
    q_lb: np.ndarray
    q_ub: np.ndarray
    dt: float
    k_ppu: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "q_lb", np.asarray(self.q_lb, dtype=float).reshape(2))
        object.__setattr__(self, "q_ub", np.asarray(self.q_ub, dtype=float).reshape(2))
        if not np.all(self.q_lb < self.q_ub):
            raise ContractViolation("PpuConfig: q_lb must be < q_ub")
        if not self.k_ppu > 0 or not self.dt > 0:
            raise ContractViolation("PpuConfig: k_ppu and dt must be > 0")

    @staticmethod
    def from_chain(chain: KinematicChain, dt: float, k_ppu: float = 2.0) -> "PpuConfig":
        return PpuConfig(chain.q_min[:2], chain.q_max[:2], dt, k_ppu)


def ppu_reference(q_m, q_p, chain: KinematicChain) -> np.ndarray:
    """Carriage position that recenters the arm without moving the hand.

    Evaluates the hand xy at the current arm posture and at the preferred
    auxiliary posture (same heading and wrist), and shifts the carriage by
    the difference.
    """
    q_m = np.asarray(q_m, dtype=float).reshape(6)
    q_p = np.asarray(q_p, dtype=float).reshape(2)
    x_now = forward_kinematics(chain, join_full_state(q_p, q_m)).position
    q_aux = aux_arm_configuration(q_m)
    x_aux = forward_kinematics(chain, join_full_state(q_p, q_aux)).position
    return q_p + x_now[:2] - x_aux[:2]


def ppu_command(q_p_ref, q_p, cfg: PpuConfig) -> np.ndarray:
    """P-control velocity setpoint, clamped so one constant-velocity step
    cannot pass the travel limits."""
    q_p_ref = np.asarray(q_p_ref, dtype=float).reshape(2)
    q_p = np.asarray(q_p, dtype=float).reshape(2)
    cmd = cfg.k_ppu * (q_p_ref - q_p)
    lo = (cfg.q_lb - q_p) / cfg.dt
    hi = (cfg.q_ub - q_p) / cfg.dt
    return np.minimum(np.maximum(cmd, lo), hi)
