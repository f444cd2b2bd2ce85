"""Kinesthetic rendering stack for a gantry-mounted haptic machine.

Core layers: serial-chain kinematics/dynamics (chain, machine, chainfile),
joint acceleration limits (limits), a lexicographic QP solver (hqp), the
admittance renderer built on top of it (renderer, ppu), and a batch/interactive
runtime with plant simulation, logging, and telemetry (plant, scenario,
runtime, telemetry, report, cli).
"""

__version__ = "0.1.0"

from .chain import (
    ChainState,
    DHRow,
    KinematicChain,
    Pose,
    Wrench,
    forward_kinematics,
    jacobian,
    jacobian_dot,
    joint_space_dynamics,
)
from .chainfile import load_chain, parse_chain, save_chain
from .errors import (
    ChainFileError,
    ContractViolation,
    DegenerateOrientationError,
    HapticRigError,
    UnreachableTargetError,
)
from .machine import aux_arm_configuration, inverse_kinematics_hg

__all__ = [
    "ChainState",
    "DHRow",
    "KinematicChain",
    "Pose",
    "Wrench",
    "forward_kinematics",
    "jacobian",
    "jacobian_dot",
    "joint_space_dynamics",
    "load_chain",
    "parse_chain",
    "save_chain",
    "inverse_kinematics_hg",
    "aux_arm_configuration",
    "HapticRigError",
    "ContractViolation",
    "ChainFileError",
    "UnreachableTargetError",
    "DegenerateOrientationError",
    "__version__",
]
