"""Simulated machine-side plant: carriage, arm tracking, and the sanitizer.

The renderer produces a reference trajectory for the six arm joints and a
velocity setpoint for the two carriage axes.  This module turns those
commands into "measured" machine states at two fidelities:

- ideal: the arm snaps to the reference exactly; the carriage follows its
  velocity setpoint through a first-order lag (solved exactly per step).
- dynamic: the arm is integrated as a rigid-body system driven by a
  computed-torque PD tracker (optionally with gravity feedforward); the
  carriage again follows the lag model and enters the arm dynamics as a
  known base acceleration.

The sanitizer is the last line of defense: commands that push a joint
further past an already-reached position limit are zeroed, never scaled up.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain import KinematicChain, joint_space_dynamics
from .errors import ContractViolation
from .machine import join_full_state

IDEAL = "ideal"
DYNAMIC = "dynamic"


@dataclass(frozen=True)
class PlantConfig:
    """Fidelity and tracking parameters of the simulated machine."""

    fidelity: str = IDEAL
    kp: float = 400.0            # arm tracking stiffness (1/s^2)
    kd: float = 40.0             # arm tracking damping (1/s)
    gravity_feedforward: bool = True
    ppu_lag: float = 0.05        # carriage velocity time constant (s)
    sigma_wrench: float = 0.0    # measurement noise, wrench channels
    sigma_q: float = 0.0         # measurement noise, joint positions
    sigma_dq: float = 0.0        # measurement noise, joint velocities
    dt: float = 1e-3

    def __post_init__(self):
        if self.fidelity not in (IDEAL, DYNAMIC):
            raise ContractViolation(
                f"PlantConfig: fidelity must be '{IDEAL}' or '{DYNAMIC}'")
        if not self.dt > 0:
            raise ContractViolation("PlantConfig: dt must be > 0")
        if self.ppu_lag < 0 or self.kp < 0 or self.kd < 0:
            raise ContractViolation("PlantConfig: lag and gains must be >= 0")
        if min(self.sigma_wrench, self.sigma_q, self.sigma_dq) < 0:
            raise ContractViolation("PlantConfig: noise sigmas must be >= 0")


@dataclass
class PlantState:
    """True machine state (before measurement noise)."""

    q_p: np.ndarray
    dq_p: np.ndarray
    q_m: np.ndarray
    dq_m: np.ndarray
    halted: bool = False

    def __post_init__(self):
        self.q_p = np.asarray(self.q_p, dtype=float).reshape(2)
        self.dq_p = np.asarray(self.dq_p, dtype=float).reshape(2)
        self.q_m = np.asarray(self.q_m, dtype=float).reshape(6)
        self.dq_m = np.asarray(self.dq_m, dtype=float).reshape(6)

    @staticmethod
    def at_rest(q_p, q_m) -> "PlantState":
        return PlantState(q_p, np.zeros(2), q_m, np.zeros(6))

    def copy(self) -> "PlantState":
        return PlantState(self.q_p.copy(), self.dq_p.copy(),
                          self.q_m.copy(), self.dq_m.copy(), self.halted)


@dataclass(frozen=True)
class PlantCommand:
    """One cycle of commands entering the plant."""

    dq_p_cmd: np.ndarray         # carriage velocity setpoint (2,)
    q_m_ref: np.ndarray          # arm reference trajectory (6,)
    dq_m_ref: np.ndarray
    ddq_m_ref: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dq_p_cmd",
                           np.asarray(self.dq_p_cmd, dtype=float).reshape(2))
        for name in ("q_m_ref", "dq_m_ref", "ddq_m_ref"):
            object.__setattr__(self, name,
                               np.asarray(getattr(self, name), dtype=float).reshape(6))

    @property
    def finite(self) -> bool:
        return bool(np.all(np.isfinite(self.dq_p_cmd))
                    and np.all(np.isfinite(self.q_m_ref))
                    and np.all(np.isfinite(self.dq_m_ref))
                    and np.all(np.isfinite(self.ddq_m_ref)))


@dataclass(frozen=True)
class PlantMeasurement:
    """Sensor view of the machine handed to the renderer."""

    q_p: np.ndarray
    dq_p: np.ndarray
    q_m: np.ndarray
    dq_m: np.ndarray


def _neutralize(q, value, q_min, q_max):
    """Zero the components of value that push past a reached position limit.

    Returns (value', hits).  Never increases any magnitude (passivity).
    """
    out = np.array(value, dtype=float)
    hits = 0
    for i in range(out.shape[0]):
        if q[i] >= q_max[i] and out[i] > 0.0:
            out[i] = 0.0
            hits += 1
        elif q[i] <= q_min[i] and out[i] < 0.0:
            out[i] = 0.0
            hits += 1
    return out, hits


def sanitize(cmd: PlantCommand, state: PlantState,
             machine: KinematicChain) -> tuple[PlantCommand, int]:
    """Neutralize command components that drive joints past reached limits.

    Carriage velocity setpoints are checked against the two gantry travel
    ranges; the arm reference is checked by its velocity and acceleration
    components against the arm joint ranges.  Infinite ratings never match.
    """
    hits = 0
    dq_p, h = _neutralize(state.q_p, cmd.dq_p_cmd,
                          machine.q_min[:2], machine.q_max[:2])
    hits += h
    dq_m, h = _neutralize(state.q_m, cmd.dq_m_ref,
                          machine.q_min[2:], machine.q_max[2:])
    hits += h
    ddq_m, h = _neutralize(state.q_m, cmd.ddq_m_ref,
                           machine.q_min[2:], machine.q_max[2:])
    hits += h
    if hits == 0:
        return cmd, 0
    return PlantCommand(dq_p, cmd.q_m_ref, dq_m, ddq_m), hits


def _carriage_step(q_p, dq_p, cmd, lag, dt):
    """Exact one-step solution of the first-order velocity lag.

    dq' = cmd + (dq - cmd) e^(-dt/lag); position integrates the exponential
    analytically so the step is exact for a piecewise-constant command.
    """
    if lag <= 0.0:
        return q_p + dt * cmd, cmd.copy()
    decay = np.exp(-dt / lag)
    dq_new = cmd + (dq_p - cmd) * decay
    q_new = q_p + cmd * dt + (dq_p - cmd) * lag * (1.0 - decay)
    return q_new, dq_new


def carriage_accel(dq_p, cmd, lag) -> np.ndarray:
    """Instantaneous carriage acceleration under the lag model."""
    if lag <= 0.0:
        return np.zeros(2)
    return (np.asarray(cmd, float) - np.asarray(dq_p, float)) / lag


def _arm_dynamics(machine: KinematicChain, q_p, dq_p, ddq_p, q_m, dq_m, tau):
    """Arm acceleration given joint torque and known carriage acceleration.

    Uses the full 8-row machine model: M_aa ddq_m = tau - c_m - M_ap ddq_p,
    i.e. the carriage is a kinematic base whose motion loads the arm.
    """
    q = join_full_state(q_p, q_m)
    dq = join_full_state(dq_p, dq_m)
    M, c = joint_space_dynamics(machine, q, dq)
    rhs = tau - c[2:] - M[2:, :2] @ ddq_p
    return np.linalg.solve(M[2:, 2:], rhs)


def _tracking_torque(machine: KinematicChain, cfg: PlantConfig,
                     q_p, dq_p, q_m, dq_m, cmd: PlantCommand) -> np.ndarray:
    """Computed-torque PD with optional gravity feedforward.

    tau = M_aa (ddq_ref + kp e + kd de) + coriolis [+ gravity], evaluated at
    the measured state, which makes the closed-loop tracking error obey
    e'' + kd e' + kp e = 0 exactly when the model matches the plant.
    """
    q = join_full_state(q_p, q_m)
    dq = join_full_state(dq_p, dq_m)
    M, c_all = joint_space_dynamics(machine, q, dq)
    c_full = c_all[2:]
    c_static = joint_space_dynamics(machine, q, np.zeros(8))[1][2:]
    a_cmd = (cmd.ddq_m_ref + cfg.kp * (cmd.q_m_ref - q_m)
             + cfg.kd * (cmd.dq_m_ref - dq_m))
    tau = M[2:, 2:] @ a_cmd + (c_full - c_static)
    if cfg.gravity_feedforward:
        tau = tau + c_static
    return tau


def plant_step(machine: KinematicChain, cfg: PlantConfig, state: PlantState,
               cmd: PlantCommand,
               rng: np.random.Generator | None = None
               ) -> tuple[PlantState, PlantMeasurement, int]:
    """Advance the plant one cycle; returns (state', measurement, hits).

    hits counts torque components the dynamic-mode limit guard neutralized.
    Non-finite commands halt the plant (state freezes, halted flag set).
    """
    if state.halted or not cmd.finite:
        frozen = state.copy()
        frozen.halted = True
        return frozen, _measure(frozen, cfg, rng), 0

    dt = cfg.dt
    q_p_new, dq_p_new = _carriage_step(state.q_p, state.dq_p, cmd.dq_p_cmd,
                                       cfg.ppu_lag, dt)
    hits = 0
    if cfg.fidelity == IDEAL:
        q_m_new = cmd.q_m_ref.copy()
        dq_m_new = cmd.dq_m_ref.copy()
    else:
        tau = _tracking_torque(machine, cfg, state.q_p, state.dq_p,
                               state.q_m, state.dq_m, cmd)
        tau, hits = _neutralize(state.q_m, tau,
                                machine.q_min[2:], machine.q_max[2:])
        ddq_p = carriage_accel(state.dq_p, cmd.dq_p_cmd, cfg.ppu_lag)

        # RK4 on (q_m, dq_m); torque and carriage coupling held over the step
        def f(qm, dqm):
            return dqm, _arm_dynamics(machine, state.q_p, state.dq_p, ddq_p,
                                      qm, dqm, tau)

        k1q, k1v = f(state.q_m, state.dq_m)
        k2q, k2v = f(state.q_m + 0.5 * dt * k1q, state.dq_m + 0.5 * dt * k1v)
        k3q, k3v = f(state.q_m + 0.5 * dt * k2q, state.dq_m + 0.5 * dt * k2v)
        k4q, k4v = f(state.q_m + dt * k3q, state.dq_m + dt * k3v)
        q_m_new = state.q_m + dt / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q)
        dq_m_new = state.dq_m + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)

    new = PlantState(q_p_new, dq_p_new, q_m_new, dq_m_new)
    return new, _measure(new, cfg, rng), hits


def _measure(state: PlantState, cfg: PlantConfig,
             rng: np.random.Generator | None) -> PlantMeasurement:
    q_p, dq_p = state.q_p.copy(), state.dq_p.copy()
    q_m, dq_m = state.q_m.copy(), state.dq_m.copy()
    if rng is not None and (cfg.sigma_q > 0 or cfg.sigma_dq > 0):
        if cfg.sigma_q > 0:
            q_p = q_p + rng.normal(0.0, cfg.sigma_q, 2)
            q_m = q_m + rng.normal(0.0, cfg.sigma_q, 6)
        if cfg.sigma_dq > 0:
            dq_p = dq_p + rng.normal(0.0, cfg.sigma_dq, 2)
            dq_m = dq_m + rng.normal(0.0, cfg.sigma_dq, 6)
    return PlantMeasurement(q_p, dq_p, q_m, dq_m)


def measure_wrench(w: np.ndarray, cfg: PlantConfig,
                   rng: np.random.Generator | None) -> np.ndarray:
    """Wrench sensor model: additive Gaussian noise when configured."""
    w = np.asarray(w, dtype=float).reshape(6)
    if rng is None or cfg.sigma_wrench <= 0:
        return w.copy()
    return w + rng.normal(0.0, cfg.sigma_wrench, 6)
