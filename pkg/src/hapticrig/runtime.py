"""Fixed-rate scenario execution, CSV logging, replay checking, benchmarks.

One cycle runs, in order: wrench source -> renderer step -> carriage
recentering controller -> sanitizer -> plant step -> log.  The simulation
clock advances exactly dt per cycle regardless of wall time; batch runs go
as fast as possible, interactive runs sleep until each cycle's deadline.

A telemetry service may be attached.  The loop treats it as an opaque
object with:

  decimation: int          cycles between published snapshots
  has_clients() -> bool    cheap check; nothing is built when False
  publish(snapshot)        latest-wins, never blocks
  drain() -> list          pending commands, each one of
                           ("wrench", force(3), torque(3)), ("pause",),
                           ("resume",), ("reset",), ("select", name)
  notify_error(code, text) report a rejected command back to the pilot

Log files are CSV with a two-line comment preamble (schema version, then
run metadata) and a column-name header row; floats are written with repr
so values round-trip exactly.  A ``.gz`` suffix gzips the file with a
fixed timestamp, so identical runs stay byte-identical.
"""

from __future__ import annotations

import gzip
import time
from dataclasses import dataclass, replace

import numpy as np

from .chain import KinematicChain, Pose, Wrench, forward_kinematics, jacobian
from .errors import ChainFileError, ContractViolation
from .machine import join_full_state
from .plant import (PlantCommand, PlantMeasurement, PlantState, measure_wrench,
                    plant_step, sanitize)
from .ppu import PpuConfig, ppu_command, ppu_reference
from .renderer import ActiveLimitSet, PlantFeedback, Renderer
from .scenario import INTERACTIVE, InteractiveWrench, Scenario, load_scenario

LOG_SCHEMA = "hapticrig-log v1"

# carriage acceleration estimate: first-order difference of the measured
# velocity smoothed by a one-pole low-pass at this cutoff
ACCEL_LPF_HZ = 50.0


# ----------------------------------------------------------------------
# active-limit bitmask
# ----------------------------------------------------------------------
def active_bit_layout(n: int) -> list[tuple[str, int]]:
    """(field, width) pairs, LSB first, of the active-limit bitmask."""
    return [("adm_upper", n), ("adm_lower", n),
            ("manip_upper", 6), ("manip_lower", 6),
            ("sing_upper", 1), ("sing_lower", 1),
            ("ee_upper", 3), ("ee_lower", 3),
            ("elbow_upper", 3), ("elbow_lower", 3),
            ("locked", n)]


def encode_active(active: ActiveLimitSet, n: int) -> int:
    mask = 0
    bit = 0
    for field_name, width in active_bit_layout(n):
        flags = np.atleast_1d(getattr(active, field_name)).astype(bool)
        for j in range(width):
            if flags[j]:
                mask |= 1 << (bit + j)
        bit += width
    return mask


def decode_active(mask: int, n: int) -> dict[str, np.ndarray]:
    out = {}
    bit = 0
    for field_name, width in active_bit_layout(n):
        out[field_name] = np.array([(mask >> (bit + j)) & 1 == 1 for j in range(width)])
        bit += width
    return out


def locked_field_mask(n: int) -> int:
    """Bitmask selecting the locked-joint bits inside the active column."""
    bit = sum(w for _, w in active_bit_layout(n)[:-1])
    return ((1 << n) - 1) << bit


# ----------------------------------------------------------------------
# snapshots and log schema
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class StateSnapshot:
    """One published cycle of the loop, consumed by the telemetry service."""

    t: float
    q_m: np.ndarray
    dq_m: np.ndarray
    q_a: np.ndarray
    dq_a: np.ndarray
    q_p: np.ndarray
    ee_pose: Pose
    dt_pose: Pose
    wrench: np.ndarray
    alpha: np.ndarray            # (n + 13,) adm, manip, sing, ee, elbow
    active_limits: int
    slack_norms: np.ndarray
    solver_us: float
    paused: bool = False
    scenario: str = ""


def column_names(n: int) -> list[str]:
    cols = ["t"]
    cols += [f"q_p{i}" for i in range(2)]
    cols += [f"dq_p{i}" for i in range(2)]
    cols += [f"ddq_p{i}" for i in range(2)]
    cols += [f"q_m{i}" for i in range(6)]
    cols += [f"dq_m{i}" for i in range(6)]
    cols += [f"q_m_ref{i}" for i in range(6)]
    cols += [f"dq_m_ref{i}" for i in range(6)]
    cols += [f"ddq_m_ref{i}" for i in range(6)]
    cols += [f"q_a{i}" for i in range(n)]
    cols += [f"dq_a{i}" for i in range(n)]
    cols += [f"ddq_a{i}" for i in range(n)]
    cols += ["fx", "fy", "fz", "tx", "ty", "tz"]
    cols += [f"alpha_a{i}" for i in range(n)]
    cols += [f"alpha_m{i}" for i in range(6)]
    cols += ["alpha_sing"]
    cols += [f"alpha_ee{i}" for i in range(3)]
    cols += [f"alpha_elbow{i}" for i in range(3)]
    cols += [f"slack{i}" for i in range(11)]
    cols += ["active", "solver_us"]
    return cols


def _open_text(path: str, mode: str):
    if str(path).endswith(".gz"):
        if "w" in mode:
            return gzip.GzipFile(path, "wb", mtime=0)
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def write_log(path: str, meta: dict, cols: list[str], rows: list[list]) -> None:
    lines = [f"# {LOG_SCHEMA}",
             "# " + " ".join(f"{k}={v}" for k, v in meta.items()),
             ",".join(cols)]
    for row in rows:
        lines.append(",".join(str(v) if isinstance(v, int) else repr(float(v))
                              for v in row))
    text = "\n".join(lines) + "\n"
    if str(path).endswith(".gz"):
        with gzip.GzipFile(path, "wb", mtime=0) as f:
            f.write(text.encode("utf-8"))
    else:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)


def read_log(path: str) -> tuple[dict, list[str], np.ndarray]:
    """Parse a log file into (metadata, column names, data matrix)."""
    with _open_text(path, "r") as f:
        raw = f.read()
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
    lines = [ln for ln in raw.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("# "):
        raise ChainFileError(path, "missing log schema line")
    schema = lines[0][2:].strip()
    if schema != LOG_SCHEMA:
        raise ChainFileError(path, f"unsupported log schema {schema!r}")
    meta = {}
    idx = 1
    while idx < len(lines) and lines[idx].startswith("#"):
        for part in lines[idx][1:].split():
            if "=" in part:
                k, v = part.split("=", 1)
                meta[k] = v
        idx += 1
    if idx >= len(lines):
        raise ChainFileError(path, "no column header row")
    cols = lines[idx].split(",")
    data = []
    for ln in lines[idx + 1:]:
        parts = ln.split(",")
        if len(parts) != len(cols):
            raise ChainFileError(path, f"row has {len(parts)} fields, expected {len(cols)}")
        data.append([float(p) for p in parts])
    return meta, cols, np.array(data).reshape(len(data), len(cols))


# ----------------------------------------------------------------------
# run summary
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class RunSummary:
    scenario: str
    cycles: int
    dt: float
    fidelity: str
    seed: int
    solver_us_mean: float
    solver_us_p99: float
    solver_us_max: float
    step_us_mean: float
    step_us_p99: float
    step_us_max: float
    max_rating_violation: float
    sync_err_max: float
    sync_err_final: float
    solver_failures: int
    fallback_rows: int
    sanitizer_hits: int
    halted: bool
    log_path: str | None

    def format(self) -> str:
        lines = [
            f"scenario        {self.scenario} ({self.fidelity}, seed {self.seed})",
            f"cycles          {self.cycles} at dt {self.dt:g} s",
            f"solver us       mean {self.solver_us_mean:.1f}  p99 {self.solver_us_p99:.1f}"
            f"  max {self.solver_us_max:.1f}",
            f"step us         mean {self.step_us_mean:.1f}  p99 {self.step_us_p99:.1f}"
            f"  max {self.step_us_max:.1f}",
            f"rating viol.    {self.max_rating_violation:.3e}",
            f"sync error      max {self.sync_err_max:.3e}  final {self.sync_err_final:.3e}",
            f"solver failures {self.solver_failures}   fallback rows {self.fallback_rows}"
            f"   sanitizer hits {self.sanitizer_hits}",
        ]
        if self.halted:
            lines.append("PLANT HALTED before the scheduled end of the run")
        if self.log_path:
            lines.append(f"log             {self.log_path}")
        return "\n".join(lines)


# ----------------------------------------------------------------------
# the loop
# ----------------------------------------------------------------------
class _LoopState:
    """Mutable per-run containers, rebuilt on reset/select."""

    def __init__(self, scn: Scenario):
        self.scn = scn
        self.renderer = Renderer(scn.machine, scn.spec, scn.renderer)
        self.ppu_cfg = PpuConfig.from_chain(scn.machine, scn.dt, scn.k_ppu)
        self.source = scn.source.make()
        self.rng = np.random.default_rng(scn.seed)
        self.state = self.renderer.initial_state(q_a=scn.q_a0, dq_a=scn.dq_a0,
                                                 q_m=scn.q_m0)
        self.plant = PlantState.at_rest(scn.q_p0, scn.q_m0)
        self.meas = PlantMeasurement(scn.q_p0.copy(), np.zeros(2),
                                     scn.q_m0.copy(), np.zeros(6))
        self.ddq_p_est = np.zeros(2)
        self.prev_dq_p = np.zeros(2)
        self.lpf_a = scn.dt / (scn.dt + 1.0 / (2.0 * np.pi * ACCEL_LPF_HZ))
        self.cycles = int(round(scn.duration / scn.dt))
        self.i = 0
        self.rows: list[list] = []
        # summary accumulators
        self.solver_us: list[float] = []
        self.step_us: list[float] = []
        self.max_viol = 0.0
        self.sync_max = 0.0
        self.sync_last = 0.0
        self.failures = 0
        self.fallbacks = 0
        self.san_hits = 0


def _machine_hand(machine: KinematicChain, meas: PlantMeasurement) -> tuple[Pose, np.ndarray]:
    qf = join_full_state(meas.q_p, meas.q_m)
    dqf = join_full_state(meas.dq_p, meas.dq_m)
    pose = forward_kinematics(machine, qf)
    twist = jacobian(machine, qf) @ dqf
    return pose, twist


def run_scenario(scn: Scenario, log_path: str | None = None, service=None,
                 pace: bool = False) -> RunSummary:
    """Execute the scenario loop; returns the summary, optionally writing CSV.

    Deterministic for a given scenario + seed when no service is attached
    (and with one, as long as no pilot intervenes).  Mid-run solver failures
    are counted and the run continues; a halted plant ends it early.
    """
    ls = _LoopState(scn)
    halted = False
    t_wall0 = time.perf_counter()

    while ls.i < ls.cycles:
        if service is not None:
            ls, halted_cmd = _service_cycle(ls, service)
            if halted_cmd:
                break
        t = ls.i * ls.scn.dt
        if pace:
            deadline = t_wall0 + t
            now = time.perf_counter()
            if deadline > now:
                time.sleep(deadline - now)

        hand_pose, hand_twist = _machine_hand(ls.scn.machine, ls.meas)
        w_true = ls.source.wrench(t, hand_pose, hand_twist)
        w = measure_wrench(w_true.as_array(), ls.scn.plant, ls.rng)

        t0 = time.perf_counter()
        out = ls.renderer.step(Wrench.from_array(w),
                               PlantFeedback(ls.meas.q_p, ls.meas.dq_p,
                                             ls.ddq_p_est, hand_pose, hand_twist),
                               ls.state)
        ls.step_us.append((time.perf_counter() - t0) * 1e6)
        ls.state = out.state
        ls.solver_us.append(out.solver_us)
        ls.failures += int(out.solver_failed)
        ls.fallbacks += out.fallback_rows

        q_p_ref = ppu_reference(ls.meas.q_m, ls.meas.q_p, ls.scn.machine)
        dq_p_cmd = ppu_command(q_p_ref, ls.meas.q_p, ls.ppu_cfg)

        cmd = PlantCommand(dq_p_cmd, ls.state.manip_ref.q, ls.state.manip_ref.dq,
                           out.ddq_m)
        cmd, hits = sanitize(cmd, ls.plant, ls.scn.machine)
        ls.san_hits += hits
        ls.plant, meas, plant_hits = plant_step(ls.scn.machine, ls.scn.plant,
                                                ls.plant, cmd, ls.rng)
        ls.san_hits += plant_hits

        raw = (meas.dq_p - ls.prev_dq_p) / ls.scn.dt
        ls.prev_dq_p = meas.dq_p.copy()
        ls.ddq_p_est = ls.ddq_p_est + ls.lpf_a * (raw - ls.ddq_p_est)
        ls.meas = meas

        dt_pose = forward_kinematics(ls.scn.twin, ls.state.adm.q)
        sync = float(np.linalg.norm(hand_pose.position - dt_pose.position))
        ls.sync_max = max(ls.sync_max, sync)
        ls.sync_last = sync
        rat = ls.scn.spec.ratings
        viol = max(float(np.max(ls.state.adm.q - rat.q_max, initial=0.0)),
                   float(np.max(rat.q_min - ls.state.adm.q, initial=0.0)))
        ls.max_viol = max(ls.max_viol, viol)

        mask = encode_active(ls.state.active, ls.scn.n)
        ls.rows.append(_log_row(t, ls, out, w, mask))

        if service is not None and ls.i % service.decimation == 0 and service.has_clients():
            service.publish(_snapshot(t, ls, out, w, mask, hand_pose, dt_pose))
        ls.i += 1
        if ls.plant.halted:
            halted = True
            break

    meta = {"schema": 1, "scenario": ls.scn.name, "machine": ls.scn.machine.name,
            "twin": ls.scn.twin.name, "n": ls.scn.n, "dt": repr(ls.scn.dt),
            "seed": ls.scn.seed, "fidelity": ls.scn.plant.fidelity}
    if log_path:
        write_log(log_path, meta, column_names(ls.scn.n), ls.rows)
    return _summary(ls, halted, log_path)


def _log_row(t: float, ls: "_LoopState", out, w: np.ndarray, mask: int) -> list:
    st = ls.state
    f = out.forces
    row = [t]
    row += list(ls.meas.q_p) + list(ls.meas.dq_p) + list(ls.ddq_p_est)
    row += list(ls.meas.q_m) + list(ls.meas.dq_m)
    row += list(st.manip_ref.q) + list(st.manip_ref.dq) + list(out.ddq_m)
    row += list(st.adm.q) + list(st.adm.dq) + list(out.ddq_a)
    row += list(w)
    row += list(f.alpha_adm) + list(f.alpha_manip) + [f.alpha_sing]
    row += list(f.alpha_ee) + list(f.alpha_elbow)
    row += list(out.slack_norms)
    row += [mask, float(out.solver_us)]
    return row


def _snapshot(t, ls: "_LoopState", out, w, mask, hand_pose, dt_pose) -> StateSnapshot:
    f = out.forces
    alpha = np.concatenate([f.alpha_adm, f.alpha_manip, [f.alpha_sing],
                            f.alpha_ee, f.alpha_elbow])
    return StateSnapshot(t=t, q_m=ls.meas.q_m.copy(), dq_m=ls.meas.dq_m.copy(),
                         q_a=ls.state.adm.q.copy(), dq_a=ls.state.adm.dq.copy(),
                         q_p=ls.meas.q_p.copy(), ee_pose=hand_pose, dt_pose=dt_pose,
                         wrench=np.asarray(w, float).copy(), alpha=alpha,
                         active_limits=mask, slack_norms=out.slack_norms.copy(),
                         solver_us=float(out.solver_us), scenario=ls.scn.name)


def _idle_snapshot(ls: "_LoopState") -> StateSnapshot:
    hand_pose, _ = _machine_hand(ls.scn.machine, ls.meas)
    dt_pose = forward_kinematics(ls.scn.twin, ls.state.adm.q)
    n = ls.scn.n
    return StateSnapshot(t=ls.i * ls.scn.dt, q_m=ls.meas.q_m.copy(),
                         dq_m=ls.meas.dq_m.copy(), q_a=ls.state.adm.q.copy(),
                         dq_a=ls.state.adm.dq.copy(), q_p=ls.meas.q_p.copy(),
                         ee_pose=hand_pose, dt_pose=dt_pose, wrench=np.zeros(6),
                         alpha=np.zeros(n + 13),
                         active_limits=encode_active(ls.state.active, n),
                         slack_norms=np.zeros(11), solver_us=0.0, paused=True,
                         scenario=ls.scn.name)


def _service_cycle(ls: "_LoopState", service) -> tuple["_LoopState", bool]:
    """Drain commands; block (still draining) while paused."""
    paused_since = None
    while True:
        for cmd in service.drain():
            kind = cmd[0]
            if kind == "wrench":
                if ls.scn.source.kind == INTERACTIVE and isinstance(ls.source, InteractiveWrench):
                    ls.source.set_command(cmd[1], cmd[2])
                else:
                    service.notify_error("not-interactive",
                                         "scenario wrench source is not interactive")
            elif kind == "pause":
                if paused_since is None:
                    paused_since = time.perf_counter()
            elif kind == "resume":
                paused_since = None
            elif kind == "reset":
                ls = _LoopState(ls.scn)
                paused_since = None
            elif kind == "select":
                try:
                    ls = _LoopState(_sibling_scenario(ls.scn, cmd[1]))
                    paused_since = None
                except ChainFileError as e:
                    service.notify_error("bad-scenario", str(e))
            elif kind == "stop":
                return ls, True
        if paused_since is None:
            return ls, False
        if service.has_clients():
            service.publish(_idle_snapshot(ls))
        time.sleep(0.02)


def _sibling_scenario(current: Scenario, name: str) -> Scenario:
    """Resolve a selected scenario: file next to the current one, else shipped."""
    import os
    base = os.path.dirname(os.path.abspath(current.path)) if current.path else "."
    candidate = os.path.join(base, name + ".scenario")
    if os.path.exists(candidate):
        return load_scenario(candidate)
    return load_scenario(name)


def _summary(ls: "_LoopState", halted: bool, log_path: str | None) -> RunSummary:
    solver = np.array(ls.solver_us) if ls.solver_us else np.zeros(1)
    step = np.array(ls.step_us) if ls.step_us else np.zeros(1)
    return RunSummary(
        scenario=ls.scn.name, cycles=len(ls.rows), dt=ls.scn.dt,
        fidelity=ls.scn.plant.fidelity, seed=ls.scn.seed,
        solver_us_mean=float(np.mean(solver)),
        solver_us_p99=float(np.percentile(solver, 99)),
        solver_us_max=float(np.max(solver)),
        step_us_mean=float(np.mean(step)),
        step_us_p99=float(np.percentile(step, 99)),
        step_us_max=float(np.max(step)),
        max_rating_violation=ls.max_viol,
        sync_err_max=ls.sync_max, sync_err_final=ls.sync_last,
        solver_failures=ls.failures, fallback_rows=ls.fallbacks,
        sanitizer_hits=ls.san_hits, halted=halted, log_path=log_path)


# ----------------------------------------------------------------------
# replay checking and benchmarks
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class ReplayReport:
    ok: bool
    rows: int
    max_diff: float
    max_diff_col: str
    max_diff_row: int
    lock_rows: int
    lock_max_diff: float
    reason: str = ""

    def format(self) -> str:
        if not self.ok and self.reason:
            return f"REPLAY MISMATCH: {self.reason}"
        status = "ok" if self.ok else "MISMATCH"
        return (f"replay {status}: {self.rows} rows, max |diff| {self.max_diff:.3e}"
                f" ({self.max_diff_col} @ row {self.max_diff_row});"
                f" {self.lock_rows} lock rows, max |diff| {self.lock_max_diff:.3e}")


def replay_check(scn: Scenario, baseline_path: str, tol: float = 1e-9) -> ReplayReport:
    """Re-run the scenario and compare against a committed baseline log.

    Every column except solver_us must agree within tol on every row; rows
    where the baseline has any locked joint are also reported separately
    (they carry the lock-semantics guarantees).
    """
    meta, cols, base = read_log(baseline_path)
    n = int(meta.get("n", scn.n))
    if n != scn.n:
        return ReplayReport(False, 0, np.inf, "", -1, 0, 0.0,
                            f"baseline n={n} != scenario n={scn.n}")
    if cols != column_names(scn.n):
        return ReplayReport(False, 0, np.inf, "", -1, 0, 0.0,
                            "baseline column schema differs")
    if meta.get("scenario") not in ("", None, scn.name):
        return ReplayReport(False, 0, np.inf, "", -1, 0, 0.0,
                            f"baseline scenario {meta.get('scenario')!r} != {scn.name!r}")
    _, fresh = _run_matrix(scn)
    if fresh.shape[0] != base.shape[0]:
        return ReplayReport(False, fresh.shape[0], np.inf, "", -1, 0, 0.0,
                            f"row count {fresh.shape[0]} != baseline {base.shape[0]}")
    keep = [i for i, c in enumerate(cols) if c != "solver_us"]
    diff = np.abs(fresh[:, keep] - base[:, keep])
    max_diff = float(np.max(diff)) if diff.size else 0.0
    r, c = np.unravel_index(int(np.argmax(diff)), diff.shape) if diff.size else (0, 0)
    active_col = cols.index("active")
    lock_bits = locked_field_mask(n)
    locked_rows = (base[:, active_col].astype(np.int64) & lock_bits) != 0
    lock_diff = float(np.max(diff[locked_rows])) if np.any(locked_rows) else 0.0
    ok = max_diff <= tol
    return ReplayReport(ok, int(fresh.shape[0]), max_diff, cols[keep[c]], int(r),
                        int(np.sum(locked_rows)), lock_diff)


def _run_matrix(scn: Scenario) -> tuple[list[str], np.ndarray]:
    """Run a scenario and return its log rows as a float matrix."""
    import os
    import tempfile
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "run.csv")
        run_scenario(scn, log_path=path)
        _, cols, data = read_log(path)
    return cols, data


@dataclass(frozen=True)
class BenchResult:
    cycles: int
    step_us_mean: float
    step_us_p99: float
    step_us_max: float
    solver_us_mean: float
    solver_us_p99: float

    def format(self) -> str:
        return (f"{self.cycles} cycles: step mean {self.step_us_mean:.1f} us,"
                f" p99 {self.step_us_p99:.1f} us, max {self.step_us_max:.1f} us"
                f" (solver mean {self.solver_us_mean:.1f} us,"
                f" p99 {self.solver_us_p99:.1f} us)")


def bench_loop(scenario: str = "cartesian6", cycles: int = 10000) -> BenchResult:
    """Time the renderer step over a long run of the full machine + DT stack.

    The scenario's wrench schedule runs (holding its last entry) while each
    renderer step is timed individually; one warmup step absorbs the
    compile-cache load before timing starts.
    """
    scn = load_scenario(scenario)
    scn = replace(scn, duration=(cycles + 1) * scn.dt)
    ls = _LoopState(scn)
    step_us = []
    solver_us = []
    for i in range(cycles + 1):
        t = i * scn.dt
        hand_pose, hand_twist = _machine_hand(scn.machine, ls.meas)
        w = ls.source.wrench(t, hand_pose, hand_twist)
        t0 = time.perf_counter()
        out = ls.renderer.step(w, PlantFeedback(ls.meas.q_p, ls.meas.dq_p,
                                                ls.ddq_p_est, hand_pose, hand_twist),
                               ls.state)
        dt_us = (time.perf_counter() - t0) * 1e6
        ls.state = out.state
        if i > 0:
            step_us.append(dt_us)
            solver_us.append(out.solver_us)
        q_p_ref = ppu_reference(ls.meas.q_m, ls.meas.q_p, scn.machine)
        dq_p_cmd = ppu_command(q_p_ref, ls.meas.q_p, ls.ppu_cfg)
        cmd = PlantCommand(dq_p_cmd, ls.state.manip_ref.q, ls.state.manip_ref.dq,
                           out.ddq_m)
        cmd, _ = sanitize(cmd, ls.plant, scn.machine)
        ls.plant, meas, _ = plant_step(scn.machine, scn.plant, ls.plant, cmd, ls.rng)
        raw = (meas.dq_p - ls.prev_dq_p) / scn.dt
        ls.prev_dq_p = meas.dq_p.copy()
        ls.ddq_p_est = ls.ddq_p_est + ls.lpf_a * (raw - ls.ddq_p_est)
        ls.meas = meas
    s = np.array(step_us)
    q = np.array(solver_us)
    return BenchResult(cycles, float(np.mean(s)), float(np.percentile(s, 99)),
                       float(np.max(s)), float(np.mean(q)), float(np.percentile(q, 99)))
