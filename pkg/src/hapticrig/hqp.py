"""Strictly prioritized least-squares task stacks (lexicographic QP).

Each task holds an equality block A x + w = b and an inequality block
f_lb <= C x + v <= f_ub with slacks w, v.  Levels are solved in priority
order; each level minimizes 1/2 ||w_p||^2 + 1/2 ||v_p||^2 over the null
space of all higher-priority equality blocks, subject to every prior
inequality block offset by its recorded optimal slack.

solve() runs the compiled packed path used by the control loop; solve_level()
is the plain-numpy reference form of one level, kept for verification.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import ContractViolation


@dataclass(frozen=True)
class HqpConfig:
    rank_tol: float = 1e-10   # relative singular-value cutoff for kernels
    eps_h: float = 1e-9       # diagonal inflation scale for H_p
    eps_z: float = 1e-5       # conditioning floor for the null-space block
    eps_f: float = 1e-10      # absolute inequality bound widening
    max_qp_iter: int = 200

    def __post_init__(self):
        if self.rank_tol <= 0 or self.eps_h < 0 or self.eps_f < 0:
            raise ContractViolation("HqpConfig: tolerances must be positive")
        if self.eps_z < self.eps_h:
            raise ContractViolation("HqpConfig: eps_z must be >= eps_h")


@dataclass(frozen=True)
class Task:
    """One priority level: equalities (A, b) and box inequalities (C, f_lb, f_ub)."""

    priority: int
    A: np.ndarray
    b: np.ndarray
    C: np.ndarray
    f_lb: np.ndarray
    f_ub: np.ndarray
    label: str = ""

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        lo = np.asarray(self.f_lb, dtype=float).reshape(-1)
        hi = np.asarray(self.f_ub, dtype=float).reshape(-1)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "f_lb", lo)
        object.__setattr__(self, "f_ub", hi)
        if self.priority < 1:
            raise ContractViolation(f"task {self.label!r}: priority must be >= 1")
        if A.shape[0] != b.shape[0]:
            raise ContractViolation(f"task {self.label!r}: A rows != len(b)")
        if C.shape[0] != lo.shape[0] or C.shape[0] != hi.shape[0]:
            raise ContractViolation(f"task {self.label!r}: C rows != bound lengths")
        if np.any(lo > hi):
            raise ContractViolation(f"task {self.label!r}: f_lb must be <= f_ub")
        if not np.all(np.isfinite(A)) or not np.all(np.isfinite(b)) or not np.all(np.isfinite(C)):
            raise ContractViolation(f"task {self.label!r}: A, b, C must be finite")

    @property
    def m_eq(self) -> int:
        return self.A.shape[0]

    @property
    def m_ineq(self) -> int:
        return self.C.shape[0]

    @staticmethod
    def equality(priority: int, A, b, N: int, label: str = "") -> "Task":
        return Task(priority, A, b, np.zeros((0, N)), np.zeros(0), np.zeros(0), label)

    @staticmethod
    def inequality(priority: int, C, f_lb, f_ub, N: int, label: str = "") -> "Task":
        return Task(priority, np.zeros((0, N)), np.zeros(0), C, f_lb, f_ub, label)


@dataclass(frozen=True)
class Hierarchy:
    tasks: tuple[Task, ...]
    N: int

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        prios = [t.priority for t in self.tasks]
        if prios != list(range(1, len(prios) + 1)):
            raise ContractViolation("Hierarchy: priorities must be unique and contiguous from 1")
        for t in self.tasks:
            for M in (t.A, t.C):
                if M.shape[0] > 0 and M.shape[1] != self.N:
                    raise ContractViolation(
                        f"task {t.label!r}: column count {M.shape[1]} != N={self.N}")


@dataclass(frozen=True)
class HqpSolution:
    x_star: np.ndarray
    w: tuple[np.ndarray, ...]        # per-level equality slacks
    v: tuple[np.ndarray, ...]        # per-level inequality slacks
    residuals: np.ndarray            # per-level sqrt(||w||^2+||v||^2)
    ranks: np.ndarray                # equality rank consumed per level
    null_dims: np.ndarray            # remaining null-space dimension after level
    failed_levels: np.ndarray        # 1 where the level QP failed
    eps_used: np.ndarray             # applied diagonal inflation per level
    qp_iterations: np.ndarray
    wall_time_us: float

    @property
    def any_failed(self) -> bool:
        return bool(np.any(self.failed_levels != 0))


def kernel_basis(A, rank_tol: float = 1e-10) -> np.ndarray:
    """Orthonormal null-space basis of A (columns); full space for empty/zero A."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if not np.all(np.isfinite(A)):
        raise ContractViolation("kernel_basis: A must be finite")
    return K.kernel_basis_k(A, rank_tol)


def nullspace_recursion(Z_prev, A_prev, rank_tol: float = 1e-10) -> np.ndarray:
    """Z_p = Z_prev . kern(A_prev Z_prev), the incremental basis update."""
    Z_prev = np.atleast_2d(np.asarray(Z_prev, dtype=float))
    A_prev = np.atleast_2d(np.asarray(A_prev, dtype=float))
    if A_prev.shape[0] == 0:
        return Z_prev.copy()
    return Z_prev @ K.kernel_basis_k(A_prev @ Z_prev, rank_tol)


def pack_hierarchy(h: Hierarchy):
    """Stack all task blocks into the flat layout of the compiled solver."""
    nlev = len(h.tasks)
    ae_off = np.zeros(nlev + 1, dtype=np.int64)
    ci_off = np.zeros(nlev + 1, dtype=np.int64)
    for i, t in enumerate(h.tasks):
        ae_off[i + 1] = ae_off[i] + t.m_eq
        ci_off[i + 1] = ci_off[i] + t.m_ineq
    A_all = np.zeros((ae_off[-1], h.N))
    b_all = np.zeros(ae_off[-1])
    C_all = np.zeros((ci_off[-1], h.N))
    flb_all = np.zeros(ci_off[-1])
    fub_all = np.zeros(ci_off[-1])
    for i, t in enumerate(h.tasks):
        A_all[ae_off[i]:ae_off[i + 1]] = t.A
        b_all[ae_off[i]:ae_off[i + 1]] = t.b
        C_all[ci_off[i]:ci_off[i + 1]] = t.C
        flb_all[ci_off[i]:ci_off[i + 1]] = t.f_lb
        fub_all[ci_off[i]:ci_off[i + 1]] = t.f_ub
    return ae_off, A_all, b_all, ci_off, C_all, flb_all, fub_all


def solve(h: Hierarchy, config: HqpConfig | None = None) -> HqpSolution:
    """Solve the full stack lexicographically (compiled path)."""
    cfg = config or HqpConfig()
    ae_off, A_all, b_all, ci_off, C_all, flb_all, fub_all = pack_hierarchy(h)
    t0 = time.perf_counter()
    x, w_all, v_all, resid, ranks, nulldims, fails, eps_used, qp_iters = K.hqp_solve_k(
        h.N, len(h.tasks), A_all, ae_off, b_all, C_all, ci_off, flb_all, fub_all,
        cfg.rank_tol, cfg.eps_h, cfg.eps_z, cfg.eps_f, cfg.max_qp_iter)
    wall = (time.perf_counter() - t0) * 1e6
    w = tuple(w_all[ae_off[i]:ae_off[i + 1]].copy() for i in range(len(h.tasks)))
    v = tuple(v_all[ci_off[i]:ci_off[i + 1]].copy() for i in range(len(h.tasks)))
    return HqpSolution(x, w, v, resid, ranks, nulldims, fails, eps_used,
                       qp_iters, wall)


def solve_level(task: Task, x_prev, Z_p, frozen_inequalities,
                config: HqpConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Reference solve of one level in the variables (z, v_p).

    frozen_inequalities is a sequence of (C_i, f_lb_i, f_ub_i, v_star_i)
    records from already-solved levels; their slacks stay fixed.  Returns
    (z_star, v_star) for this level.  The compiled path in solve() builds the
    same QP; this form exists for oracle checks and diagnosis.
    """
    cfg = config or HqpConfig()
    x_prev = np.asarray(x_prev, dtype=float).reshape(-1)
    Z_p = np.atleast_2d(np.asarray(Z_p, dtype=float))
    nz = Z_p.shape[1]
    mi = task.m_ineq
    nvar = nz + mi
    H = np.zeros((nvar, nvar))
    g = np.zeros(nvar)
    if task.m_eq > 0 and nz > 0:
        AZ = task.A @ Z_p
        r0 = task.A @ x_prev - task.b
        H[:nz, :nz] = AZ.T @ AZ
        g[:nz] = AZ.T @ r0
    H[nz:, nz:] += np.eye(mi)
    eps = cfg.eps_h * (1.0 + np.trace(H) / max(nvar, 1))
    H[np.diag_indices(nvar)] += eps
    rows = []
    los = []
    his = []
    for C_i, lo_i, hi_i, v_i in frozen_inequalities:
        C_i = np.atleast_2d(np.asarray(C_i, dtype=float))
        if C_i.shape[0] == 0:
            continue
        CZ = C_i @ Z_p
        # Rows whose normals have (almost) no component left in the remaining
        # null space cannot be meaningfully moved by z; keeping them only
        # feeds rounding noise to the active-set solver.
        keep = np.linalg.norm(CZ, axis=1) ** 2 > 1e-12 * (
            1.0 + np.linalg.norm(C_i, axis=1) ** 2
        )
        if not np.any(keep):
            continue
        blk = np.zeros((int(keep.sum()), nvar))
        blk[:, :nz] = CZ[keep]
        cx = (C_i @ x_prev)[keep]
        v_i = np.asarray(v_i, float).reshape(-1)[keep]
        rows.append(blk)
        # z = 0 must remain feasible despite drift accumulated in x, so the
        # pinned window is widened to cover the value actually reached.
        los.append(np.minimum(np.asarray(lo_i, float).reshape(-1)[keep] - cx - v_i - cfg.eps_f, 0.0))
        his.append(np.maximum(np.asarray(hi_i, float).reshape(-1)[keep] - cx - v_i + cfg.eps_f, 0.0))
    if mi > 0:
        blk = np.zeros((mi, nvar))
        blk[:, :nz] = task.C @ Z_p
        blk[:, nz:] = np.eye(mi)
        cx = task.C @ x_prev
        rows.append(blk)
        los.append(task.f_lb - cx - cfg.eps_f)
        his.append(task.f_ub - cx + cfg.eps_f)
    if rows:
        Cq = np.vstack(rows)
        lo = np.concatenate(los)
        hi = np.concatenate(his)
    else:
        Cq = np.zeros((0, nvar))
        lo = np.zeros(0)
        hi = np.zeros(0)
    zeta, status, _, _, _ = K.qp_gi(H, g, Cq, lo, hi, cfg.max_qp_iter)
    if status != K.QP_OK:
        z = np.zeros(nz)
        cx = task.C @ x_prev if mi else np.zeros(0)
        v = np.clip(cx, task.f_lb, task.f_ub) - cx
        return z, v
    return zeta[:nz].copy(), zeta[nz:].copy()


# ---------------------------------------------------------------------------
# text round trip for offline replay (hqp-dump / hqp-replay)
# ---------------------------------------------------------------------------

def hierarchy_to_json(h: Hierarchy) -> str:
    """Self-describing dump; infinities serialize as JSON Infinity tokens."""
    doc = {
        "format": "hqp-hierarchy",
        "version": 1,
        "N": h.N,
        "tasks": [
            {
                "priority": t.priority,
                "label": t.label,
                "A": t.A.tolist(),
                "b": t.b.tolist(),
                "C": t.C.tolist(),
                "f_lb": t.f_lb.tolist(),
                "f_ub": t.f_ub.tolist(),
            }
            for t in h.tasks
        ],
    }
    return json.dumps(doc, indent=1)


def hierarchy_from_json(text: str) -> Hierarchy:
    doc = json.loads(text)
    if doc.get("format") != "hqp-hierarchy":
        raise ContractViolation("not a hierarchy dump (missing format marker)")
    N = int(doc["N"])
    tasks = []
    for td in doc["tasks"]:
        A = np.asarray(td["A"], dtype=float).reshape(-1, N) if td["A"] else np.zeros((0, N))
        C = np.asarray(td["C"], dtype=float).reshape(-1, N) if td["C"] else np.zeros((0, N))
        tasks.append(Task(int(td["priority"]), A, np.asarray(td["b"], dtype=float),
                          C, np.asarray(td["f_lb"], dtype=float),
                          np.asarray(td["f_ub"], dtype=float), td.get("label", "")))
    return Hierarchy(tuple(tasks), N)
