"""Render figures from a run log, written next to the delimited output.

``write_report`` reads a CSV produced by ``run_scenario`` and emits PNG
figures into the log's directory (or an explicit output directory), named
``<logstem>_<figure>.png``.  Passing the scenario enables overlays that need
configuration the log does not carry: joint ratings, Cartesian boxes, and
the singularity band.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .chain import forward_kinematics
from .chainfile import load_chain
from .renderer import TASK_LABELS
from .runtime import active_bit_layout, read_log
from .scenario import Scenario

_WRENCH_COLS = ["fx", "fy", "fz", "tx", "ty", "tz"]


def _col(cols: list[str], name: str) -> int:
    try:
        return cols.index(name)
    except ValueError:
        raise ValueError(f"log is missing column {name!r}") from None


def _group(cols: list[str], prefix: str, count: int) -> np.ndarray:
    return np.array([_col(cols, f"{prefix}{i}") for i in range(count)])


def _locked_flags(active: np.ndarray, n: int) -> np.ndarray:
    """(rows, n) locked-joint booleans decoded from the active column."""
    bit = sum(w for _, w in active_bit_layout(n)[:-1])
    masks = active.astype(np.int64)
    return ((masks[:, None] >> (bit + np.arange(n))) & 1) == 1


def _shade_locked(ax, t: np.ndarray, flags: np.ndarray) -> None:
    if not np.any(flags):
        return
    edges = np.flatnonzero(np.diff(flags.astype(np.int8)) != 0) + 1
    bounds = np.concatenate([[0], edges, [len(flags)]])
    for a, b in zip(bounds[:-1], bounds[1:]):
        if flags[a]:
            ax.axvspan(t[a], t[min(b, len(t) - 1)], color="0.85", zorder=0)


def write_report(log_path: str, out_dir: str | None = None,
                 scenario: Scenario | None = None) -> list[str]:
    """Render all figures for one run log; returns the written file paths."""
    meta, cols, data = read_log(log_path)
    n = int(meta.get("n", 0))
    if n <= 0:
        raise ValueError("log metadata is missing the DT joint count")
    t = data[:, _col(cols, "t")]
    stem = os.path.basename(log_path)
    for suffix in (".gz", ".csv"):
        if stem.endswith(suffix):
            stem = stem[: -len(suffix)]
    base = os.path.join(out_dir if out_dir else os.path.dirname(os.path.abspath(log_path)), stem)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    written = []

    twin = load_chain(meta["twin"]) if "twin" in meta else None
    machine = load_chain(meta["machine"]) if "machine" in meta else None
    locked = _locked_flags(data[:, _col(cols, "active")], n)

    # 1. applied wrench and per-task slack norms
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(9, 6), sharex=True)
    for name in _WRENCH_COLS:
        ax1.plot(t, data[:, _col(cols, name)], label=name, lw=0.9)
    ax1.set_ylabel("wrench [N, N·m]")
    ax1.legend(ncol=6, fontsize=7, loc="upper right")
    ax1.set_title("applied wrench")
    slack = data[:, _group(cols, "slack", 11)]
    for i, lab in enumerate(TASK_LABELS):
        if np.any(slack[:, i] > 0):
            ax2.semilogy(t, np.maximum(slack[:, i], 1e-16), label=lab, lw=0.9)
    ax2.set_xlabel("t [s]")
    ax2.set_ylabel("slack norm")
    ax2.legend(ncol=4, fontsize=7, loc="upper right")
    ax2.set_title("per-task slack norms (active tasks only)")
    fig.tight_layout()
    path = f"{base}_wrench_slack.png"
    fig.savefig(path, dpi=110)
    plt.close(fig)
    written.append(path)

    # 2. admittance joint traces with locked shading
    fig, axes = plt.subplots(3, 1, figsize=(9, 7.5), sharex=True)
    qa = data[:, _group(cols, "q_a", n)]
    dqa = data[:, _group(cols, "dq_a", n)]
    dda = data[:, _group(cols, "ddq_a", n)]
    names = twin.joint_names if twin is not None else [f"j{i}" for i in range(n)]
    for i in range(n):
        axes[0].plot(t, qa[:, i], label=names[i], lw=0.9)
        axes[1].plot(t, dqa[:, i], lw=0.9)
        axes[2].plot(t, dda[:, i], lw=0.9)
    if scenario is not None:
        for i in range(n):
            c = axes[0].lines[i].get_color()
            for val in (scenario.spec.ratings.q_min[i], scenario.spec.ratings.q_max[i]):
                if np.isfinite(val):
                    axes[0].axhline(val, color=c, ls=":", lw=0.6, alpha=0.6)
    for i in range(n):
        _shade_locked(axes[0], t, locked[:, i])
    axes[0].set_ylabel("q [rad|m]")
    axes[0].legend(ncol=min(n, 6), fontsize=7, loc="upper right")
    axes[0].set_title("digital-twin joints (grey spans: locked)")
    axes[1].set_ylabel("dq")
    axes[2].set_ylabel("ddq")
    axes[2].set_xlabel("t [s]")
    fig.tight_layout()
    path = f"{base}_admittance.png"
    fig.savefig(path, dpi=110)
    plt.close(fig)
    written.append(path)

    # 3. machine arm joints against their ranges
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(9, 6), sharex=True)
    qm = data[:, _group(cols, "q_m", 6)]
    dqm = data[:, _group(cols, "dq_m", 6)]
    for i in range(6):
        ax1.plot(t, qm[:, i], label=f"q_m{i}", lw=0.9)
    if machine is not None:
        for i in range(6):
            c = ax1.lines[i].get_color()
            for val in (machine.q_min[2 + i], machine.q_max[2 + i]):
                if np.isfinite(val):
                    ax1.axhline(val, color=c, ls=":", lw=0.6, alpha=0.6)
    ax1.set_ylabel("q_m [rad]")
    ax1.legend(ncol=6, fontsize=7, loc="upper right")
    ax1.set_title("machine arm joints (dotted: range limits)")
    for i in range(6):
        ax2.plot(t, dqm[:, i], lw=0.9)
    ax2.set_ylabel("dq_m [rad/s]")
    ax2.set_xlabel("t [s]")
    fig.tight_layout()
    path = f"{base}_machine.png"
    fig.savefig(path, dpi=110)
    plt.close(fig)
    written.append(path)

    # 4. top view: machine hand and carriage paths, Cartesian boxes
    fig, ax = plt.subplots(figsize=(7, 7))
    qp = data[:, _group(cols, "q_p", 2)]
    if machine is not None:
        stride = max(1, len(t) // 2000)
        idx = np.arange(0, len(t), stride)
        hand = np.empty((len(idx), 3))
        for k, r in enumerate(idx):
            q = np.concatenate([qp[r], qm[r]])
            hand[k] = forward_kinematics(machine, q).position
        ax.plot(hand[:, 0], hand[:, 1], "-", lw=1.0, label="hand")
        ax.plot(hand[0, 0], hand[0, 1], "o", ms=5, color="k")
    ax.plot(qp[:, 0], qp[:, 1], "-", lw=1.0, label="carriage")
    if scenario is not None:
        rc = scenario.renderer
        for lb, ub, name in ((rc.ee_box_lb, rc.ee_box_ub, "ee box"),
                             (rc.elbow_box_lb, rc.elbow_box_ub, "elbow box")):
            if np.all(np.isfinite(lb[:2])) and np.all(np.isfinite(ub[:2])):
                ax.add_patch(plt.Rectangle((lb[0], lb[1]), ub[0] - lb[0],
                                           ub[1] - lb[1], fill=False, ls="--",
                                           lw=0.8, label=name))
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal")
    ax.legend(fontsize=8)
    ax.set_title("top view")
    fig.tight_layout()
    path = f"{base}_topview.png"
    fig.savefig(path, dpi=110)
    plt.close(fig)
    written.append(path)

    # 5. solver timing
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    sus = data[:, _col(cols, "solver_us")]
    ax1.plot(t, sus, lw=0.6)
    ax1.set_xlabel("t [s]")
    ax1.set_ylabel("solver [µs]")
    ax1.set_title("solve time per cycle")
    ax2.hist(sus, bins=60)
    ax2.axvline(float(np.mean(sus)), color="k", ls="--", lw=0.8,
                label=f"mean {np.mean(sus):.0f} µs")
    ax2.set_xlabel("solver [µs]")
    ax2.legend(fontsize=8)
    ax2.set_title("distribution")
    fig.tight_layout()
    path = f"{base}_solver.png"
    fig.savefig(path, dpi=110)
    plt.close(fig)
    written.append(path)

    return written
