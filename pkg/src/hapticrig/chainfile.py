"""Reading and writing chain description files.

A ``.chain`` file is an INI document: one ``[chain]`` section with global
data and one ``[joint.<id>]`` section per row, in base-to-tip order.

  [chain]
  name          free-form identifier
  gravity       3 floats, world frame (m/s^2)
  base_position 3 floats (m)
  base_rpy      yaw pitch roll in degrees, world_R_frame0 = Rz Ry Rx

  [joint.<id>]
  kind          revolute | prismatic
  theta, alpha  DH angle constants in degrees
  d, a          DH length constants in meters
  q_min, q_max  position rating (rad or m); inf allowed on continuous joints
  dq_max        velocity rating (> 0, inf allowed)
  ddq_max       acceleration rating (> 0, inf allowed)
  mass          link mass (kg, > 0)
  com           3 floats, link frame (m)
  inertia       xx yy zz xy xz yz about the com, link frame (kg m^2)

All angles inside the API are radians; degrees appear only in files, where
they keep the DH constants legible (90, 180, -90).
"""

from __future__ import annotations

import configparser
import os
from importlib import resources

import numpy as np

from .chain import DHRow, KinematicChain
from .errors import ChainFileError

_CHAIN_KEYS = {"name", "gravity", "base_position", "base_rpy"}
_JOINT_KEYS = {"kind", "theta", "d", "a", "alpha", "q_min", "q_max",
               "dq_max", "ddq_max", "mass", "com", "inertia"}


def _floats(raw: str, n: int, path: str, key: str) -> list[float]:
    parts = raw.replace(",", " ").split()
    if len(parts) != n:
        raise ChainFileError(path, f"expected {n} numbers, got {len(parts)}", key=key)
    try:
        return [float(p) for p in parts]
    except ValueError as e:
        raise ChainFileError(path, f"bad number: {e}", key=key) from None


def _float(section, key: str, path: str, default: float | None = None) -> float:
    if key not in section:
        if default is not None:
            return default
        raise ChainFileError(path, "missing required key", key=key)
    try:
        return float(section[key])
    except ValueError:
        raise ChainFileError(path, f"bad number {section[key]!r}", key=key) from None


def parse_chain(text: str, path: str = "<string>") -> KinematicChain:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ChainFileError(path, f"INI parse failure: {e}") from None
    if "chain" not in cp:
        raise ChainFileError(path, "missing [chain] section")
    head = cp["chain"]
    for k in head:
        if k not in _CHAIN_KEYS:
            raise ChainFileError(path, "unknown key in [chain]", key=k)
    name = head.get("name", os.path.splitext(os.path.basename(path))[0])
    gravity = _floats(head.get("gravity", "0 0 -9.81"), 3, path, "gravity")
    base_position = _floats(head.get("base_position", "0 0 0"), 3, path, "base_position")
    ypr = _floats(head.get("base_rpy", "0 0 0"), 3, path, "base_rpy")
    from .chain import rotation_rpy
    base_rotation = rotation_rpy(*np.deg2rad(ypr))

    rows: list[DHRow] = []
    for sec in cp.sections():
        if sec == "chain":
            continue
        if not sec.startswith("joint."):
            raise ChainFileError(path, f"unexpected section [{sec}]")
        s = cp[sec]
        for k in s:
            if k not in _JOINT_KEYS:
                raise ChainFileError(path, f"unknown key in [{sec}]", key=k)
        if "kind" not in s:
            raise ChainFileError(path, f"[{sec}] missing kind", key="kind")
        com = _floats(s.get("com", "0 0 0"), 3, path, "com")
        inert = _floats(s.get("inertia", "1e-6 1e-6 1e-6 0 0 0"), 6, path, "inertia")
        try:
            rows.append(DHRow(
                name=sec[len("joint."):],
                kind=s["kind"].strip(),
                theta_offset=float(np.deg2rad(_float(s, "theta", path, 0.0))),
                d=_float(s, "d", path, 0.0),
                a=_float(s, "a", path, 0.0),
                alpha=float(np.deg2rad(_float(s, "alpha", path, 0.0))),
                q_min=_float(s, "q_min", path, -np.inf),
                q_max=_float(s, "q_max", path, np.inf),
                dq_max=_float(s, "dq_max", path, np.inf),
                ddq_max=_float(s, "ddq_max", path, np.inf),
                mass=_float(s, "mass", path, 1.0),
                com=(com[0], com[1], com[2]),
                inertia=tuple(inert),
            ))
        except ChainFileError:
            raise
        except Exception as e:  # DHRow contract violations carry joint context
            raise ChainFileError(path, str(e)) from None
    if not rows:
        raise ChainFileError(path, "no [joint.*] sections")
    return KinematicChain(name, rows, gravity=gravity,
                          base_position=base_position, base_rotation=base_rotation)


def load_chain(name_or_path: str) -> KinematicChain:
    """Load a chain by file path or by shipped description name.

    Bare names without a path separator or .chain suffix resolve against the
    descriptions bundled with the package (hapticgiant, excavator, door,
    cartesian6).
    """
    p = str(name_or_path)
    if os.sep in p or p.endswith(".chain") or os.path.exists(p):
        try:
            with open(p, "r", encoding="utf-8") as f:
                return parse_chain(f.read(), path=p)
        except OSError as e:
            raise ChainFileError(p, f"cannot read: {e}") from None
    ref = resources.files("hapticrig.data").joinpath(p + ".chain")
    if not ref.is_file():
        raise ChainFileError(p, "no such shipped chain description")
    return parse_chain(ref.read_text(encoding="utf-8"), path=p + ".chain")


def format_chain(chain: KinematicChain) -> str:
    """Serialize back to the file format (round-trips through parse_chain)."""
    def numlist(v):
        return " ".join(repr(float(x)) for x in v)

    # recover yaw/pitch/roll from the base rotation
    R = chain.base_rotation
    pitch = float(np.arcsin(min(1.0, max(-1.0, -R[2, 0]))))
    if abs(abs(R[2, 0]) - 1.0) < 1e-12:
        yaw = float(np.arctan2(-R[0, 1], R[1, 1]))
        roll = 0.0
    else:
        yaw = float(np.arctan2(R[1, 0], R[0, 0]))
        roll = float(np.arctan2(R[2, 1], R[2, 2]))
    out = ["[chain]",
           f"name = {chain.name}",
           f"gravity = {numlist(chain.gravity)}",
           f"base_position = {numlist(chain.base_position)}",
           f"base_rpy = {numlist(np.rad2deg([yaw, pitch, roll]))}",
           ""]
    for r in chain.rows:
        out.append(f"[joint.{r.name}]")
        out.append(f"kind = {r.kind}")
        out.append(f"theta = {np.rad2deg(r.theta_offset)!r}")
        out.append(f"d = {r.d!r}")
        out.append(f"a = {r.a!r}")
        out.append(f"alpha = {np.rad2deg(r.alpha)!r}")
        out.append(f"q_min = {r.q_min!r}")
        out.append(f"q_max = {r.q_max!r}")
        out.append(f"dq_max = {r.dq_max!r}")
        out.append(f"ddq_max = {r.ddq_max!r}")
        out.append(f"mass = {r.mass!r}")
        out.append(f"com = {numlist(r.com)}")
        out.append(f"inertia = {numlist(r.inertia)}")
        out.append("")
    return "\n".join(out)


def save_chain(chain: KinematicChain, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_chain(chain))
