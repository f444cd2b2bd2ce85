"""Exception types shared across the package."""

from __future__ import annotations


class HapticRigError(Exception):
    """Base class for all package errors."""


class ContractViolation(HapticRigError):
    """An operation was called with inputs violating its preconditions."""


class ChainFileError(HapticRigError):
    """Malformed chain or scenario description file."""

    def __init__(self, path: str, detail: str, key: str | None = None):
        self.path = path
        self.key = key
        self.detail = detail
        where = f"{path}" if key is None else f"{path} [{key}]"
        super().__init__(f"{where}: {detail}")


class IkError(HapticRigError):
    """Base class for inverse-kinematics failures."""


class UnreachableTargetError(IkError):
    """Target pose lies outside the reachable set (explicit no-solution)."""


class DegenerateOrientationError(IkError):
    """Orientation decomposition is singular (elevation sum at 0 or pi)."""


class PlantHaltedError(HapticRigError):
    """The simulated plant received non-finite commands and halted."""
