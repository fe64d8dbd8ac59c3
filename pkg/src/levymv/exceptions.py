"""Exception hierarchy shared by the simulation modules."""
from __future__ import annotations


class LevyMVError(Exception):
    """Base class for all package errors."""


class ParameterError(LevyMVError, ValueError):
    """A numeric parameter lies outside its admissible range."""


class ConfigurationError(LevyMVError, ValueError):
    """Objects were combined inconsistently (grid mismatch, wrong flow type, ...)."""


class ContractError(LevyMVError, ValueError):
    """An operation was called outside its documented domain."""


class SizeError(ContractError):
    """Problem size exceeds what an exact solver is allowed to handle."""


class UncoveredCaseError(ContractError):
    """The requested (dimension, moment) pair falls on an excluded boundary."""


class BlowUpError(LevyMVError, ArithmeticError):
    """A particle position became non-finite."""

    def __init__(self, particle: int, time: float):
        super().__init__(f"non-finite position for particle {particle} at t={time:.6g}")
        self.particle = particle
        self.time = time


class ConvergenceError(LevyMVError, RuntimeError):
    """Fixed-point iteration stopped before reaching its tolerance.

    The partially filled report is attached so callers can inspect it.
    """

    def __init__(self, message: str, report):
        super().__init__(message)
        self.report = report
