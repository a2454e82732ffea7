"""Exception hierarchy shared by all modules.

Each class carries the CLI exit code it maps to.
"""


class SecureCbfError(Exception):
    exit_code = 5


class InvalidInputError(SecureCbfError, ValueError):
    exit_code = 2


class ConfigError(InvalidInputError):
    exit_code = 2


class AttackModelViolated(SecureCbfError):
    """No sensor combination is consistent with the data.

    Either more than ``s`` sensors are corrupted or the residual threshold is
    too tight for the measurement noise.
    """

    exit_code = 4


class KernelConditionViolated(SecureCbfError):
    """Some plausible affine subspace is not annihilated by the CBF rows."""

    exit_code = 3


class Infeasible(SecureCbfError):
    """The safety QP has an empty feasible set."""

    exit_code = 3

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class PreconditionError(SecureCbfError):
    exit_code = 5


class SolverFailure(SecureCbfError):
    exit_code = 5
