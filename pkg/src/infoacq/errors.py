"""Exception types shared across the solver and simulator modules."""


class InfoAcqError(Exception):
    """Base class for all package errors."""


class InvalidParams(InfoAcqError):
    """Model parameters or preconditions violated."""


class CostRangeError(InfoAcqError):
    """The inverse marginal cost does not attain the requested value."""


class DomainError(InfoAcqError):
    """Argument outside the admissible domain of an operation."""


class DegenerateDynamics(InfoAcqError):
    """Variance dynamics degenerate to linear growth (no finite equilibrium)."""


class StepSizeError(InfoAcqError):
    """Requested integration step violates the stability guard."""


class NoConvergence(InfoAcqError):
    """Iterative solver did not converge; diagnostics attached.

    Attributes carry the best iterate found so far where applicable.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class FootPointEscape(InfoAcqError):
    """A semi-Lagrangian foot point left the state interval (dt too large)."""


class ConcavityViolation(InfoAcqError):
    """Slope post-processing had to move a slope too far (grid under-resolved)."""


class SlopeOutOfRange(InfoAcqError):
    """Value-table slope outside its provable range (corrupted table)."""


class CaseMismatch(InfoAcqError):
    """Equilibrium sits too close to the activation threshold to pick a branch."""

    def __init__(self, message, inactive_value=None, active_value=None):
        super().__init__(message)
        self.inactive_value = inactive_value
        self.active_value = active_value


class NonSmoothPoint(InfoAcqError):
    """Evaluation point sits on the kink of the acquisition response."""


class SingularJacobian(InfoAcqError):
    """Equilibrium Jacobian numerically singular."""


class SignMismatch(InfoAcqError):
    """A proven sensitivity sign was not reproduced (implementation bug)."""


class NegativeRadicand(InfoAcqError):
    """Closed-form slope radicand went negative (inconsistent inputs)."""


class GammaOutOfRange(InfoAcqError):
    """Variance argument outside [0, gamma_max]."""


class NumericalBlowup(InfoAcqError):
    """Simulated state exceeded the blow-up diagnostic bound."""


class OrderingViolation(InfoAcqError):
    """Benchmark policy ordering violated beyond statistical tolerance."""
