class LcmopgError(Exception):
    """Base class for all errors raised by lcmopg."""


class ContractViolation(LcmopgError, ValueError):
    """Raised when a caller breaks an operation's precondition."""


class IllPosedHypervolumeError(ContractViolation):
    """Raised when a nondominated point does not strictly dominate the reference point."""


class NonFiniteError(LcmopgError, FloatingPointError):
    """Raised when NaN/Inf shows up in a loss, gradient, head output or parameter."""

    def __init__(self, message: str, diagnostic: dict | None = None) -> None:
        super().__init__(message)
        self.diagnostic = diagnostic or {}


class DivergenceError(NonFiniteError):
    """Raised by the trainers' divergence guard."""

    def __init__(self, message: str, iteration: int, checkpoint_path=None, diagnostic: dict | None = None) -> None:
        super().__init__(message, diagnostic)
        self.iteration = iteration
        self.checkpoint_path = checkpoint_path


class RiccatiConvergenceError(LcmopgError, ArithmeticError):
    def __init__(self, residual: float, iterations: int) -> None:
        super().__init__(f"Riccati iteration did not converge after {iterations} steps (residual {residual:.3e})")
        self.residual = residual
        self.iterations = iterations


class CheckpointError(LcmopgError):
    """Unreadable, version-incompatible or dimension-mismatched checkpoint."""
