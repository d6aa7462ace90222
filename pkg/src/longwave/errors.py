"""Exception types shared across the package."""


class LongwaveError(Exception):
    """Base class for all package errors."""


class ParameterError(LongwaveError, ValueError):
    """A configuration value is outside its admissible range."""


class ShapeError(LongwaveError, ValueError):
    """Array shapes are inconsistent with each other or with a contract."""


class SolverBlowupError(LongwaveError, FloatingPointError):
    """A time integrator produced non-finite values."""

    def __init__(self, message: str, time: float):
        super().__init__(f"{message} (t={time:.6g})")
        self.time = time


class DiscretizationError(LongwaveError):
    """A local RBF-FD stencil could not be assembled reliably."""

    def __init__(self, message: str, node: int):
        super().__init__(f"{message} (node {node})")
        self.node = node


class CorruptionError(LongwaveError, IOError):
    """A stored dataset failed its size or checksum verification."""


class RolloutDivergence(LongwaveError, FloatingPointError):
    """A model emitted non-finite values while rolling forward."""

    def __init__(self, step: int):
        super().__init__(f"non-finite prediction at rollout step {step}")
        self.step = step
