from typing import List, Optional


class HpAdaptError(Exception):
    """Base class for every error raised by the solver modules."""

    module = "meshfree"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message
        self.iteration: Optional[int] = None

    def tag(self, iteration: int) -> "HpAdaptError":
        """Attach the adaptivity iteration in which the error surfaced."""
        self.iteration = iteration
        return self

    def __str__(self) -> str:
        if self.iteration is None:
            return self.message
        return f"{self.message} (iteration {self.iteration})"


class GenerationOverflowError(HpAdaptError):
    module = "nodegen"


class InsufficientNodesError(HpAdaptError):
    module = "nodegen"


class StencilDegenerateError(HpAdaptError):
    module = "approx"

    def __init__(self, message: str, node_index: Optional[int] = None):
        super().__init__(message)
        self.node_index = node_index


class AssemblyIncompleteError(HpAdaptError):
    module = "system"

    def __init__(self, message: str, node_index: int):
        super().__init__(message)
        self.node_index = node_index


class SolverFailureError(HpAdaptError):
    module = "system"

    def __init__(self, message: str, residual_history: Optional[List[float]] = None):
        super().__init__(message)
        self.residual_history = list(residual_history or [])


class NoDataError(HpAdaptError):
    module = "adapt"


class InvalidLoadingError(HpAdaptError):
    module = "problems"

    def __init__(self, message: str, condition: str):
        super().__init__(message)
        self.condition = condition


class UndefinedNormError(HpAdaptError):
    module = "problems"


class ConfigError(HpAdaptError):
    module = "cli"

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key
