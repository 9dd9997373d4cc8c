from __future__ import annotations


class DegenerateWeightsError(ValueError):
    """Every log-weight is -inf, there is nothing left to normalize."""


class DegenerateMergeError(DegenerateWeightsError):
    def __init__(self, j: int, l: int, message: str | None = None) -> None:
        self.span = (j, l)
        super().__init__(message or f"all particles were killed while merging node [{j}, {l}]")


class DegenerateFilterError(DegenerateWeightsError):
    def __init__(self, step: int, message: str | None = None) -> None:
        self.step = step
        super().__init__(message or f"all particle weights vanished at step {step}")


class DegenerateRunError(RuntimeError):
    def __init__(self, replication: int, cause: Exception) -> None:
        self.replication = replication
        super().__init__(f"replication {replication} degenerated: {cause}")


class UnsupportedModelError(TypeError):
    pass


class InvalidProposalError(ValueError):
    pass


class ImpossibleObservationError(ValueError):
    def __init__(self, step: int) -> None:
        self.step = step
        super().__init__(f"observation at step {step} has zero likelihood under the grid")


class IntegrationError(ValueError):
    pass
