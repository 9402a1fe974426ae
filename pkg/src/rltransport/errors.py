class ContractError(ValueError):
    """A precondition of a public operation was violated."""


class TrainingError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


class SceneError(ValueError):
    """Unknown scene id or malformed scene description."""
