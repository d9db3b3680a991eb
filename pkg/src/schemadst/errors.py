"""Exception taxonomy shared across the package."""


class SchemaDstError(Exception):
    """Base class for all package errors."""


class ParseError(SchemaDstError):
    """Malformed input file (bad JSON, wrong layout)."""


class ValidationError(SchemaDstError):
    """Structurally valid input that violates a data invariant."""


class ConfigError(SchemaDstError):
    """Infeasible or inconsistent configuration."""


class UnbuildableExampleError(SchemaDstError):
    """Sequence 1 alone does not fit the maximum input length."""


class ConsistencyError(SchemaDstError):
    """Internal mismatch between predictions and schema elements."""


class TrainingDivergedError(SchemaDstError):
    """Non-finite loss encountered during optimization."""

    def __init__(self, step: int, lr: float, batch_keys):
        self.step = step
        self.lr = lr
        self.batch_keys = list(batch_keys)
        super().__init__(
            f"non-finite loss at step {step} (lr={lr:.3g}); "
            f"first batch keys: {self.batch_keys[:4]}"
        )
