"""Exception types raised across the pipeline."""


class KnowflowError(Exception):
    """Base class; ``code`` is the machine-readable identifier used by the CLI."""

    code = "error"


class MalformedInputError(KnowflowError):
    code = "malformed_input"

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class NotFoundError(KnowflowError, KeyError):
    code = "not_found"

    def __str__(self):
        return str(self.args[0]) if self.args else "not found"


class EpochViolationError(KnowflowError):
    code = "epoch_violation"


class SingularFitError(KnowflowError):
    code = "singular_fit"

    def __init__(self, message, dropped=()):
        super().__init__(message)
        self.dropped = list(dropped)


class DegenerateNormalizationError(KnowflowError):
    code = "degenerate_normalization"


class ZeroVarianceError(KnowflowError):
    code = "zero_variance"

    def __init__(self, field):
        super().__init__(f"field {field!r} has zero variance")
        self.field = field


class PerfectSeparationError(KnowflowError):
    code = "perfect_separation"


class ConvergenceError(KnowflowError):
    code = "no_convergence"

    def __init__(self, message, iterations=None, gradient_norm=None):
        super().__init__(message)
        self.iterations = iterations
        self.gradient_norm = gradient_norm


class NoEventsError(KnowflowError):
    code = "no_events"


class SingleClusterError(KnowflowError):
    code = "single_cluster"


class InfeasibleConfigError(KnowflowError):
    code = "infeasible_config"


class ConfigError(KnowflowError):
    code = "config_error"


class StaleArtifactError(KnowflowError):
    code = "stale_artifact"
