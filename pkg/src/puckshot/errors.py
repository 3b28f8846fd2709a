"""Exception hierarchy shared across the package."""


class PuckshotError(Exception):
    """Base class for all library errors (CLI maps these to exit code 2)."""


class TooFewSamples(PuckshotError):
    pass


class NonFinite(PuckshotError):
    pass


class SingularCondition(PuckshotError):
    pass


class CoincidentCenters(PuckshotError):
    pass


class OutOfTable(PuckshotError):
    pass


class Unreachable(PuckshotError):
    pass


class EmptyMode(PuckshotError):
    pass


class NoFeasibleShot(PuckshotError):
    """No candidate angle cleared the chance constraint.

    Carries the best-scoring candidate for diagnostics.
    """

    def __init__(self, message, best_u=None, best_g_hat=None):
        super().__init__(message)
        self.best_u = best_u
        self.best_g_hat = best_g_hat


class Diverged(PuckshotError):
    pass


class ConfigError(PuckshotError):
    pass


class ArtifactMismatch(PuckshotError):
    pass
