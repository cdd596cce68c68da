"""Exception hierarchy shared by every pipeline stage."""


class ThreadSimError(Exception):
    """Base class for all harness errors."""


# corpus
class EmptyInput(ThreadSimError):
    pass


class CycleDetected(ThreadSimError):
    pass


# scenario
class TargetNotFound(ThreadSimError):
    pass


class MissingHistory(ThreadSimError):
    pass


class OversizeContext(ThreadSimError):
    pass


# gateway
class GatewayError(ThreadSimError):
    pass


class BackendUnavailable(GatewayError):
    pass


class TransientBackendError(GatewayError):
    """Retryable failure (rate limit, 5xx, dropped connection)."""


class AuthError(GatewayError):
    pass


class BudgetExceeded(GatewayError):
    pass


class EmptyText(GatewayError):
    pass


# classify
class MalformedReply(ThreadSimError):
    pass


# textstats
class EmptyCorpus(ThreadSimError):
    pass


class InsufficientData(ThreadSimError):
    pass


class TooFewShared(ThreadSimError):
    pass


# embedspace
class ZeroVector(ThreadSimError):
    pass


class DimMismatch(ThreadSimError):
    pass


class MissingCounterpart(ThreadSimError):
    pass


class SingletonGroup(ThreadSimError):
    pass


class PerplexityTooLarge(ThreadSimError):
    pass


# detector
class NonFinite(ThreadSimError):
    pass


class EmptyTestSet(ThreadSimError):
    pass


class ClassTooSmall(ThreadSimError):
    pass


# cli
class ConfigError(ThreadSimError):
    pass
