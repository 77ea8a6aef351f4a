"""Exception hierarchy shared across the framework."""

from __future__ import annotations


class BdgError(Exception):
    """Base class for every framework error."""


class UsageError(BdgError):
    pass


# environment contract
class EnvError(BdgError):
    pass


class InvalidConfig(EnvError):
    def __init__(self, parameter: str, reason: str):
        self.parameter = parameter
        self.reason = reason
        super().__init__(f"invalid config parameter {parameter!r}: {reason}")


class EpisodeFinished(EnvError):
    def __init__(self, message: str = "episode finished"):
        super().__init__(message)


class ActionOutOfRange(EnvError):
    pass


class MissingChannel(EnvError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"observation has no channel {name!r}")


class UnknownEnvironment(EnvError):
    pass


# remote environments
class RemoteEnvError(EnvError):
    pass


class ConnectTimeout(RemoteEnvError):
    pass


class RequestTimeout(RemoteEnvError):
    pass


class VersionMismatch(RemoteEnvError):
    pass


class MalformedReply(RemoteEnvError):
    pass


class ProtocolViolation(RemoteEnvError):
    pass


class RemoteError(RemoteEnvError):
    """The server answered with ``{"t": "error"}``."""


# oracle
class BudgetExceeded(BdgError):
    pass


# binding
class BindingError(BdgError):
    pass


class PatternError(BindingError):
    pass


class AdjacentPlaceholders(PatternError):
    pass


class UnknownPlaceholderType(PatternError):
    pass


class RegistrationError(BindingError):
    pass


class UnboundStep(BindingError):
    pass


class AmbiguousStep(BindingError):
    pass


class MissingAssertion(BindingError):
    pass


class MissingEnvironment(BindingError):
    pass


class UnknownTrainer(BindingError):
    pass


class InvalidTag(BindingError):
    pass


# numerics
class NumericError(BdgError):
    pass


class DimensionMismatch(NumericError, ValueError):
    pass


class NonFiniteGradient(NumericError):
    pass


class NonFiniteLoss(NumericError):
    pass


class LengthMismatch(NumericError, ValueError):
    pass


# model files
class ModelFileError(BdgError):
    pass


class BadMagic(ModelFileError):
    pass


class VersionUnsupported(ModelFileError):
    pass


class TruncatedFile(ModelFileError):
    pass


class ChecksumMismatch(ModelFileError):
    pass


# harness
class MissingModel(BdgError):
    pass


class FingerprintMismatch(BdgError):
    pass


class NoScenarioSelected(BdgError):
    pass
