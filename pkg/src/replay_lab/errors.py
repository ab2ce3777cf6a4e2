"""Exception hierarchy shared by all replay_lab modules."""


class ReplayLabError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(ReplayLabError):
    """Tensor dimensions do not satisfy an operation's requirements."""


class DomainError(ReplayLabError):
    """An input value lies outside an operation's mathematical domain."""


class ContractError(ReplayLabError):
    """A caller violated a documented API contract."""


class ReplayContractError(ContractError):
    """Replay was requested for a class or task the model has not seen."""


class DataError(ReplayLabError):
    """A dataset is empty, inconsistent, or otherwise unusable."""


class FormatError(ReplayLabError):
    """A binary file does not match its declared on-disk format."""


class ConfigError(ReplayLabError):
    """An experiment configuration is invalid."""


class ExportError(ReplayLabError):
    """A results bundle is missing something an export needs."""
