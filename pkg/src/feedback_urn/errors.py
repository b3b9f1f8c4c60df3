"""Exception types raised across the package."""


class FeedbackUrnError(Exception):
    """Base class for all package errors."""


class EmptyUrn(FeedbackUrnError):
    """A draw was requested from an urn whose total mass is zero."""


class DecayModeMismatch(FeedbackUrnError):
    """Per-ball binomial decay was requested on non-integer masses."""


class DegenerateMatrix(FeedbackUrnError):
    """Every entry of a replacement matrix is zero."""


class NoValidRoot(FeedbackUrnError):
    """No root of the limit polynomial lies in [0, 1] with negative slope."""


class DegenerateRates(FeedbackUrnError):
    """Mixed parameters carry no reported and no discovered signal."""


class NegativeRadicand(FeedbackUrnError):
    """The closed form was evaluated outside the region where it is real."""


class FutureEvent(FeedbackUrnError):
    """An intensity was requested at a time not after every history event."""


class EmptyWindow(FeedbackUrnError):
    """A fit was requested on a window that holds no events."""


class NonFinite(FeedbackUrnError):
    """EM produced a non-finite parameter."""


class ConfigError(FeedbackUrnError):
    """A scenario or config file failed validation."""


class SchemaMismatch(FeedbackUrnError):
    """A CSV file does not follow the run-log schema."""


class OutOfRegimeWarning(UserWarning):
    """A closed form was evaluated outside the parameter regime it was derived for."""


class UnstableModelWarning(UserWarning):
    """An aftershock model with productivity theta >= 1 (explosive branching)."""
