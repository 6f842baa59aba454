"""Exception types shared across the engine."""


class DeconError(Exception):
    """Base class for all engine errors."""


class UnknownContext(DeconError):
    """A table model was queried with a context it has no row for and no default."""


class ModelUnavailable(DeconError):
    """An external model process failed, timed out, or broke protocol."""


class EmptyCorpus(DeconError):
    """An n-gram model was asked to train on an empty corpus."""


class VocabTooSmall(DeconError):
    """Blocking requires at least two tokens in the vocabulary."""


class DegenerateDistribution(DeconError):
    """After suppression no finite logit remains to choose from."""


class EmptyTrace(DeconError):
    """A detection score was requested for a trace with no generated tokens."""


class DegenerateFixture(DeconError):
    """The synthetic lab could not produce a fixture with base accuracy in (0, 1)."""


class ExtractionFailed(DeconError):
    """An answer extractor found nothing to extract in a piece of text."""


class DatasetError(DeconError):
    """A dataset file is missing, empty, or malformed."""
