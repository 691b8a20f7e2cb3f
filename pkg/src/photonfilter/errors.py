"""Exception types shared across the package."""


class PhotonFilterError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(PhotonFilterError):
    """Operator or state dimensions are incompatible."""


class DomainError(PhotonFilterError):
    """An argument lies outside the mathematically valid domain."""


class GridError(PhotonFilterError):
    """Time step and sampling grid are incompatible."""


class ModelError(PhotonFilterError):
    """A physical model violates its construction invariants.

    Carries the list of :class:`~photonfilter.model.Diagnostic` entries that
    describe every violation, not only the first one found.
    """

    def __init__(self, message, diagnostics=()):
        super().__init__(message)
        self.diagnostics = list(diagnostics)


class EmbeddingError(PhotonFilterError):
    """The ancilla embedding is degenerate (a required weight is zero)."""


class ConsistencyError(PhotonFilterError):
    """A quantity that must be real (or conserved) has drifted too far.

    Usually a sign that a filter state was corrupted or the step size is
    far too large.
    """


class NumericalBlowup(PhotonFilterError):
    """State entries became non-finite; retry with a smaller step."""


class RecordError(PhotonFilterError):
    """A measurement record is incompatible with the requested replay."""


class DegenerateLikelihood(PhotonFilterError):
    """The unnormalized filter's normalizer vanished."""


class ParseError(PhotonFilterError):
    """A configuration document could not be parsed."""


class ConfigValidationError(PhotonFilterError):
    """A parsed configuration violates the run schema.

    ``problems`` lists every violation found.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems))
