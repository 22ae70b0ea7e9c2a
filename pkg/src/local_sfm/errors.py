"""Exception hierarchy shared by the pipeline stages."""


class LocalSfMError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 3


class InputError(LocalSfMError):
    """Bad user input: files, manifests, configuration."""

    exit_code = 2


class NumericalError(LocalSfMError):
    """A numerical routine could not produce a meaningful answer."""

    exit_code = 3


class NonPositiveDepth(NumericalError):
    pass


class DegenerateTranslation(NumericalError):
    pass


class IllConditioned(NumericalError):
    pass


class DegenerateConfiguration(NumericalError):
    pass


class DegeneratePair(NumericalError):
    pass


class InsufficientCorrespondences(NumericalError):
    def __init__(self, frame, count):
        super().__init__(f"frame {frame}: only {count} usable correspondences (need >= 5)")
        self.frame = frame
        self.count = count


class PoolInvalid(NumericalError):
    pass


class RayMissesFrustum(NumericalError):
    pass


class EmptyOverlap(NumericalError):
    pass


class InvalidSpec(InputError):
    pass


class MissingFile(InputError):
    pass


class DimensionMismatch(InputError):
    pass


class MalformedHeader(InputError):
    pass
