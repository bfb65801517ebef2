"""Exception hierarchy shared by every stage of the pipeline."""


class EgoError(Exception):
    """Base class for all pipeline errors."""


class InvalidInput(EgoError, ValueError):
    pass


class ParseError(InvalidInput):
    pass


class UnsupportedVersion(InvalidInput):
    pass


class IncompleteInput(InvalidInput):
    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = list(missing)


class NoCandidates(InvalidInput):
    pass


class CorruptArtifact(EgoError):
    pass


class Diverged(EgoError, RuntimeError):
    def __init__(self, iteration, loss):
        super().__init__(f"training diverged at iteration {iteration} (loss={loss})")
        self.iteration = iteration
        self.loss = loss
