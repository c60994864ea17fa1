"""Exception hierarchy.

Every error raised on purpose by the package derives from ``PoseTransError``
so the CLI can map it to an exit code without catching unrelated bugs.
"""


class PoseTransError(Exception):
    pass


class ValidationError(PoseTransError, ValueError):
    """Bad input: fails a precondition before any real work happens."""


class MalformedFile(ValidationError):
    pass


class SchemaError(ValidationError):
    def __init__(self, message, annotation_id=None):
        if annotation_id is not None:
            message = f"{message} (annotation id {annotation_id})"
        super().__init__(message)
        self.annotation_id = annotation_id


class DimensionMismatch(ValidationError):
    pass


class LabelOutOfRange(ValidationError):
    pass


class DegenerateBox(ValidationError):
    pass


class InvalidScale(ValidationError):
    pass


class FullMask(ValidationError):
    pass


class EmptyImage(ValidationError):
    pass


class EmptyPool(ValidationError):
    pass


class NoLabeledKeypoints(ValidationError):
    pass


class NoGroundTruth(ValidationError):
    pass


class InsufficientData(ValidationError):
    def __init__(self, message, count=None, required=None):
        if count is not None:
            message = f"{message}: got {count}" + (f", need {required}" if required is not None else "")
        super().__init__(message)
        self.count = count
        self.required = required


class NonConvergent(PoseTransError, RuntimeError):
    pass


class SingularMatrix(PoseTransError, RuntimeError):
    pass


class NoTransformableLimb(PoseTransError, RuntimeError):
    pass


class DegenerateComponent(PoseTransError, RuntimeError):
    pass


class AllZeroDensity(PoseTransError, RuntimeError):
    pass


class Diverged(PoseTransError, RuntimeError):
    pass
