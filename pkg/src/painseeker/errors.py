"""Exception hierarchy.

Input problems (bad files, bad arguments) derive from :class:`InputError` and
map to CLI exit code 2; numerical failures derive from
:class:`ComputationError` and map to exit code 1.
"""


class PainSeekerError(Exception):
    exit_code = 1


class InputError(PainSeekerError, ValueError):
    exit_code = 2


class ComputationError(PainSeekerError, RuntimeError):
    exit_code = 1


# dataset
class MissingFile(InputError, FileNotFoundError):
    pass


class MalformedRow(InputError):
    def __init__(self, line: int, content: str, reason: str = ""):
        self.line = line
        self.content = content
        msg = f"line {line}: malformed row {content!r}"
        if reason:
            msg += f" ({reason})"
        super().__init__(msg)


class DuplicateImageId(InputError):
    pass


class EmptyImage(InputError):
    pass


class NonFiniteStats(ComputationError):
    pass


class InvalidRegionIndex(InputError):
    pass


# annotation
class WrongVoteCount(InputError):
    pass


class WrongComponentCount(InputError):
    pass


class AnnotationError(InputError):
    pass


# model / losses
class ShapeMismatch(InputError):
    pass


class NonFiniteLogit(ComputationError):
    pass


class NotOneHot(InputError):
    pass


class KhOutOfRange(InputError):
    pass


class BatchMismatch(InputError):
    pass


class NonFiniteGradient(ComputationError):
    pass


# training
class SingleClassTrainSet(InputError):
    pass


class NonFiniteLoss(ComputationError):
    def __init__(self, epoch: int, step: int, detail: str = ""):
        self.epoch = epoch
        self.step = step
        super().__init__(f"non-finite loss at epoch {epoch}, step {step}" + (f": {detail}" if detail else ""))


# baselines
class OutOfBounds(InputError):
    pass


class ImageTooSmallForRadius(InputError):
    pass


class SingleClass(InputError):
    pass


class DimensionMismatch(InputError):
    pass


# evaluation
class TooFewRats(InputError):
    pass


class LengthMismatch(InputError):
    pass


class EmptyEvaluation(InputError):
    pass
