"""Exception hierarchy.

Every error raised on purpose by the package derives from ``GenAbsaError`` so
callers can catch the whole family at once.
"""

from __future__ import annotations


class GenAbsaError(Exception):
    pass


class UnknownLabel(GenAbsaError, ValueError):
    pass


class MalformedCorpus(GenAbsaError, ValueError):
    pass


class SchemaViolation(GenAbsaError, ValueError):
    pass


class UnknownCategory(GenAbsaError, ValueError):
    pass


class EmptySplit(GenAbsaError, ValueError):
    pass


class TrialNotSubset(GenAbsaError, ValueError):
    def __init__(self, ids: list[str]):
        self.ids = list(ids)
        shown = ", ".join(self.ids[:10])
        more = "" if len(self.ids) <= 10 else f" (+{len(self.ids) - 10} more)"
        super().__init__(f"trial examples not found in train: {shown}{more}")


class EmptyTrain(GenAbsaError, ValueError):
    pass


class NoClasses(GenAbsaError, ValueError):
    pass


class IncompatibleMode(GenAbsaError, ValueError):
    pass


class MarkerInText(GenAbsaError, ValueError):
    pass


class MissingTarget(GenAbsaError, ValueError):
    pass


class UnexpectedTarget(GenAbsaError, ValueError):
    pass


class SequenceTooLong(GenAbsaError, ValueError):
    pass


class EmptyTrainingSet(GenAbsaError, ValueError):
    pass


class PromptTooLong(GenAbsaError, ValueError):
    pass


class MissingPrediction(GenAbsaError, KeyError):
    def __str__(self) -> str:
        # KeyError quotes its argument; keep the message readable
        return str(self.args[0]) if self.args else ""


class EmptyInput(GenAbsaError, ValueError):
    pass


class ShapeMismatch(GenAbsaError, ValueError):
    pass


class TooFewSnapshots(GenAbsaError, ValueError):
    pass


class FormatError(GenAbsaError, ValueError):
    pass


class ExperimentFailed(GenAbsaError, RuntimeError):
    def __init__(self, failures: dict[str, str]):
        self.failures = dict(failures)
        super().__init__("failed jobs: " + ", ".join(sorted(self.failures)))
