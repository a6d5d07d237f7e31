"""Exception types shared across the pipeline."""


class OptdialogError(Exception):
    """Base class for all library errors."""


class NonPositiveDimension(OptdialogError):
    """A box width or height is zero or negative after format conversion."""


class MalformedRecord(OptdialogError):
    """A data file record failed to parse or violated an invariant."""

    def __init__(self, path, lineno: int, reason: str):
        super().__init__(f"{path}:{lineno}: {reason}")
        self.path = str(path)
        self.lineno = lineno
        self.reason = reason


class DuplicateImageEntry(MalformedRecord):
    """The exact same detection record appeared twice for one image."""


class ParseError(OptdialogError):
    """An agent reply did not satisfy the output contract."""


class MissingCategory(ParseError):
    """No Category field could be extracted from the reply."""


class MissingReasoning(ParseError):
    """No Reasoning field could be extracted from the reply."""


class MissingVerdict(ParseError):
    """A vision-analyst reply carried no Verdict line."""


class UnknownLabel(ParseError):
    """The stated category could not be resolved to any known class."""

    def __init__(self, candidate: str, detail: str = ""):
        msg = f"unknown label {candidate!r}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.candidate = candidate


class AmbiguousLabel(UnknownLabel):
    """Two or more classes tie as the nearest match for the stated category."""

    def __init__(self, candidate: str, candidates: list[str]):
        super().__init__(candidate, "tied between " + ", ".join(candidates))
        self.candidates = list(candidates)


class OrderViolation(OptdialogError):
    """A turn was requested out of the fixed role order."""


class BackendUnavailable(OptdialogError):
    """The chat backend could not be reached after transport retries."""


class MalformedScript(OptdialogError):
    """A mock-script file failed to parse or violated its schema."""


class DialogueFailed(OptdialogError):
    """All parse retries and fallbacks were exhausted for an image."""


class UnknownImageId(OptdialogError):
    """A prediction references an image that is not in the manifest."""


class EmptyDataset(OptdialogError):
    """Metrics were requested over zero evaluated samples."""


class InvalidConfig(OptdialogError):
    """A configuration value is missing, malformed, or out of range."""
