from __future__ import annotations


class UnitPromptError(Exception):
    """Base error; ``exit_code`` is what the CLI returns for it."""

    exit_code = 2


# ---- validation family (exit 1) ----

class ValidationError(UnitPromptError):
    exit_code = 1


class ConfigError(ValidationError):
    pass


class UsageError(ValidationError):
    pass


class InputPathError(ValidationError):
    def __init__(self, path, message: str = "path does not exist") -> None:
        self.path = str(path)
        super().__init__(f"{message}: {self.path}")


class UnitParseError(ValidationError):
    def __init__(self, line: int, token: int, column: int, text: str) -> None:
        self.line = line
        self.token = token
        self.column = column
        self.text = text
        super().__init__(
            f"line {line}, token {token} (column {column}): not a unit id: {text!r}"
        )


class VocabularyError(ValidationError):
    pass


class SplitError(ValidationError):
    pass


class AlignmentError(ValidationError):
    pass


class CheckpointMismatchError(ValidationError):
    pass


# ---- runtime family (exit 2) ----

class ShapeError(UnitPromptError, ValueError):
    pass


class LengthError(UnitPromptError, ValueError):
    pass


class PromptLengthError(LengthError):
    pass


class DegenerateBatchError(UnitPromptError, ValueError):
    pass


class TrainingError(UnitPromptError):
    def __init__(self, step: int, message: str) -> None:
        self.step = step
        super().__init__(f"step {step}: {message}")


class FrozenBackboneError(UnitPromptError):
    pass


class CheckpointError(UnitPromptError):
    pass


class CorpusIOError(UnitPromptError):
    def __init__(self, path, exc: BaseException) -> None:
        self.path = str(path)
        super().__init__(f"{self.path}: {exc}")


__all__ = [
    "AlignmentError",
    "CheckpointError",
    "CheckpointMismatchError",
    "ConfigError",
    "CorpusIOError",
    "DegenerateBatchError",
    "FrozenBackboneError",
    "InputPathError",
    "LengthError",
    "PromptLengthError",
    "ShapeError",
    "SplitError",
    "TrainingError",
    "UnitParseError",
    "UnitPromptError",
    "UsageError",
    "ValidationError",
    "VocabularyError",
]
