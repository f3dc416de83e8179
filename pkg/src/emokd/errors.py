"""Exception hierarchy.

Every error carries the process exit code the CLI maps it to:
2 usage/config, 3 missing artifact, 4 training failure, 5 IO/client failure.
Data and shape errors default to 2 since they stem from bad inputs.
"""
from __future__ import annotations


class EmoKDError(Exception):
    exit_code = 2


class InvalidInput(EmoKDError, ValueError):
    pass


class InvalidTemperature(InvalidInput):
    pass


class InvalidAlpha(InvalidInput):
    pass


class ShapeError(InvalidInput):
    pass


class OutOfVocabulary(InvalidInput):
    def __init__(self, label: str, space_name: str | None = None):
        self.label = label
        self.space_name = space_name
        where = f" in label space {space_name!r}" if space_name else ""
        super().__init__(f"label {label!r} not found{where}")


class UnparseableResponse(InvalidInput):
    pass


class LayoutError(InvalidInput):
    pass


class EmptyDataset(InvalidInput):
    pass


class SplitTooSmall(InvalidInput):
    pass


class InvalidGrid(InvalidInput):
    pass


class InfeasibleSpec(InvalidInput):
    pass


class ConfigError(InvalidInput):
    pass


class SchemaError(InvalidInput):
    pass


class DuplicateSample(SchemaError):
    def __init__(self, sample_id: str, path=None):
        self.sample_id = sample_id
        where = f" in {path}" if path else ""
        super().__init__(f"duplicate sample_id {sample_id!r}{where}")


class ParseError(InvalidInput):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class MissingArtifact(EmoKDError):
    exit_code = 3


class TrainingDiverged(EmoKDError):
    exit_code = 4

    def __init__(self, epoch: int, message: str = "non-finite loss"):
        self.epoch = epoch
        super().__init__(f"training diverged at epoch {epoch}: {message}")


class ClientError(EmoKDError):
    exit_code = 5


class GenerationError(ClientError):
    def __init__(self, sample_id: str, message: str):
        self.sample_id = sample_id
        super().__init__(f"generation failed for {sample_id!r}: {message}")


class ExtractionError(ClientError):
    def __init__(self, failures: dict[str, str]):
        self.failures = dict(failures)
        listing = ", ".join(sorted(self.failures))
        super().__init__(f"feature extraction failed for {len(self.failures)} image(s): {listing}")
