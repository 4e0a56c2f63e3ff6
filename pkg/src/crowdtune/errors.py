"""Exception hierarchy shared by all modules.

Every exception carries a ``code`` used by the access function when it
converts failures into in-band ``cm_return`` values.
"""

from __future__ import annotations


class CmError(Exception):
    """Base class. ``code`` is the in-band return code (4 = action-internal)."""

    code = 4


class ValidationError(CmError):
    code = 3


class BadKeyPath(ValidationError):
    pass


class NotFound(CmError):
    pass


class CorruptMeta(CmError):
    pass


class AliasConflict(CmError):
    pass


class LockTimeout(CmError):
    pass


class DuplicateModule(CmError):
    pass


class HookFailure(CmError):
    def __init__(self, plugin_id: str, cause: BaseException | str):
        super().__init__(f"hook {plugin_id!r} failed: {cause}")
        self.plugin_id = plugin_id
        self.cause = cause


class StageFailure(CmError):
    def __init__(self, stage: str, output: str = "", point=None):
        super().__init__(f"stage {stage!r} failed: {output.strip()[:500]}")
        self.stage = stage
        self.output = output
        self.point = point


class CompilerNotFound(CmError):
    pass


class StageTimeout(StageFailure):
    pass


class LaunchFailure(StageFailure):
    pass


class EmptyInput(ValidationError):
    pass


class UnknownKey(ValidationError):
    pass


class MissingObjective(ValidationError):
    pass


class EvaluatorFailure(CmError):
    def __init__(self, dim: str, cause: BaseException):
        super().__init__(f"evaluator failed while probing {dim!r}: {cause}")
        self.dim = dim
        self.cause = cause


class InsufficientData(ValidationError):
    pass


class DegenerateFeature(ValidationError):
    pass


class MissingFeature(ValidationError):
    pass


class PredicateMismatch(CmError):
    pass


class NoModels(ValidationError):
    pass


class ArityMismatch(ValidationError):
    pass


class TransportError(CmError):
    pass


class BindFailure(CmError):
    pass
