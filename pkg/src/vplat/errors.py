"""Error cases raised by operators, parsers and workspace plumbing.

The class name is the error case name surfaced on the CLI.
"""


class VplatError(Exception):
    """Base class; ``name`` is the machine-readable error case."""

    @property
    def name(self) -> str:
        return type(self).__name__


# -- asset tree ---------------------------------------------------------

class NotFound(VplatError):
    pass


class NotContainable(VplatError):
    pass


class DuplicateName(VplatError):
    pass


class CannotRemoveRoot(VplatError):
    pass


class CannotCloneRoot(VplatError):
    pass


class NotAnAncestor(VplatError):
    pass


class NoFeatureModelInScope(VplatError):
    pass


# -- feature models -----------------------------------------------------

class DuplicateFeatureName(VplatError):
    pass


class CannotRemoveUnassigned(VplatError):
    pass


class CannotMoveIntoDescendant(VplatError):
    pass


class FeatureModelAlreadyPresent(VplatError):
    pass


# -- traces -------------------------------------------------------------

class SelfTrace(VplatError):
    pass


class NoTrace(VplatError):
    pass


class NotAClone(VplatError):
    pass


# -- parsers ------------------------------------------------------------

class ParseError(VplatError):
    pass


class BadIndent(ParseError):
    pass


class MultipleRoots(ParseError):
    pass


class EmptyDocument(ParseError):
    pass


class BadFeatureName(ParseError):
    pass


class UnbalancedAnnotation(ParseError):
    pass


class MismatchedEnd(ParseError):
    pass


class OverlapWithoutNesting(ParseError):
    pass


class BadMappingLine(ParseError):
    pass


class UnknownFile(VplatError):
    pass


class PcSyntaxError(ParseError):
    pass


# -- workspace / replay / metrics ---------------------------------------

class IoFailure(VplatError):
    pass


class CorruptState(VplatError):
    pass


class LockHeld(VplatError):
    pass


class UnsupportedChange(VplatError):
    pass


class NoFeatureOps(VplatError):
    pass
