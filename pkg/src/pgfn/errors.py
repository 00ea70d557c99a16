"""Exception types shared across the package."""


class PgfnError(Exception):
    """Base class for all package errors."""


# -- molecule graph ----------------------------------------------------------

class StemOccupied(PgfnError):
    pass


class UnknownFragment(PgfnError):
    pass


class EmptyMolecule(PgfnError):
    pass


class LengthMismatch(PgfnError):
    pass


class ParseError(PgfnError):
    """Malformed serialized molecule, vocabulary, or dataset text."""


class VocabMismatch(PgfnError):
    pass


class InvariantViolation(PgfnError):
    pass


# -- numerics ----------------------------------------------------------------

class ShapeMismatch(PgfnError):
    pass


class TapeConsumed(PgfnError):
    pass


class UnknownParameter(PgfnError):
    pass


class AllMasked(PgfnError):
    pass


# -- embedding / reward ------------------------------------------------------

class EmptyBatch(PgfnError):
    pass


class DegenerateData(PgfnError):
    pass


class MissingStructure(PgfnError):
    pass


# -- environment -------------------------------------------------------------

class TerminalState(PgfnError):
    pass


class InvalidAction(PgfnError):
    pass


class InitialState(PgfnError):
    pass


class NotDecomposable(PgfnError):
    pass


class IncompleteTrajectory(PgfnError):
    pass


# -- oracle / metrics --------------------------------------------------------

class DegenerateLabels(PgfnError):
    pass


class NoPositives(PgfnError):
    pass


class TooFewSamples(PgfnError):
    pass


class TooLarge(PgfnError):
    pass


# -- data --------------------------------------------------------------------

class VocabTooSmall(PgfnError):
    pass


class InconsistentFeatureLength(PgfnError):
    pass


class BadFractions(PgfnError):
    pass


# -- cli ---------------------------------------------------------------------

class ConfigError(PgfnError):
    pass


class MissingArtifact(PgfnError):
    pass


class VersionMismatch(PgfnError):
    pass
