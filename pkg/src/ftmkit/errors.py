"""Exception hierarchy shared across the package.

Every error raised for a contract violation carries a stable message
prefix (e.g. "format error: ...") so callers and the CLI can report a
consistent diagnostic without matching on exception internals.
"""


class FtmError(Exception):
    """Base class for all ftmkit errors."""


class InvalidAudioError(FtmError):
    """Audio carrier violates its invariants (non-finite samples, wrong rate)."""


class InsufficientAudioError(FtmError):
    """Audio shorter than one analysis window."""


class FormatError(FtmError):
    """Malformed or inconsistent serialized file (features, weights, embeddings, lattices, manifests)."""


class ShapeError(FtmError):
    """Tensor dimensions inconsistent with the declared layer geometry."""


class IsolatedNodeError(FtmError):
    """Attention mask leaves a node with no permitted position (not even itself)."""


class NumericError(FtmError):
    """A numeric check encountered non-finite values."""


class VocabError(FtmError):
    """Lattice node references a word id outside the model vocabulary."""


class DegenerateCorpusError(FtmError):
    """A corpus split does not contain both classes."""


class MissingLatticeError(FtmError):
    """An utterance that requires a lattice has none."""


class UtteranceTooShortError(FtmError):
    """Utterance does not outlast the unlabeled prefix."""


class InvalidTargetError(FtmError):
    """Knowledge-transfer target is non-finite or malformed."""


class MissingTargetError(FtmError):
    """Teacher embedding required for training is absent."""


class EmptyInputError(FtmError):
    """An operation received an empty sequence."""


class InvalidFrameError(FtmError):
    """A streaming step received a non-finite or mis-shaped frame."""


class NoMonitoredFramesError(FtmError):
    """Signal ends before the first monitored frame; no decision possible."""


class DegenerateEvaluationError(FtmError):
    """Evaluation requires non-empty score sets for both classes."""


class MissingFileError(FtmError):
    """Manifest references a file that does not exist."""


class CorruptRecordError(FtmError):
    """Manifest record violates an utterance invariant."""


class ConfigError(FtmError):
    """Invalid configuration value."""
