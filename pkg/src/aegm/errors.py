"""Exception types raised across the pipeline.

Everything derives from AegmError so the CLI can map any pipeline
failure to exit code 1 while argparse keeps exit code 2 for usage
errors.
"""


class AegmError(Exception):
    """Base class for all errors raised by this package."""


# --- audio / features ---------------------------------------------------

class UnsupportedFormat(AegmError):
    """WAV file exists but is not mono 16 kHz PCM16/float32."""


class CorruptFile(AegmError):
    """RIFF structure is damaged (bad magic, truncated chunks)."""


class ClipTooShort(AegmError):
    """Clip shorter than one analysis frame (or than the context span)."""


class BadMelConfig(AegmError):
    """Mel filterbank parameters are inconsistent (n_mels < 1, fmax > sr/2, ...)."""


class NonFiniteFeature(AegmError):
    """NaN or Inf appeared in an extracted feature matrix."""


# --- numerics -----------------------------------------------------------

class ShapeMismatch(AegmError):
    """Operand shapes are incompatible."""


class NoForwardCache(AegmError):
    """backward() called without a recorded forward pass."""


class BadTarget(AegmError):
    """Cross-entropy target row is not one-hot."""


# --- model / training ---------------------------------------------------

class BadSection(AegmError):
    """Section index outside [0, M)."""


class MissingSection(AegmError):
    """Training dataset lacks rows for one of the expected sections."""


class NonFiniteLoss(AegmError):
    """Training loss became NaN/Inf; carries the epoch and batch index."""

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


# --- scoring / metrics --------------------------------------------------

class GroupTooSmall(AegmError):
    """Fewer than 2 records in a normalization group."""


class OneClassOnly(AegmError):
    """AUC requested but labels contain a single class."""


class BadP(AegmError):
    """pAUC range parameter outside (0, 1]."""


# --- dataset / artifacts ------------------------------------------------

class LayoutError(AegmError):
    """Dataset directory does not follow the expected train/test layout."""


class NameParseError(AegmError):
    """Filename lacks the section/label tokens (or a train file is anomalous)."""


class ConfigHashMismatch(AegmError):
    """Artifacts produced under different feature configurations were mixed."""


class LockHeld(AegmError):
    """Another command is already running against this output directory."""
