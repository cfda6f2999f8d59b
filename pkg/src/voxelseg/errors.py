"""Typed errors raised across the toolkit.

Every error carries a distinct process exit code so the command line can map
failures one-to-one (see ``voxelseg.cli``).
"""


class VoxelsegError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ConfigInvalid(VoxelsegError):
    """Pipeline config file fails schema validation."""

    exit_code = 2


class BadMagic(VoxelsegError):
    """File does not start with the expected magic bytes."""

    exit_code = 4


class UnsupportedDatatype(VoxelsegError):
    """NIfTI datatype code outside the supported set {2, 4, 16, 64}."""

    exit_code = 5


class DimensionMismatch(VoxelsegError):
    """Declared extents disagree with the actual data region."""

    exit_code = 6


class NonFiniteHeaderField(VoxelsegError):
    """A numeric header field is NaN or infinite."""

    exit_code = 7


class ValueOutOfRange(VoxelsegError):
    """Voxel values not representable in the requested output datatype."""

    exit_code = 8


class SingularAffine(VoxelsegError):
    """Upper-left 3x3 of the affine has zero determinant."""

    exit_code = 9


class DegenerateOrientation(VoxelsegError):
    """Two data axes map to the same anatomical axis pair."""

    exit_code = 10


class InvalidWindow(VoxelsegError):
    """Intensity window bounds are not strictly increasing."""

    exit_code = 11


class ShapeMismatch(VoxelsegError):
    """Array arguments have incompatible shapes."""

    exit_code = 12


class NonBinaryLabel(VoxelsegError):
    """Label volume contains values other than 0 and 1."""

    exit_code = 13


class NonBinaryInput(VoxelsegError):
    """Mask argument contains values other than 0 and 1."""

    exit_code = 14


class InvalidOverlap(VoxelsegError):
    """Tile overlap negative or not smaller than the patch size."""

    exit_code = 15


class LayoutMismatch(VoxelsegError):
    """Tile predictions do not match the tile layout."""

    exit_code = 16


class OutOfRange(VoxelsegError):
    """Probability values outside [0, 1]."""

    exit_code = 17


class InvalidParams(VoxelsegError):
    """Loss weighting parameters violate alpha + beta = 1."""

    exit_code = 18


class NonScalarRoot(VoxelsegError):
    """backward() called on a non-scalar tensor."""

    exit_code = 19


class OddExtent(VoxelsegError):
    """Downsampling convolution applied to an odd spatial extent."""

    exit_code = 20


class InvalidConfig(VoxelsegError):
    """Model configuration violates its invariants."""

    exit_code = 21


class VersionMismatch(VoxelsegError):
    """Checkpoint written by an unknown format version."""

    exit_code = 22


class ManifestCorrupt(VoxelsegError):
    """Checkpoint manifest inconsistent with the blob region."""

    exit_code = 23


class InfeasiblePlacement(VoxelsegError):
    """Could not place a phantom blob inside the volume."""

    exit_code = 24


class EmptyDataset(VoxelsegError):
    """Training requested on an empty volume set."""

    exit_code = 25


class NonFiniteParameters(VoxelsegError):
    """A model parameter became NaN or infinite during training."""

    exit_code = 26
