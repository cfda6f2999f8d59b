"""voxelseg: a small volumetric segmentation toolkit.

NIfTI-1 I/O, orientation canonicalization, intensity normalization,
class-balanced patch sampling, the Jaccard/Dice/Tversky loss family with
gradients, a float64 reverse-mode autodiff engine with 3D convolutions, a
desk-scale VNet, deterministic SGD training, and tiled inference with
window-weighted stitching.
"""

from .autodiff import Tensor
from .losses import OverlapCounts, TverskyParams, counts, dice, jaccard, soft_counts, tversky
from .nifti import NiftiHeader, read_nifti, write_nifti
from .normalize import NormalizationSpec, clip_rescale, normalize_label, zscore
from .orientation import AxisTransform, orientation_of, reorient
from .patches import PatchSpec, TileLayout, grid_tiles, sample_training_patches, stitch
from .phantom import PhantomConfig, generate
from .rng import RngStream
from .training import TrainConfig, sgd_step, train
from .vnet import Model, VNetConfig, build, forward
from .volume import Volume

__version__ = "0.1.0"

__all__ = [
    "AxisTransform",
    "Model",
    "NiftiHeader",
    "NormalizationSpec",
    "OverlapCounts",
    "PatchSpec",
    "PhantomConfig",
    "RngStream",
    "Tensor",
    "TileLayout",
    "TrainConfig",
    "TverskyParams",
    "VNetConfig",
    "Volume",
    "build",
    "clip_rescale",
    "counts",
    "dice",
    "forward",
    "generate",
    "grid_tiles",
    "jaccard",
    "normalize_label",
    "orientation_of",
    "read_nifti",
    "reorient",
    "sample_training_patches",
    "sgd_step",
    "soft_counts",
    "stitch",
    "train",
    "tversky",
    "write_nifti",
    "zscore",
]
