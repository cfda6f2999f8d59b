"""The 3D image carrier shared by the whole pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

AXIS_PAIRS = ("RL", "AP", "SI")
POSITIVE_LETTERS = "RAS"
NEGATIVE_LETTERS = "LPI"


def _pair_index(letter: str) -> int:
    for i, pair in enumerate(AXIS_PAIRS):
        if letter in pair:
            return i
    raise ValueError(f"unknown orientation letter {letter!r}")


def is_valid_orientation(code: str) -> bool:
    """True when the 3 letters name three distinct anatomical axes."""
    if len(code) != 3 or any(c not in "RLAPSI" for c in code):
        return False
    return sorted(_pair_index(c) for c in code) == [0, 1, 2]


@dataclass(frozen=True)
class Volume:
    """A 3D scalar grid with voxel spacing baked into a voxel-to-world affine.

    data is indexed [x, y, z] with x the fastest-varying axis on disk;
    affine maps homogeneous voxel indices to world millimeters; orientation
    names the world direction each data axis points toward (e.g. "RAS").
    fallback_affine records that the affine was reconstructed from voxel
    spacing alone rather than read from the file.
    """

    data: np.ndarray
    affine: np.ndarray
    orientation: str
    fallback_affine: bool = field(default=False, compare=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        affine = np.asarray(self.affine, dtype=np.float64)
        if data.ndim != 3 or any(s < 1 for s in data.shape):
            raise ValueError(f"volume data must be 3D with positive extents, got shape {data.shape}")
        if affine.shape != (4, 4):
            raise ValueError(f"affine must be 4x4, got {affine.shape}")
        if not np.array_equal(affine[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValueError(f"affine bottom row must be (0,0,0,1), got {affine[3]}")
        if not is_valid_orientation(self.orientation):
            raise ValueError(f"invalid orientation code {self.orientation!r}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "affine", affine)

    @property
    def extents(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def spacing(self) -> np.ndarray:
        """Voxel spacing in millimeters: column norms of the 3x3 affine block."""
        return np.linalg.norm(self.affine[:3, :3], axis=0)

    def with_data(self, data: np.ndarray) -> "Volume":
        """Same geometry, new voxel values (extents must match)."""
        data = np.asarray(data, dtype=np.float64)
        if data.shape != self.data.shape:
            raise ValueError(f"replacement data shape {data.shape} != {self.data.shape}")
        return Volume(data, self.affine, self.orientation, self.fallback_affine)

    def world_coords(self, index: np.ndarray) -> np.ndarray:
        """Map voxel indices (..., 3) to world millimeters (..., 3)."""
        index = np.asarray(index, dtype=np.float64)
        return index @ self.affine[:3, :3].T + self.affine[:3, 3]
