"""Orientation codes and reorientation to a canonical anatomical frame.

Training a 3D model on mixed orientations wastes capacity, so every volume
is brought to one shared code (default "RAS") before anything else touches
it. Reorientation only permutes and flips data axes; no resampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateOrientation, SingularAffine
from .volume import (
    AXIS_PAIRS,
    NEGATIVE_LETTERS,
    POSITIVE_LETTERS,
    Volume,
    is_valid_orientation,
)

DEFAULT_ORIENTATION = "RAS"


@dataclass(frozen=True)
class AxisTransform:
    """Axis permutation plus per-axis reversal taking one orientation to another.

    permutation[d] is the source data axis that becomes destination axis d;
    flips[d] says whether that axis runs backwards afterwards.
    """

    permutation: tuple[int, int, int]
    flips: tuple[bool, bool, bool]

    def __post_init__(self):
        if sorted(self.permutation) != [0, 1, 2]:
            raise ValueError(f"permutation {self.permutation} is not a bijection on {{0,1,2}}")


def orientation_of(affine: np.ndarray) -> str:
    """Read the 3-letter orientation code off a voxel-to-world affine.

    Each data axis (affine column) is assigned the world axis with the
    largest absolute entry, signed by that entry. Ties break toward the
    lowest world-axis index so exactly-45-degree affines stay deterministic.
    """
    affine = np.asarray(affine, dtype=np.float64)
    mat = affine[:3, :3]
    if np.linalg.det(mat) == 0.0:
        raise SingularAffine("upper-left 3x3 of affine is singular")
    letters = []
    used_pairs = []
    for j in range(3):
        col = mat[:, j]
        world_axis = int(np.argmax(np.abs(col)))  # argmax takes the first maximum
        sign = col[world_axis]
        letter = POSITIVE_LETTERS[world_axis] if sign > 0 else NEGATIVE_LETTERS[world_axis]
        if world_axis in used_pairs:
            raise DegenerateOrientation(
                f"data axes map to the same anatomical pair {AXIS_PAIRS[world_axis]}"
            )
        used_pairs.append(world_axis)
        letters.append(letter)
    return "".join(letters)


def axis_transform(source: str, target: str) -> AxisTransform:
    """The permutation/flip taking data in `source` orientation to `target`."""
    for code in (source, target):
        if not is_valid_orientation(code):
            raise ValueError(f"invalid orientation code {code!r}")
    perm = []
    flips = []
    for t in target:
        pair = next(i for i, p in enumerate(AXIS_PAIRS) if t in p)
        s = next(j for j, c in enumerate(source) if c in AXIS_PAIRS[pair])
        perm.append(s)
        flips.append(source[s] != t)
    return AxisTransform(tuple(perm), tuple(flips))


def reorient(v: Volume, target: str = DEFAULT_ORIENTATION) -> Volume:
    """Permute/flip data axes so the volume's orientation equals `target`.

    The affine is rebuilt so every voxel keeps its world coordinate: flipped
    axes negate the corresponding affine column and shift the origin by
    (extent - 1) voxels along it.
    """
    t = axis_transform(v.orientation, target)
    if t.permutation == (0, 1, 2) and not any(t.flips):
        return v

    data = np.transpose(v.data, t.permutation)
    basis = v.affine[:3, :3]
    origin = v.affine[:3, 3].copy()
    new_basis = np.empty((3, 3), dtype=np.float64)
    for d in range(3):
        s = t.permutation[d]
        col = basis[:, s]
        if t.flips[d]:
            data = np.flip(data, axis=d)
            new_basis[:, d] = -col
            origin = origin + col * (v.data.shape[s] - 1)
        else:
            new_basis[:, d] = col

    affine = np.eye(4, dtype=np.float64)
    affine[:3, :3] = new_basis
    affine[:3, 3] = origin
    return Volume(np.ascontiguousarray(data), affine, target, v.fallback_affine)
