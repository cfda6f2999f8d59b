import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from voxelseg.volume import Volume

# world axis index and sign for each orientation letter
_LETTER_AXES = {"R": (0, 1), "L": (0, -1), "A": (1, 1), "P": (1, -1), "S": (2, 1), "I": (2, -1)}


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_volume(gen: np.random.Generator, extents=(4, 5, 6), orientation="RAS") -> Volume:
    """A volume whose affine encodes exactly the requested orientation code."""
    data = gen.normal(size=extents)
    spacing = gen.uniform(0.5, 3.0, size=3)
    basis = np.zeros((3, 3))
    for j, letter in enumerate(orientation):
        world, sign = _LETTER_AXES[letter]
        basis[world, j] = sign * spacing[j]
    affine = np.eye(4)
    affine[:3, :3] = basis
    affine[:3, 3] = gen.uniform(-20, 20, size=3)
    return Volume(data, affine, orientation)


def all_voxel_world_coords(v: Volume) -> dict[tuple[float, float, float], float]:
    """Map each voxel's world coordinate (rounded) to its value."""
    out = {}
    for ix in np.ndindex(*v.data.shape):
        world = v.affine @ np.array([*ix, 1.0])
        out[tuple(np.round(world[:3], 6))] = v.data[ix]
    return out
