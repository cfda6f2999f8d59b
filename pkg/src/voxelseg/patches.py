"""Class-balanced training patches, systematic inference tiles, stitching.

Training patches are drawn around foreground with a configurable
probability so sparse masks still contribute balanced batches. At test
time a volume is covered by a deterministic tile grid; per-tile
predictions are recombined with window-weighted averaging, which removes
the seams plain chunking leaves at patch borders.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidOverlap, LayoutMismatch, NonBinaryLabel, ShapeMismatch
from .rng import RngStream
from .volume import Volume

UNIFORM = "uniform"
HANN = "hann"
HANN_FLOOR = 1e-3


@dataclass(frozen=True)
class PatchSpec:
    size: tuple[int, int, int] = (32, 32, 32)
    fg_fraction: float = 0.7  # bias toward foreground; the masks are sparse
    pad_value_image: float = 0.0
    pad_value_label: float = 0.0

    def __post_init__(self):
        if len(self.size) != 3 or any(s < 1 for s in self.size):
            raise ValueError(f"patch size must be 3 positive integers, got {self.size}")
        if not 0.0 <= self.fg_fraction <= 1.0:
            raise ValueError(f"fg_fraction must be in [0, 1], got {self.fg_fraction}")


@dataclass(frozen=True)
class TileLayout:
    """Patch origins covering a volume, plus the blend window used to stitch."""

    origins: tuple[tuple[int, int, int], ...]
    patch_size: tuple[int, int, int]
    volume_extents: tuple[int, int, int]
    window: str = HANN

    def __post_init__(self):
        if self.window not in (UNIFORM, HANN):
            raise ValueError(f"unknown window {self.window!r}")


def extract_patch(data: np.ndarray, origin, size, pad_value: float = 0.0) -> np.ndarray:
    """Copy a size-shaped patch at origin, padding where it leaves the array."""
    out = np.full(tuple(size), float(pad_value), dtype=np.float64)
    src = []
    dst = []
    for o, s, extent in zip(origin, size, data.shape):
        lo = max(o, 0)
        hi = min(o + s, extent)
        if lo >= hi:
            return out
        src.append(slice(lo, hi))
        dst.append(slice(lo - o, hi - o))
    out[tuple(dst)] = data[tuple(src)]
    return out


def _patch_origin(center, extents, size):
    """Clamp the centered origin into bounds; symmetric padding for small axes."""
    origin = []
    for c, extent, s in zip(center, extents, size):
        if extent < s:
            origin.append(-((s - extent) // 2))  # negative origin == symmetric pad
        else:
            origin.append(int(np.clip(c - s // 2, 0, extent - s)))
    return tuple(origin)


def sample_training_patches(
    image: Volume,
    label: Volume,
    spec: PatchSpec,
    n: int,
    rng: RngStream,
) -> list[tuple[np.ndarray, np.ndarray, tuple[int, int, int]]]:
    """Draw n (image patch, label patch, center) triples.

    Each draw is foreground-centered with probability fg_fraction (uniform
    over foreground voxels, falling back to uniform over the volume when
    the mask is empty), otherwise uniform over all voxels. Origins are
    clamped into bounds; axes smaller than the patch get symmetric padding.
    """
    if image.extents != label.extents:
        raise ShapeMismatch(f"image extents {image.extents} != label extents {label.extents}")
    if not np.all((label.data == 0.0) | (label.data == 1.0)):
        raise NonBinaryLabel("label volume is not a binary mask")

    extents = image.extents
    fg_indices = np.argwhere(label.data == 1.0)
    out = []
    for _ in range(n):
        use_fg = fg_indices.size > 0 and rng.gen.random() < spec.fg_fraction
        if use_fg:
            center = tuple(int(c) for c in fg_indices[rng.gen.integers(len(fg_indices))])
        else:
            center = tuple(int(rng.gen.integers(e)) for e in extents)
        origin = _patch_origin(center, extents, spec.size)
        img = extract_patch(image.data, origin, spec.size, spec.pad_value_image)
        lab = extract_patch(label.data, origin, spec.size, spec.pad_value_label)
        out.append((img, lab, center))
    return out


def _axis_origins(extent: int, patch: int, stride: int) -> list[int]:
    if extent <= patch:
        return [0]
    origins = []
    o = 0
    while o + patch < extent:
        origins.append(o)
        o += stride
    last = extent - patch
    if not origins or origins[-1] != last:
        origins.append(last)
    return origins


def grid_tiles(extents, patch_size, overlap, window: str = HANN) -> TileLayout:
    """Systematic tile grid: origins at stride = patch - overlap, with the
    final origin clamped so the last tile ends exactly at the volume edge."""
    extents = tuple(int(e) for e in extents)
    patch_size = tuple(int(p) for p in patch_size)
    overlap = tuple(int(v) for v in overlap)
    if any(e < 1 for e in extents):
        raise ShapeMismatch(f"extents must be positive, got {extents}")
    for v, p in zip(overlap, patch_size):
        if not 0 <= v < p:
            raise InvalidOverlap(f"overlap {overlap} must satisfy 0 <= overlap < patch {patch_size}")

    per_axis = [
        _axis_origins(e, p, p - v) for e, p, v in zip(extents, patch_size, overlap)
    ]
    origins = tuple(
        (x, y, z) for x in per_axis[0] for y in per_axis[1] for z in per_axis[2]
    )
    return TileLayout(origins=origins, patch_size=patch_size, volume_extents=extents, window=window)


def _hann_axis(n: int) -> np.ndarray:
    if n == 1:
        return np.ones(1)
    i = np.arange(n, dtype=np.float64)
    w = 0.5 - 0.5 * np.cos(2.0 * np.pi * i / (n - 1))
    return np.maximum(w, HANN_FLOOR)  # edge voxels keep nonzero weight


def blend_window(patch_size, window: str) -> np.ndarray:
    if window == UNIFORM:
        return np.ones(tuple(patch_size), dtype=np.float64)
    wx, wy, wz = (_hann_axis(n) for n in patch_size)
    return wx[:, None, None] * wy[None, :, None] * wz[None, None, :]


def stitch(layout: TileLayout, tile_predictions) -> np.ndarray:
    """Recombine per-tile predictions into one volume-shaped grid.

    Every voxel is the window-weighted average of the tiles covering it;
    the weights normalize away, so constant tiles stitch to a constant.
    Tiles are accumulated in origin order for bitwise determinism.
    """
    tile_predictions = list(tile_predictions)
    if len(tile_predictions) != len(layout.origins):
        raise LayoutMismatch(
            f"{len(tile_predictions)} predictions for {len(layout.origins)} tile origins"
        )
    patch = tuple(layout.patch_size)
    if len(layout.origins) == 1 and layout.origins[0] == (0, 0, 0) and patch == tuple(layout.volume_extents):
        pred = np.asarray(tile_predictions[0], dtype=np.float64)
        if pred.shape != patch:
            raise LayoutMismatch(f"tile prediction shape {pred.shape} != patch size {patch}")
        if not np.all(np.isfinite(pred)):
            raise LayoutMismatch("tile prediction contains non-finite values")
        return pred.copy()  # weighted average of one tile is that tile

    weights = blend_window(patch, layout.window)

    acc = np.zeros(layout.volume_extents, dtype=np.float64)
    norm = np.zeros(layout.volume_extents, dtype=np.float64)
    for origin, pred in zip(layout.origins, tile_predictions):
        pred = np.asarray(pred, dtype=np.float64)
        if pred.shape != patch:
            raise LayoutMismatch(f"tile prediction shape {pred.shape} != patch size {patch}")
        if not np.all(np.isfinite(pred)):
            raise LayoutMismatch("tile prediction contains non-finite values")
        dst = []
        src = []
        for o, p, extent in zip(origin, patch, layout.volume_extents):
            lo, hi = max(o, 0), min(o + p, extent)
            dst.append(slice(lo, hi))
            src.append(slice(lo - o, hi - o))
        dst, src = tuple(dst), tuple(src)
        acc[dst] += weights[src] * pred[src]
        norm[dst] += weights[src]

    if np.any(norm == 0.0):
        raise LayoutMismatch("tile layout does not cover the volume")
    return acc / norm
