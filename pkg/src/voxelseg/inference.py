"""Tiled whole-volume prediction with window-weighted stitching.

A volume is covered by the systematic tile grid, each tile runs through
the model independently (optionally across threads; the model is
read-only), and the per-tile probability maps are blended back together.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .autodiff import Tensor
from .patches import HANN, extract_patch, grid_tiles, stitch
from .vnet import Model, forward

THREADS_ENV = "VOXELSEG_THREADS"


def thread_cap(default: int = 1) -> int:
    """Tile-level parallelism cap from the environment."""
    raw = os.environ.get(THREADS_ENV, "")
    try:
        return max(1, int(raw))
    except ValueError:
        return default


def predict_volume(
    model: Model,
    data: np.ndarray,
    patch_size,
    overlap=None,
    window: str = HANN,
    threads: int = 1,
) -> np.ndarray:
    """Tile -> forward -> stitch; returns a probability grid shaped like data.

    Default overlap is half a patch per axis. Volumes smaller than a patch
    are zero-padded for the forward pass and cropped by the stitcher.
    Stitching runs in fixed origin order whatever the thread count.
    """
    data = np.asarray(data, dtype=np.float64)
    patch_size = tuple(int(p) for p in patch_size)
    if overlap is None:
        overlap = tuple(p // 2 for p in patch_size)
    layout = grid_tiles(data.shape, patch_size, overlap, window=window)

    def run_tile(origin):
        tile = extract_patch(data, origin, patch_size, pad_value=0.0)
        return forward(model, Tensor(tile[None, None])).data[0, 0]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            predictions = list(pool.map(run_tile, layout.origins))
    else:
        predictions = [run_tile(origin) for origin in layout.origins]
    return stitch(layout, predictions)


def threshold_mask(prob: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Binary mask from probabilities; strictly above the threshold is foreground."""
    return (np.asarray(prob) > threshold).astype(np.float64)
