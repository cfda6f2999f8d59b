"""Voxel-intensity and label normalization.

CT-style volumes are windowed and rescaled to a fixed range (default
[-1, 1]); MR-style volumes get zero-mean unit-variance. Labels become
strict binary masks. Statistics are always per-volume.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidWindow
from .volume import Volume

ZSCORE = "zscore"
CLIP_RESCALE = "clip_rescale"


@dataclass(frozen=True)
class NormalizationSpec:
    mode: str = CLIP_RESCALE
    clip_lo: float | None = None
    clip_hi: float | None = None
    out_lo: float = -1.0
    out_hi: float = 1.0

    def __post_init__(self):
        if self.mode not in (ZSCORE, CLIP_RESCALE):
            raise ValueError(f"unknown normalization mode {self.mode!r}")
        provided = (self.clip_lo is None) + (self.clip_hi is None)
        if provided == 1:
            raise InvalidWindow("clip_lo and clip_hi must be provided together")
        if self.clip_lo is not None and self.clip_lo >= self.clip_hi:
            raise InvalidWindow(f"clip window [{self.clip_lo}, {self.clip_hi}] is not increasing")
        if self.out_lo >= self.out_hi:
            raise InvalidWindow(f"output range [{self.out_lo}, {self.out_hi}] is not increasing")


def zscore(v: Volume) -> Volume:
    """(x - mean) / std with population statistics; constant volumes map to zero."""
    std = float(v.data.std())
    if std == 0.0:
        return v.with_data(np.zeros_like(v.data))
    return v.with_data((v.data - v.data.mean()) / std)


def clip_rescale(v: Volume, spec: NormalizationSpec | None = None) -> Volume:
    """Clamp to an intensity window, then map it affinely onto [out_lo, out_hi].

    Without explicit clip bounds the window is the volume's own min/max;
    a constant volume then maps to the midpoint of the output range.
    """
    spec = spec or NormalizationSpec()
    if spec.mode != CLIP_RESCALE:
        raise ValueError(f"clip_rescale called with mode {spec.mode!r}")
    if spec.clip_lo is not None:
        lo, hi = float(spec.clip_lo), float(spec.clip_hi)
    else:
        lo, hi = float(v.data.min()), float(v.data.max())
    if lo == hi:
        mid = 0.5 * (spec.out_lo + spec.out_hi)
        return v.with_data(np.full_like(v.data, mid))
    clamped = np.clip(v.data, lo, hi)
    scaled = spec.out_lo + (clamped - lo) * (spec.out_hi - spec.out_lo) / (hi - lo)
    return v.with_data(scaled)


def normalize_label(v: Volume) -> Volume:
    """Binarize a label volume: anything strictly above 0 becomes 1."""
    return v.with_data((v.data > 0).astype(np.float64))
