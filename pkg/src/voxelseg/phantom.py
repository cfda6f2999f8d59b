"""Seeded synthetic low-contrast volumes with sparse ellipsoid foreground.

Stands in for scarce clinical data: a handful of small blobs on a noisy
background reproduces the heavy class imbalance and weak contrast that
make abdominal segmentation hard, at a size that trains in minutes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasiblePlacement
from .rng import RngStream
from .volume import Volume

MAX_PLACEMENT_ATTEMPTS = 1000


@dataclass(frozen=True)
class PhantomConfig:
    extents: tuple[int, int, int] = (64, 64, 64)
    n_blobs: int = 3
    radius_range: tuple[float, float] = (4.0, 7.0)
    fg_intensity: float = 0.5
    bg_intensity: float = 0.2
    noise_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.radius_range
        if lo <= 0 or hi < lo:
            raise ValueError(f"radius range must be 0 < lo <= hi, got {self.radius_range}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise sigma must be >= 0, got {self.noise_sigma}")
        if any(e < 1 for e in self.extents) or self.n_blobs < 0:
            raise ValueError("extents must be positive and n_blobs >= 0")


def generate(cfg: PhantomConfig) -> tuple[Volume, Volume]:
    """Deterministic (image, mask) pair for a seed.

    The mask is the union of axis-aligned ellipsoids placed fully inside
    the volume by rejection sampling; the image adds the intensity gap on
    top of the background plus Gaussian noise.
    """
    rng = RngStream(cfg.seed)
    extents = np.asarray(cfg.extents, dtype=np.int64)
    mask = np.zeros(cfg.extents, dtype=np.float64)

    coords = np.stack(
        np.meshgrid(*(np.arange(e, dtype=np.float64) for e in cfg.extents), indexing="ij"),
        axis=-1,
    )

    for _ in range(cfg.n_blobs):
        placed = False
        for _attempt in range(MAX_PLACEMENT_ATTEMPTS):
            radii = rng.gen.uniform(cfg.radius_range[0], cfg.radius_range[1], size=3)
            lo = np.ceil(radii)
            hi = extents - 1 - np.ceil(radii)
            if np.any(hi < lo):
                continue
            center = np.array([rng.gen.uniform(l, h) for l, h in zip(lo, hi)])
            placed = True
            break
        if not placed:
            raise InfeasiblePlacement(
                f"could not fit a blob with radii from {cfg.radius_range} into extents {cfg.extents}"
            )
        dist = ((coords - center) / radii) ** 2
        mask[dist.sum(axis=-1) <= 1.0] = 1.0

    noise = rng.gen.normal(0.0, cfg.noise_sigma, size=cfg.extents) if cfg.noise_sigma > 0 else 0.0
    image = cfg.bg_intensity + (cfg.fg_intensity - cfg.bg_intensity) * mask + noise

    affine = np.eye(4)
    return (
        Volume(np.asarray(image, dtype=np.float64), affine, "RAS"),
        Volume(mask, affine, "RAS"),
    )
