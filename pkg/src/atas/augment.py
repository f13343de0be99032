"""Mosaic augmentation: g x g single-object tiles stitched into one composite."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError


@dataclass
class MosaicSample:
    image: np.ndarray  # (3, g*side, g*side)
    tiles: list
    tile_patch_map: np.ndarray  # (K, n_mosaic // K) mosaic patch indices per tile
    tile_class_ids: np.ndarray  # (K,)
    grid_side: int
    patch_size: int
    tile_indices: np.ndarray = field(default=None)  # corpus indices, when drawn from a corpus

    @property
    def num_patches(self) -> int:
        return (self.image.shape[-1] // self.patch_size) ** 2

    def patch_labels(self) -> np.ndarray:
        labels = np.empty(self.num_patches, dtype=np.int64)
        for t, idx in enumerate(self.tile_patch_map):
            labels[idx] = self.tile_class_ids[t]
        return labels

    def tile_region(self, t: int) -> np.ndarray:
        side = self.image.shape[-1] // self.grid_side
        r, c = divmod(t, self.grid_side)
        return self.image[:, r * side : (r + 1) * side, c * side : (c + 1) * side]


def tile_patch_map(grid_side: int, tile_side: int, patch_size: int) -> np.ndarray:
    """Mosaic patch indices (row-major over the mosaic patch grid) owned by each tile."""
    if tile_side % patch_size:
        raise ConfigError(f"tile side {tile_side} is not divisible by patch size {patch_size}")
    per = tile_side // patch_size
    full = grid_side * per
    rows = []
    for t in range(grid_side * grid_side):
        tr, tc = divmod(t, grid_side)
        r = np.arange(tr * per, (tr + 1) * per)
        c = np.arange(tc * per, (tc + 1) * per)
        rows.append((r[:, None] * full + c[None, :]).reshape(-1))
    return np.stack(rows)


def make_mosaic(tiles, grid_side: int, patch_size: int = 8, tile_indices=None) -> MosaicSample:
    tiles = list(tiles)
    if grid_side < 1 or len(tiles) != grid_side * grid_side:
        raise ConfigError(f"need {grid_side}^2 = {grid_side * grid_side} tiles, got {len(tiles)}")
    shape = tiles[0].image.shape
    if any(t.image.shape != shape for t in tiles):
        raise ShapeError(f"mixed tile sizes: {sorted({t.image.shape for t in tiles})}")
    channels, side, side_w = shape
    if side != side_w:
        raise ShapeError(f"tiles must be square, got {shape}")
    image = (
        np.stack([t.image for t in tiles])
        .reshape(grid_side, grid_side, channels, side, side)
        .transpose(2, 0, 3, 1, 4)
        .reshape(channels, grid_side * side, grid_side * side)
    )
    return MosaicSample(
        image=np.ascontiguousarray(image),
        tiles=tiles,
        tile_patch_map=tile_patch_map(grid_side, side, patch_size),
        tile_class_ids=np.array([t.class_id for t in tiles], dtype=np.int64),
        grid_side=grid_side,
        patch_size=patch_size,
        tile_indices=None if tile_indices is None else np.asarray(tile_indices, dtype=np.int64),
    )


def sample_mosaic_batch(corpus, batch_size: int, grid_side: int, seed: int, patch_size: int = 8):
    """Draw ``batch_size`` mosaics, tiles uniform with replacement from ``corpus``."""
    if not corpus:
        raise ConfigError("cannot sample mosaics from an empty corpus")
    rng = np.random.default_rng(seed)
    k = grid_side * grid_side
    picks = rng.integers(0, len(corpus), size=(batch_size, k))
    return [make_mosaic([corpus[i] for i in row], grid_side, patch_size, tile_indices=row) for row in picks]


def mosaic_grid(num_tiles: int) -> int:
    g = math.isqrt(num_tiles)
    if g * g != num_tiles:
        raise ConfigError(f"{num_tiles} tiles do not form a square grid")
    return g
