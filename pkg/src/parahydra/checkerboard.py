"""Checkerboard anchor / non-anchor split of a latent grid."""

from __future__ import annotations

from functools import lru_cache

import numpy as np


def checkerboard_partition(h: int, w: int) -> np.ndarray:
    """Boolean anchor mask of shape (h, w): position (i, j) is an anchor iff i + j is even."""
    if h < 1 or w < 1:
        raise ValueError(f"checkerboard_partition: grid must be at least 1x1, got {h}x{w}")
    return _mask(h, w).copy()


@lru_cache(maxsize=64)
def _mask(h: int, w: int) -> np.ndarray:
    ii, jj = np.indices((h, w))
    m = (ii + jj) % 2 == 0
    m.setflags(write=False)
    return m


@lru_cache(maxsize=64)
def positions(h: int, w: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Raster-order (rows, cols) of anchors and of non-anchors."""
    m = _mask(h, w)
    ar, ac = np.nonzero(m)
    nr, nc = np.nonzero(~m)
    return ar, ac, nr, nc
