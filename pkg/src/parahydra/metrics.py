"""Image quality and rate-distortion curve metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

PSNR_CAP_DB = 100.0
_MSE_FLOOR = 1e-10


@dataclass(frozen=True)
class RdPoint:
    bpp: float
    psnr_db: float

    def __post_init__(self) -> None:
        if not self.bpp > 0:
            raise ValueError(f"bpp must be positive, got {self.bpp}")
        if not np.isfinite(self.psnr_db):
            raise ValueError(f"psnr must be finite, got {self.psnr_db}")


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR in dB for images with peak value 1, capped for (near) identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    err = float(np.mean((a - b) ** 2))
    if err < _MSE_FLOOR:
        return PSNR_CAP_DB
    return -10.0 * np.log10(err)


def _fit(curve: Sequence[RdPoint]) -> tuple[np.ndarray, float, float]:
    if len(curve) < 4:
        raise ValueError(f"need at least 4 RD points, got {len(curve)}")
    q = np.array([p.psnr_db for p in curve], dtype=np.float64)
    log_r = np.log(np.array([p.bpp for p in curve], dtype=np.float64))
    return np.polyfit(q, log_r, 3), float(q.min()), float(q.max())


def bdbr(curve_a: Sequence[RdPoint], curve_b: Sequence[RdPoint]) -> float:
    """Average bitrate change of ``curve_b`` relative to ``curve_a`` in percent.

    Negative values mean ``curve_b`` needs fewer bits for the same quality.
    """
    pa, lo_a, hi_a = _fit(curve_a)
    pb, lo_b, hi_b = _fit(curve_b)
    lo, hi = max(lo_a, lo_b), min(hi_a, hi_b)
    if not hi > lo:
        raise ValueError(f"curves share no quality interval ([{lo_a}, {hi_a}] vs [{lo_b}, {hi_b}])")
    ia, ib = np.polyint(pa), np.polyint(pb)
    int_a = np.polyval(ia, hi) - np.polyval(ia, lo)
    int_b = np.polyval(ib, hi) - np.polyval(ib, lo)
    avg_diff = (int_b - int_a) / (hi - lo)
    return float((np.exp(avg_diff) - 1.0) * 100.0)
