"""Synthetic multi-view scenes and portable pixmap I/O."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .transforms import InputError


@dataclass(frozen=True)
class Occlusion:
    """A rectangle (in the coordinates of ``view``) replaced by uniform noise."""

    view: int
    top: int
    left: int
    height: int
    width: int


@dataclass
class ViewSet:
    views: list[np.ndarray]  # each [3,H,W] float64 in [0,1]
    disparity: int
    occlusions: list[Occlusion] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.views)


def _texture(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Smooth colour blobs plus a few oriented gratings and fine grain."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.zeros((3, h, w))
    for _ in range(6):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        r = rng.uniform(0.1, 0.35) * max(h, w)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
        img += rng.uniform(-0.5, 0.5, size=(3, 1, 1)) * blob
    for _ in range(3):
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(0.08, 0.4)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
        img += rng.uniform(0.05, 0.15, size=(3, 1, 1)) * wave
    img += 0.04 * rng.standard_normal((3, h, w))
    return np.clip(img + 0.5, 0.0, 1.0)


def gen_synthetic_views(
    seed: int,
    k: int,
    h: int,
    w: int,
    disparity: int = 0,
    occlusions: Sequence[Occlusion] = (),
) -> ViewSet:
    """K horizontally shifted crops of one textured scene.

    View ``v`` is the window of the base scene starting at column
    ``v * disparity``, so a point at column x in view 0 sits at column
    ``x - v * disparity`` in view ``v``. Noise rectangles are drawn from the
    same seeded generator after the scene, so sets are reproducible.
    """
    if k < 1 or h < 1 or w < 1:
        raise InputError(f"invalid geometry K={k} H={h} W={w}")
    if not 0 <= disparity < w / 4:
        raise InputError(f"disparity {disparity} must lie in [0, W/4) = [0, {w / 4})")
    rng = np.random.default_rng(seed)
    base = _texture(rng, h, w + (k - 1) * disparity)
    views = [base[:, :, v * disparity : v * disparity + w].copy() for v in range(k)]
    for occ in occlusions:
        if not 0 <= occ.view < k:
            raise InputError(f"occlusion refers to view {occ.view} of {k}")
        if occ.height < 1 or occ.width < 1 or occ.top < 0 or occ.left < 0:
            raise InputError(f"invalid occlusion rectangle {occ}")
        if occ.top + occ.height > h or occ.left + occ.width > w:
            raise InputError(f"occlusion {occ} exceeds the {h}x{w} frame")
        views[occ.view][:, occ.top : occ.top + occ.height, occ.left : occ.left + occ.width] = rng.uniform(
            0.0, 1.0, size=(3, occ.height, occ.width)
        )
    return ViewSet(views, disparity, list(occlusions))


def synthetic_dataset(
    seed: int, scenes: int, k: int, h: int, w: int, disparity: int = 4
) -> list[ViewSet]:
    """``scenes`` independent view sets; scene ``i`` uses seed ``(seed, i)``."""
    out = []
    for i in range(scenes):
        scene_seed = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        out.append(gen_synthetic_views(scene_seed, k, h, w, disparity))
    return out


# ---------------------------------------------------------------------------
# PPM / PGM
# ---------------------------------------------------------------------------


def _to_u8(arr: np.ndarray) -> np.ndarray:
    return np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path: str | Path, img: np.ndarray) -> None:
    """Write a [3,H,W] image in [0,1] as binary P6."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise InputError(f"expected [3,H,W], got {img.shape}")
    Image.fromarray(_to_u8(img).transpose(1, 2, 0), mode="RGB").save(path, format="PPM")


def write_pgm(path: str | Path, img: np.ndarray) -> None:
    """Write a [H,W] map in [0,1] as binary P5."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise InputError(f"expected [H,W], got {img.shape}")
    Image.fromarray(_to_u8(img), mode="L").save(path, format="PPM")


def read_ppm(path: str | Path) -> np.ndarray:
    """Read a P6 (or P5, replicated to three channels) file as [3,H,W] in [0,1]."""
    try:
        with Image.open(path) as im:
            if im.format != "PPM":
                raise InputError(f"{path}: not a portable pixmap (format {im.format})")
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (OSError, SyntaxError) as exc:
        raise InputError(f"{path}: unreadable image ({exc})") from exc
    return arr.transpose(2, 0, 1) / 255.0


def read_views(paths: Sequence[str | Path]) -> list[np.ndarray]:
    views = [read_ppm(p) for p in paths]
    shape: Optional[tuple[int, ...]] = None
    for p, v in zip(paths, views):
        if shape is None:
            shape = v.shape
        elif v.shape != shape:
            raise InputError(f"{p}: dimensions {v.shape[1:]} differ from {shape[1:]}")
    return views
