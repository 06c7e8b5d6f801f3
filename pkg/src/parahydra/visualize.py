"""Consistency-map probes rendered as grayscale images."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .codec import encode_one
from .data import Occlusion, ViewSet, gen_synthetic_views, write_pgm
from .model import ParaHydra
from .pmifm import PMIFMWeights, pmifm_consistency_probe
from .tensor import Tensor, no_grad

DESCRIPTOR_TEMPERATURE = 32.0


def patch_descriptors(img: np.ndarray, temperature: float = DESCRIPTOR_TEMPERATURE) -> np.ndarray:
    """Zero-mean, unit-norm 3x3 colour patches scaled by ``temperature``: [1,27,H,W].

    Raw dot-product attention on pixel values does not peak at exact matches;
    normalized patches do, and the temperature sharpens the softmax.
    """
    img = np.asarray(img, dtype=np.float64)
    c, h, w = img.shape
    padded = np.pad(img, ((0, 0), (1, 1), (1, 1)), mode="edge")
    win = sliding_window_view(padded, (3, 3), axis=(1, 2))  # C,H,W,3,3
    d = win.transpose(1, 2, 0, 3, 4).reshape(h, w, c * 9)
    d = d - d.mean(axis=-1, keepdims=True)
    d = d / (np.linalg.norm(d, axis=-1, keepdims=True) + 1e-8)
    return temperature * d.transpose(2, 0, 1)[None]


def descriptor_consistency(main: np.ndarray, sides: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Consistency maps at pixel resolution from patch descriptors, no learned weights."""
    f_main = patch_descriptors(main)
    probe = PMIFMWeights(np.random.default_rng(0), f_main.shape[1], identity_skm=True)
    with no_grad():
        maps = pmifm_consistency_probe(Tensor(f_main), [Tensor(patch_descriptors(s)) for s in sides], probe)
    return [m.data[0] for m in maps]


def model_consistency(model: ParaHydra, main: np.ndarray, sides: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Maps from the first joint-decoder stage, at latent resolution."""
    latents = [Tensor(encode_one(model, x[None]).y_hat) for x in [main, *sides]]
    with no_grad():
        maps = pmifm_consistency_probe(latents[0], latents[1:], model.decoder.fuse1)
    return [m.data[0] for m in maps]


def normalize(m: np.ndarray) -> np.ndarray:
    lo, hi = float(m.min()), float(m.max())
    if hi - lo <= 0:
        return np.ones_like(m)
    return (m - lo) / (hi - lo)


def write_maps(maps: Sequence[np.ndarray], out_prefix: str | Path) -> list[Path]:
    """One P5 image and one text sidecar per map; returns the image paths."""
    out_prefix = Path(out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, m in enumerate(maps):
        img_path = out_prefix.with_name(f"{out_prefix.name}_side{k}.pgm")
        write_pgm(img_path, normalize(m))
        np.savetxt(img_path.with_suffix(".txt"), m, fmt="%.17g")
        paths.append(img_path)
    return paths


def occlusion_fixture(seed: int, size: int = 32, disparity: int = 3, block: int = 10) -> tuple[ViewSet, np.ndarray]:
    """Two-view scene whose side view hides a noise block; returns it with the block mask.

    The mask marks the main-view (view 0) pixels whose counterparts in the side
    view are covered, i.e. the side-view rectangle shifted right by the disparity.
    """
    rng = np.random.default_rng(1000 + seed)
    top = int(rng.integers(4, size - block - 4))
    left = int(rng.integers(4, size - block - 4 - disparity))
    vs = gen_synthetic_views(seed, 2, size, size, disparity, [Occlusion(1, top, left, block, block)])
    mask = np.zeros((size, size), dtype=bool)
    mask[top : top + block, left + disparity : left + disparity + block] = True
    return vs, mask
