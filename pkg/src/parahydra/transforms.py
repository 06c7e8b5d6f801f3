"""Per-view analysis / hyper transforms, quantization, the joint decoder and the RD loss."""

from __future__ import annotations

from typing import Optional, Sequence, Union

import numpy as np

from .config import PAD_MULTIPLE
from .nn import Conv2d, Deconv2d, Module
from .pmifm import PMIFMWeights, pmifm
from .tensor import ConfigError, ShapeError, Tensor, clamp, leaky_relu, round_half_away, round_ste

SLOPE = 0.01


class InputError(ValueError):
    """Image data outside the accepted range or geometry."""


class AnalysisTransform(Module):
    """Four stride-2 5x5 convolutions: [B,3,H,W] -> [B,N,H/16,W/16]."""

    def __init__(self, rng: np.random.Generator, channels: int) -> None:
        self.layers = [
            Conv2d(rng, 3, channels, 5, stride=2),
            Conv2d(rng, channels, channels, 5, stride=2),
            Conv2d(rng, channels, channels, 5, stride=2),
            Conv2d(rng, channels, channels, 5, stride=2),
        ]

    def forward(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = leaky_relu(x, SLOPE)
        return x


class HyperAnalysis(Module):
    """[B,N,h,w] -> [B,N,h/4,w/4]."""

    def __init__(self, rng: np.random.Generator, channels: int) -> None:
        self.layers = [
            Conv2d(rng, channels, channels, 3),
            Conv2d(rng, channels, channels, 5, stride=2),
            Conv2d(rng, channels, channels, 5, stride=2),
        ]

    def forward(self, y: Tensor) -> Tensor:
        h = leaky_relu(self.layers[0](y), SLOPE)
        h = leaky_relu(self.layers[1](h), SLOPE)
        return self.layers[2](h)


class HyperSynthesis(Module):
    """[B,N,h/4,w/4] -> hyperprior feature [B,2N,h,w]."""

    def __init__(self, rng: np.random.Generator, channels: int) -> None:
        self.up1 = Deconv2d(rng, channels, channels, 5)
        self.up2 = Deconv2d(rng, channels, channels, 5)
        self.out = Conv2d(rng, channels, 2 * channels, 3)

    def forward(self, z_hat: Tensor) -> Tensor:
        h = leaky_relu(self.up1(z_hat), SLOPE)
        h = leaky_relu(self.up2(h), SLOPE)
        return self.out(h)


class ParaJD(Module):
    """Two submodules, each PMIFM over the other views followed by deconvolutions.

    Stage 1 upsamples x2 (latent -> 1/8 resolution), stage 2 x8 back to pixels.
    """

    def __init__(self, rng: np.random.Generator, channels: int) -> None:
        self.fuse1 = PMIFMWeights(rng, channels)
        self.up1 = Deconv2d(rng, channels, channels, 5)
        self.fuse2 = PMIFMWeights(rng, channels)
        self.up2 = [
            Deconv2d(rng, channels, channels, 5),
            Deconv2d(rng, channels, channels, 5),
            Deconv2d(rng, channels, 3, 5),
        ]

    def stage1(self, latents: Sequence[Tensor]) -> list[Tensor]:
        feats = []
        for k, y in enumerate(latents):
            sides = [latents[j] for j in range(len(latents)) if j != k]
            feats.append(leaky_relu(self.up1(pmifm(y, sides, self.fuse1)), SLOPE))
        return feats

    def stage2(self, feats: Sequence[Tensor]) -> list[Tensor]:
        out = []
        for k, f in enumerate(feats):
            sides = [feats[j] for j in range(len(feats)) if j != k]
            h = pmifm(f, sides, self.fuse2)
            for i, layer in enumerate(self.up2):
                h = layer(h)
                if i < len(self.up2) - 1:
                    h = leaky_relu(h, SLOPE)
            out.append(h)
        return out

    def forward(self, latents: Sequence[Tensor]) -> list[Tensor]:
        if not latents:
            raise ShapeError("ParaJD needs at least one view")
        for k, y in enumerate(latents):
            if y.shape != latents[0].shape:
                raise ShapeError(f"ParaJD: latent {k} has shape {y.shape}, view 0 has {latents[0].shape}")
        return self.stage2(self.stage1(latents))


def para_jd(
    latents: Sequence[Tensor], decoder: ParaJD, size: Optional[tuple[int, int]] = None
) -> list[Tensor]:
    """Joint reconstruction of all views, cropped to ``size`` and clamped to [0, 1]."""
    recon = decoder(latents)
    if size is not None:
        h, w = size
        recon = [r[:, :, :h, :w] for r in recon]
    return [clamp(r, 0.0, 1.0) for r in recon]


# ---------------------------------------------------------------------------
# padding / per-view encoding
# ---------------------------------------------------------------------------


def check_image(x: np.ndarray) -> None:
    if x.ndim != 4 or x.shape[1] != 3:
        raise InputError(f"expected image batch [B,3,H,W], got {x.shape}")
    if not np.isfinite(x).all() or x.min() < 0.0 or x.max() > 1.0:
        raise InputError("pixel values must lie in [0, 1]")


def padded_size(h: int, w: int, multiple: int = PAD_MULTIPLE) -> tuple[int, int]:
    return -(-h // multiple) * multiple, -(-w // multiple) * multiple


def pad_image(x: np.ndarray, multiple: int = PAD_MULTIPLE) -> np.ndarray:
    """Reflect-pad the bottom/right edges of [B,3,H,W] up to a multiple of ``multiple``."""
    h, w = x.shape[2:]
    ph, pw = padded_size(h, w, multiple)
    if (ph, pw) == (h, w):
        return x
    mode = "reflect" if h > 1 and w > 1 else "edge"
    return np.pad(x, ((0, 0), (0, 0), (0, ph - h), (0, pw - w)), mode=mode)


def encode_view(
    x_k: Union[np.ndarray, Tensor], encoder: AnalysisTransform, hyper: HyperAnalysis
) -> tuple[Tensor, Tensor]:
    """y_k = E(x_k), z_k = H_e(y_k) for a single view; pads to a multiple of 64."""
    arr = x_k.data if isinstance(x_k, Tensor) else np.asarray(x_k, dtype=np.float64)
    check_image(arr)
    y = encoder(Tensor(pad_image(arr)))
    return y, hyper(y)


# ---------------------------------------------------------------------------
# quantization
# ---------------------------------------------------------------------------


def quantize(
    t: Union[Tensor, np.ndarray],
    mean: Union[Tensor, np.ndarray, None] = None,
    mode: str = "inference",
    noise: Optional[np.ndarray] = None,
):
    """Quantize around ``mean`` (0 if omitted).

    ``inference``: round(t - mean) + mean, half away from zero.
    ``train``: returns ``(noisy, rounded)`` where ``noisy = t + U(-0.5, 0.5)``
    feeds the rate and ``rounded`` uses a straight-through gradient.
    """
    if isinstance(t, np.ndarray):
        m = 0.0 if mean is None else np.asarray(mean)
        if mode != "inference":
            raise ValueError("numpy inputs support inference mode only")
        return round_half_away(t - m) + m
    if mean is not None and tuple(mean.shape) != tuple(t.shape):
        raise ShapeError(f"quantize: mean shape {mean.shape} != {t.shape}")
    if mode == "inference":
        m = 0.0 if mean is None else (mean.data if isinstance(mean, Tensor) else mean)
        return Tensor(round_half_away(t.data - m) + m)
    if mode != "train":
        raise ValueError(f"unknown quantization mode {mode!r}")
    if noise is None:
        raise ValueError("train mode needs a noise array")
    noisy = t + noise
    rounded = round_ste(t) if mean is None else round_ste(t - mean) + mean
    return noisy, rounded


# ---------------------------------------------------------------------------
# rate-distortion objective
# ---------------------------------------------------------------------------


def mse(a: Tensor, b: Tensor) -> Tensor:
    d = a - b
    return (d * d).mean()


def rd_loss(
    x: Sequence[Tensor],
    x_hat: Sequence[Tensor],
    rate_y: Sequence[Union[Tensor, float]],
    rate_z: Sequence[Union[Tensor, float]],
    lam: float,
) -> Tensor:
    """lambda * sum_k MSE(x_k, x_hat_k) + sum_k (R_y_k + R_z_k), rates in bpp."""
    if lam <= 0:
        raise ConfigError(f"rd_loss: lambda must be positive, got {lam}")
    if not (len(x) == len(x_hat) == len(rate_y) == len(rate_z)):
        raise ShapeError("rd_loss: per-view sequences differ in length")
    dist = sum((mse(a, b) for a, b in zip(x, x_hat)), Tensor(0.0))
    rate = sum((Tensor(0.0) + ry + rz for ry, rz in zip(rate_y, rate_z)), Tensor(0.0))
    return dist * float(lam) + rate
