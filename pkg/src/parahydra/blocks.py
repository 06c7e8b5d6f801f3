"""Reusable learned blocks: SKM, DepthRB, fusion net F, local checkerboard attention."""

from __future__ import annotations

import numpy as np

from . import checkerboard
from .nn import Conv2d, Module
from .tensor import (
    ConfigError,
    ShapeError,
    Tensor,
    concat,
    leaky_relu,
    pad,
    scatter,
    softmax_lastdim,
)

SLOPE = 0.01


def _check_channels(x: Tensor, c: int, what: str) -> None:
    if x.ndim != 4 or x.shape[1] != c:
        raise ConfigError(f"{what}: expected [B,{c},H,W] input, got {x.shape}")


class SKM(Module):
    """Selective kernel module.

    Depthwise 3x3 and 5x5 branches are mixed per channel by a softmax gate
    computed from globally pooled features, then projected by a 1x1 conv.
    """

    def __init__(self, rng: np.random.Generator, channels: int, reduction: int = 4) -> None:
        hidden = max(channels // reduction, 4)
        self.channels = channels
        self.branch3 = Conv2d(rng, channels, channels, 3, groups=channels, bias=False)
        self.branch5 = Conv2d(rng, channels, channels, 5, groups=channels, bias=False)
        self.squeeze = Conv2d(rng, channels, hidden, 1)
        self.excite = Conv2d(rng, hidden, 2 * channels, 1)
        self.proj = Conv2d(rng, channels, channels, 1)

    def branches(self, f: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        _check_channels(f, self.channels, "SKM")
        b3, b5 = self.branch3(f), self.branch5(f)
        pooled = (b3 + b5).mean(axis=(2, 3), keepdims=True)
        logits = self.excite(leaky_relu(self.squeeze(pooled), SLOPE))
        B, C = f.shape[0], self.channels
        gates = softmax_lastdim(logits.reshape(B, 2, C).transpose(0, 2, 1))  # B,C,2
        return b3, b5, gates

    def gates(self, f: Tensor) -> Tensor:
        return self.branches(f)[2]

    def forward(self, f: Tensor) -> Tensor:
        b3, b5, gates = self.branches(f)
        B, C = f.shape[0], self.channels
        g3 = gates[:, :, 0].reshape(B, C, 1, 1)
        g5 = gates[:, :, 1].reshape(B, C, 1, 1)
        return self.proj(b3 * g3 + b5 * g5)


class DepthRB(Module):
    """Depth-wise residual bottleneck: 1x1 expand, depthwise 3x3, 1x1 reduce, skip."""

    def __init__(self, rng: np.random.Generator, channels: int, expand: int = 2) -> None:
        self.channels = channels
        self.expand = Conv2d(rng, channels, channels * expand, 1)
        self.depthwise = Conv2d(rng, channels * expand, channels * expand, 3, groups=channels * expand)
        self.reduce = Conv2d(rng, channels * expand, channels, 1)

    def forward(self, x: Tensor) -> Tensor:
        _check_channels(x, self.channels, "DepthRB")
        h = leaky_relu(self.expand(x), SLOPE)
        h = leaky_relu(self.depthwise(h), SLOPE)
        return x + self.reduce(h)


class FusionNet(Module):
    """Merges an aligned reference into a base feature; residual on ``base``."""

    def __init__(self, rng: np.random.Generator, channels: int) -> None:
        self.channels = channels
        self.conv1 = Conv2d(rng, 2 * channels, channels, 3)
        self.conv2 = Conv2d(rng, channels, channels, 3)

    def forward(self, aligned: Tensor, base: Tensor) -> Tensor:
        if aligned.shape != base.shape:
            raise ShapeError(f"FusionNet: aligned {aligned.shape} != base {base.shape}")
        _check_channels(base, self.channels, "FusionNet")
        h = leaky_relu(self.conv1(concat([aligned, base], axis=1)), SLOPE)
        return base + self.conv2(h)


def window_offsets(window: int) -> np.ndarray:
    """Offsets (di, dj) inside a window that land on anchors when seen from a non-anchor."""
    r = window // 2
    offs = [(di, dj) for di in range(-r, r + 1) for dj in range(-r, r + 1) if (di + dj) % 2 != 0]
    return np.array(offs, dtype=np.int64)


class CheckerboardLocalAttention(Module):
    """Each non-anchor position attends to the anchors in its ``window`` x ``window``
    neighbourhood.

    Queries come from ``query_feats`` (context that is already available to the
    decoder); keys and values are 1x1 projections of the anchor map after zero
    padding. Non-anchor entries of the anchor map are never read. The output is
    zero on anchor positions.
    """

    def __init__(
        self, rng: np.random.Generator, anchor_channels: int, query_channels: int, dim: int, window: int = 5
    ) -> None:
        if window < 1 or window % 2 == 0:
            raise ConfigError(f"local attention window must be odd, got {window}")
        self.window = window
        self.dim = dim
        self.q = Conv2d(rng, query_channels, dim, 1)
        self.k = Conv2d(rng, anchor_channels, dim, 1)
        self.v = Conv2d(rng, anchor_channels, dim, 1)

    def forward(self, anchor_ctx: Tensor, query_feats: Tensor) -> Tensor:
        B, _, H, W = anchor_ctx.shape
        if query_feats.shape[0] != B or query_feats.shape[2:] != (H, W):
            raise ShapeError(f"local attention: anchor {anchor_ctx.shape} vs query {query_feats.shape}")
        _, _, nr, nc = checkerboard.positions(H, W)
        if len(nr) == 0:
            return Tensor(np.zeros((B, self.dim, H, W)))
        r = self.window // 2
        offs = window_offsets(self.window)
        padded = pad(anchor_ctx, ((0, 0), (0, 0), (r, r), (r, r)))
        keys, vals = self.k(padded), self.v(padded)
        rows = nr[:, None] + offs[None, :, 0] + r  # n_na, n_off
        cols = nc[:, None] + offs[None, :, 1] + r
        kg = keys[:, :, rows, cols]  # B,d,n_na,n_off
        vg = vals[:, :, rows, cols]
        q = self.q(query_feats)[:, :, nr, nc]  # B,d,n_na
        n = len(nr)
        q = q.reshape(B, self.dim, n, 1)
        logits = (q * kg).sum(axis=1) * (1.0 / np.sqrt(self.dim))  # B,n_na,n_off
        attn = softmax_lastdim(logits).reshape(B, 1, n, len(offs))
        out = (attn * vg).sum(axis=3)  # B,d,n_na
        return scatter(out, (slice(None), slice(None), nr, nc), (B, self.dim, H, W))
