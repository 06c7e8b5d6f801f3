"""Slice-wise checkerboard entropy model with parallax channel and global context.

Slices are indexed from 0. For slice ``i``:

* channel context: zeros for i = 0, otherwise PMIFM with slice ``i-1`` as the
  main source and slices ``< i-1`` as side sources;
* anchors are modelled from (channel context, hyperprior);
* non-anchors additionally get local window attention and global attention over
  the decoded anchors of the same slice.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import checkerboard, rangecoder
from .blocks import SLOPE, CheckerboardLocalAttention, DepthRB
from .config import ModelConfig
from .nn import Conv2d, Module, param
from .pmifm import PMIFMWeights, pmifm
from .tensor import (
    Tensor,
    batched_matmul,
    clamp,
    concat,
    leaky_relu,
    normal_cdf,
    round_half_away,
    round_ste,
    scatter,
    sigmoid,
    softmax_lastdim,
    softplus,
    where,
)

SIGMA_MIN = rangecoder.SIGMA_MIN
LOGISTIC_SCALE_MIN = 0.05
ANCHOR = "anchor"
NON_ANCHOR = "non-anchor"
_LN2 = float(np.log(2.0))


class SequencingError(RuntimeError):
    """A context was requested before the data it depends on was decoded."""


class ContractError(ValueError):
    pass


@dataclass
class GaussianParams:
    mu: Tensor
    sigma: Tensor


@dataclass
class ContextBundle:
    ch: Tensor
    hyper: Tensor
    lc: Optional[Tensor] = None
    gc: Optional[Tensor] = None


# ---------------------------------------------------------------------------
# blocks
# ---------------------------------------------------------------------------


class EntropyParameters(Module):
    """Two 1x1 convs on the concatenated contexts; sigma = softplus(raw) + 0.11."""

    def __init__(self, rng: np.random.Generator, cin: int, hidden: int, cout: int) -> None:
        self.cin, self.cout = cin, cout
        self.fc1 = Conv2d(rng, cin, hidden, 1)
        self.fc2 = Conv2d(rng, hidden, 2 * cout, 1)

    def forward(self, ctx: Tensor) -> GaussianParams:
        out = self.fc2(leaky_relu(self.fc1(ctx), SLOPE))
        mu = out[:, : self.cout]
        sigma = softplus(out[:, self.cout :]) + SIGMA_MIN
        return GaussianParams(mu, sigma)


class PGCM(Module):
    """Global attention from non-anchor queries to anchor keys/values, then Conv and DepthRB.

    Queries and keys are projections of the channel context; values are
    projections of the decoded anchors of the current slice.
    """

    def __init__(self, rng: np.random.Generator, channels: int) -> None:
        self.channels = channels
        self.q = Conv2d(rng, channels, channels, 1)
        self.k = Conv2d(rng, channels, channels, 1)
        self.v = Conv2d(rng, channels, channels, 1)
        self.conv = Conv2d(rng, channels, channels, 3)
        self.depth_rb = DepthRB(rng, channels)

    def attend(self, phi_ch: Tensor, anchor_slice: Tensor) -> Tensor:
        """softmax(Q_na K_ac^T / sqrt(s_c)) V_ac scattered onto non-anchors [B,C,H,W]."""
        B, C, H, W = anchor_slice.shape
        ar, ac, nr, nc = checkerboard.positions(H, W)
        if len(nr) == 0:
            return Tensor(np.zeros((B, C, H, W)))
        q = self.q(phi_ch)[:, :, nr, nc].transpose(0, 2, 1)  # B,n_na,C
        k = self.k(phi_ch)[:, :, ar, ac]  # B,C,n_a
        v = self.v(anchor_slice)[:, :, ar, ac].transpose(0, 2, 1)  # B,n_a,C
        attn = softmax_lastdim(batched_matmul(q, k) * (1.0 / np.sqrt(self.channels)))
        out = batched_matmul(attn, v).transpose(0, 2, 1)  # B,C,n_na
        return scatter(out, (slice(None), slice(None), nr, nc), (B, C, H, W))

    def forward(self, phi_ch: Tensor, anchor_slice: Tensor) -> Tensor:
        B, C, H, W = anchor_slice.shape
        h = self.depth_rb(self.conv(self.attend(phi_ch, anchor_slice)))
        return where(checkerboard._mask(H, W), 0.0, h)


class FactorizedPrior(Module):
    """Per-channel discretized logistic for the hyper-latent."""

    def __init__(self, channels: int) -> None:
        self.channels = channels
        self.loc = param(np.zeros(channels))
        self.raw_scale = param(np.full(channels, np.log(np.expm1(1.0 - LOGISTIC_SCALE_MIN))))

    def scale(self) -> Tensor:
        return softplus(self.raw_scale) + LOGISTIC_SCALE_MIN

    def bits(self, z: Tensor) -> Tensor:
        """Per-element code length in bits of (possibly noisy) z [B,C,H,W]."""
        loc = self.loc.reshape(1, -1, 1, 1)
        s = self.scale().reshape(1, -1, 1, 1)
        return _interval_bits(z - loc, s, sigmoid)

    def rows(self, shape: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        """(loc, scale) for every element of a [1,C,h,w] latent, in C-order."""
        _, _, h, w = shape
        scale = np.logaddexp(0.0, self.raw_scale.data) + LOGISTIC_SCALE_MIN
        return np.repeat(self.loc.data, h * w), np.repeat(scale, h * w)

    def tables(self, shape: Sequence[int]) -> np.ndarray:
        return rangecoder.build_logistic_tables(*self.rows(shape))

    def pmf(self, shape: Sequence[int]) -> np.ndarray:
        return rangecoder.logistic_pmf(*self.rows(shape))


def _abs(d: Tensor) -> Tensor:
    return where(d.data >= 0, d, -d)


def _interval_bits(d: Tensor, scale: Tensor, cdf) -> Tensor:
    ad = _abs(d)
    p = cdf((0.5 - ad) / scale) - cdf((-0.5 - ad) / scale)
    p = clamp(p, rangecoder.MIN_PROB, None)
    return p.log() * (-1.0 / _LN2)


def gaussian_bits(v: Tensor, params: GaussianParams) -> Tensor:
    """Differentiable per-element bits of ``v`` under the discretized Gaussian."""
    return _interval_bits(v - params.mu, params.sigma, normal_cdf)


def slice_rate(values: np.ndarray, mu: np.ndarray, sigma: np.ndarray, mask: Optional[np.ndarray] = None) -> float:
    """Estimated bits for ``values`` under the coder's folded Gaussian (incl. escapes).

    ``mask`` selects the elements to count (broadcast against ``values``).
    """
    values, mu, sigma = (np.asarray(a, dtype=np.float64) for a in (values, mu, sigma))
    if np.any(sigma < SIGMA_MIN):
        raise ContractError(f"slice_rate: sigma below {SIGMA_MIN}")
    if mask is not None:
        sel = np.broadcast_to(mask, values.shape)
        values, mu, sigma = values[sel], mu[sel], sigma[sel]
    d = values.reshape(-1) - mu.reshape(-1)
    sym = round_half_away(d)
    # fractional offset of a dequantized value goes into the location
    pmf = rangecoder.gaussian_pmf(sym - d, sigma.reshape(-1))
    return float(rangecoder.symbol_bits(sym.astype(np.int64), pmf).sum())


# ---------------------------------------------------------------------------
# the model
# ---------------------------------------------------------------------------


class EntropyModel(Module):
    def __init__(self, rng: np.random.Generator, cfg: ModelConfig) -> None:
        sc, n = cfg.slice_channels, cfg.channels
        self.cfg = cfg
        self.pccm = PMIFMWeights(rng, sc)
        self.local = CheckerboardLocalAttention(rng, sc, sc, sc, cfg.window)
        self.pgcm = PGCM(rng, sc)
        self.ep_anchor = [EntropyParameters(rng, sc + 2 * n, cfg.ep_hidden, sc) for _ in range(cfg.slices)]
        self.ep_nonanchor = [EntropyParameters(rng, 3 * sc + 2 * n, cfg.ep_hidden, sc) for _ in range(cfg.slices)]
        self.prior = FactorizedPrior(n)

    # -- contexts ------------------------------------------------------------
    def pccm_context(self, decoded: Sequence[Tensor], i: int, like: Optional[Tensor] = None) -> Tensor:
        """Channel context for slice ``i`` from the already decoded slices ``< i``."""
        if not 0 <= i < self.cfg.slices:
            raise SequencingError(f"slice index {i} outside 0..{self.cfg.slices - 1}")
        if len(decoded) < i:
            raise SequencingError(f"slice {i} needs {i} decoded slices, have {len(decoded)}")
        if i == 0:
            ref = like if like is not None else (decoded[0] if decoded else None)
            if ref is None:
                raise SequencingError("slice 0 context needs a reference shape")
            B, _, H, W = ref.shape
            return Tensor(np.zeros((B, self.cfg.slice_channels, H, W)))
        return pmifm(decoded[i - 1], list(decoded[: i - 1]), self.pccm)

    def entropy_parameters(self, ctx: ContextBundle, part: str, i: int) -> GaussianParams:
        if part == ANCHOR:
            if ctx.lc is not None or ctx.gc is not None:
                raise ContractError("anchor parameters take only channel and hyperprior context")
            return self.ep_anchor[i](concat([ctx.ch, ctx.hyper], axis=1))
        if part == NON_ANCHOR:
            if ctx.lc is None or ctx.gc is None:
                raise ContractError("non-anchor parameters need local and global context")
            return self.ep_nonanchor[i](concat([ctx.ch, ctx.hyper, ctx.lc, ctx.gc], axis=1))
        raise ContractError(f"unknown part {part!r}")

    def anchor_params(self, i: int, phi_ch: Tensor, phi_h: Tensor) -> GaussianParams:
        return self.entropy_parameters(ContextBundle(phi_ch, phi_h), ANCHOR, i)

    def nonanchor_params(self, i: int, phi_ch: Tensor, phi_h: Tensor, anchor_slice: Optional[Tensor]) -> GaussianParams:
        if anchor_slice is None:
            raise SequencingError(f"non-anchor parameters of slice {i} need its decoded anchors")
        lc = self.local(anchor_slice, phi_ch)
        gc = self.pgcm(phi_ch, anchor_slice)
        return self.entropy_parameters(ContextBundle(phi_ch, phi_h, lc, gc), NON_ANCHOR, i)

    def slice_params(self, y_hat: Tensor, i: int, phi_h: Tensor, phase: str) -> GaussianParams:
        """Parameters of one phase of slice ``i`` read causally out of a full ``y_hat``.

        The anchor phase touches only slices ``< i``; the non-anchor phase also
        reads the anchor positions of slice ``i``.
        """
        sc = self.cfg.slice_channels
        decoded = [y_hat[:, j * sc : (j + 1) * sc] for j in range(i)]
        phi_ch = self.pccm_context(decoded, i, like=y_hat)
        if phase == ANCHOR:
            return self.anchor_params(i, phi_ch, phi_h)
        if phase != NON_ANCHOR:
            raise ContractError(f"unknown phase {phase!r}")
        H, W = y_hat.shape[2:]
        cur = y_hat[:, i * sc : (i + 1) * sc]
        anchor_only = where(checkerboard._mask(H, W), cur, 0.0)
        return self.nonanchor_params(i, phi_ch, phi_h, anchor_only)

    # -- training path ---------------------------------------------------------
    def forward_train(self, y: Tensor, phi_h: Tensor, noise: np.ndarray) -> tuple[Tensor, Tensor]:
        """Quantize ``y`` slice by slice (straight-through) and estimate its bits.

        Returns ``(y_hat, bits)`` with ``bits`` of shape [B] (sum over the latent).
        ``noise`` has y's shape and holds the U(-0.5, 0.5) rate relaxation.
        """
        sc = self.cfg.slice_channels
        H, W = y.shape[2:]
        mask = checkerboard._mask(H, W)
        decoded: list[Tensor] = []
        bits = []
        for i in range(self.cfg.slices):
            cur = y[:, i * sc : (i + 1) * sc]
            phi_ch = self.pccm_context(decoded, i, like=y)
            pa = self.anchor_params(i, phi_ch, phi_h)
            yq_a = _ste_quant(cur, pa.mu)
            pn = self.nonanchor_params(i, phi_ch, phi_h, where(mask, yq_a, 0.0))
            yq_n = _ste_quant(cur, pn.mu)
            decoded.append(where(mask, yq_a, yq_n))
            params = GaussianParams(where(mask, pa.mu, pn.mu), where(mask, pa.sigma, pn.sigma))
            noisy = cur + noise[:, i * sc : (i + 1) * sc]
            bits.append(gaussian_bits(noisy, params).sum(axis=(1, 2, 3)))
        total = bits[0]
        for b in bits[1:]:
            total = total + b
        return concat(decoded, axis=1), total


def _ste_quant(t: Tensor, mu: Tensor) -> Tensor:
    return round_ste(t - mu) + mu
