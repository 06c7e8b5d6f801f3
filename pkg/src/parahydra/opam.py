"""Parallax attention along one folded axis, and its two-stage (horizontal then
vertical) composition.

Features are channel-last, ``[B, H, W, C]``. Learned query/key extractors are
SKMs; passing ``None`` for the weights selects the identity stub (Q = f_u,
K = f_v), which isolates the attention arithmetic for testing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .blocks import SKM
from .nn import Module
from .tensor import ShapeError, Tensor, batched_matmul, clamp, softmax_lastdim

HORIZONTAL = "horizontal"
VERTICAL = "vertical"
CONSISTENCY_FLOOR = 1e-12

# full 2D attention is only a reference; refuse anything bigger than this side
ORACLE_MAX_SIDE = 32


@dataclass
class ParallaxAttentionMaps:
    m_v_to_u: Tensor  # [B*H, W, W] (horizontal) or [B*W, H, H] (vertical)
    m_u_to_v: Tensor
    axis: str


class ParallaxPair(Module):
    """Query and key SKMs for one parallax-attention pass (not shared)."""

    def __init__(self, rng: np.random.Generator, channels: int) -> None:
        self.q = SKM(rng, channels)
        self.k = SKM(rng, channels)


class OPAMWeights(Module):
    def __init__(self, rng: np.random.Generator, channels: int) -> None:
        self.hor = ParallaxPair(rng, channels)
        self.ver = ParallaxPair(rng, channels)


def _nchw(f: Tensor) -> Tensor:
    return f.transpose(0, 3, 1, 2)


def _nhwc(f: Tensor) -> Tensor:
    return f.transpose(0, 2, 3, 1)


def parallax_attention(
    f_u: Tensor, f_v: Tensor, axis: str, weights: Optional[ParallaxPair] = None
) -> tuple[Tensor, Tensor, ParallaxAttentionMaps]:
    """Align ``f_v`` to ``f_u`` along rows (horizontal) or columns (vertical).

    Returns the aligned feature ``[B,H,W,C]``, the cycle consistency ``[B,H,W]``
    and both attention maps.
    """
    if f_u.ndim != 4 or f_u.shape != f_v.shape:
        raise ShapeError(f"parallax_attention: shapes differ {f_u.shape} vs {f_v.shape}")
    if axis not in (HORIZONTAL, VERTICAL):
        raise ValueError(f"parallax_attention: unknown axis {axis!r}")
    if weights is None:
        q, k = f_u, f_v
    else:
        q, k = _nhwc(weights.q(_nchw(f_u))), _nhwc(weights.k(_nchw(f_v)))
    v = f_v
    if axis == VERTICAL:
        q, k, v = (t.transpose(0, 2, 1, 3) for t in (q, k, v))
    B, R, L, C = q.shape  # rows folded into batch, L positions per row
    qb = q.reshape(B * R, L, C)
    kb = k.reshape(B * R, L, C)
    vb = v.reshape(B * R, L, C)

    m = batched_matmul(qb, kb.swap_last())  # BR,L,L
    m_vu = softmax_lastdim(m)
    m_uv = softmax_lastdim(m.swap_last())

    # C[n, j] = sum_s M_vu[n, j, s] * M_uv[n, s, j]
    row = m_vu.reshape(B * R * L, 1, L)
    col = m_uv.swap_last().reshape(B * R * L, L, 1)
    cons = batched_matmul(row, col).reshape(B, R, L)

    aligned = batched_matmul(m_vu, vb).reshape(B, R, L, C)
    if axis == VERTICAL:
        aligned = aligned.transpose(0, 2, 1, 3)
        cons = cons.transpose(0, 2, 1)
    return aligned, cons, ParallaxAttentionMaps(m_vu, m_uv, axis)


@dataclass
class OPAMResult:
    aligned: Tensor  # f_l^ver, [B,H,W,C]
    consistency: Tensor  # C_l = C_hor * C_ver, [B,H,W]
    hor: ParallaxAttentionMaps
    ver: ParallaxAttentionMaps
    aligned_hor: Tensor
    consistency_hor: Tensor
    consistency_ver: Tensor


def opam(f_l: Tensor, f_r: Tensor, weights: Optional[OPAMWeights] = None) -> OPAMResult:
    """Horizontal pass on (f_l, f_r), then vertical pass on (f_l, f_l^hor)."""
    if f_l.shape != f_r.shape:
        raise ShapeError(f"opam: main {f_l.shape} and side {f_r.shape} differ")
    hw = weights.hor if weights is not None else None
    vw = weights.ver if weights is not None else None
    f_hor, c_hor, maps_h = parallax_attention(f_l, f_r, HORIZONTAL, hw)
    f_ver, c_ver, maps_v = parallax_attention(f_l, f_hor, VERTICAL, vw)
    c = clamp(c_hor * c_ver, CONSISTENCY_FLOOR, 1.0)
    return OPAMResult(f_ver, c, maps_h, maps_v, f_hor, c_hor, c_ver)


def full_2d_attention_oracle(f_l: Tensor, f_r: Tensor, weights: Optional[OPAMWeights] = None) -> Tensor:
    """Reference: every position of ``f_l`` attends over all H*W positions of ``f_r``."""
    if f_l.shape != f_r.shape:
        raise ShapeError(f"full_2d_attention_oracle: shapes differ {f_l.shape} vs {f_r.shape}")
    B, H, W, C = f_l.shape
    if max(H, W) > ORACLE_MAX_SIDE:
        raise ValueError(f"full_2d_attention_oracle refuses N={max(H, W)} > {ORACLE_MAX_SIDE}")
    if weights is None:
        q, k = f_l, f_r
    else:
        q, k = _nhwc(weights.hor.q(_nchw(f_l))), _nhwc(weights.hor.k(_nchw(f_r)))
    qf = q.reshape(B, H * W, C)
    kf = k.reshape(B, H * W, C)
    attn = softmax_lastdim(batched_matmul(qf, kf.swap_last()))
    return batched_matmul(attn, f_r.reshape(B, H * W, C)).reshape(B, H, W, C)
