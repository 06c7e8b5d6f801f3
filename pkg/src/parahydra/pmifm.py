"""Consistency-weighted fusion of any number of side sources into a main source."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .blocks import FusionNet
from .nn import Module
from .opam import OPAMWeights, opam
from .tensor import ShapeError, Tensor, concat, softmax_lastdim


class PMIFMWeights(Module):
    """One OPAM weight set shared by every side source, plus the fusion net."""

    def __init__(self, rng: np.random.Generator, channels: int, identity_skm: bool = False) -> None:
        self.channels = channels
        self.opam = None if identity_skm else OPAMWeights(rng, channels)
        self.fusion = FusionNet(rng, channels)


@dataclass
class FusionTrace:
    aligned: list[Tensor]  # per side, NCHW
    consistency: list[Tensor]  # per side, [B,H,W]
    weights: Optional[Tensor]  # [S,B,H,W], None when there are no sides
    fused: Tensor  # relevance-weighted aligned feature, NCHW


def _check(f_i: Tensor, sides: Sequence[Tensor]) -> None:
    if f_i.ndim != 4:
        raise ShapeError(f"PMIFM: main source must be [B,C,H,W], got {f_i.shape}")
    for n, s in enumerate(sides):
        if s.shape != f_i.shape:
            raise ShapeError(f"PMIFM: side source {n} has shape {s.shape}, main is {f_i.shape}")


def fuse_sides(f_i: Tensor, sides: Sequence[Tensor], weights: PMIFMWeights) -> FusionTrace:
    """OPAM per side, per-position softmax over the consistencies, weighted sum.

    All side passes run as one batched OPAM call (main repeated along batch).
    """
    _check(f_i, sides)
    S = len(sides)
    B, C, H, W = f_i.shape
    if S == 0:
        return FusionTrace([], [], None, Tensor(np.zeros(f_i.shape)))
    main = f_i.transpose(0, 2, 3, 1)
    side = concat([s.transpose(0, 2, 3, 1) for s in sides], axis=0) if S > 1 else sides[0].transpose(0, 2, 3, 1)
    mains = concat([main] * S, axis=0) if S > 1 else main
    res = opam(mains, side, weights.opam)
    aligned = res.aligned.reshape(S, B, H, W, C)
    cons = res.consistency.reshape(S, B, H, W)
    w = softmax_lastdim(cons.transpose(1, 2, 3, 0))  # B,H,W,S
    # sum over sources in index order
    fused = (aligned.transpose(1, 2, 3, 4, 0) * w.reshape(B, H, W, 1, S)).sum(axis=4)  # B,H,W,C
    fused = fused.transpose(0, 3, 1, 2)
    aligned_list = [aligned[k].transpose(0, 3, 1, 2) for k in range(S)]
    cons_list = [cons[k] for k in range(S)]
    return FusionTrace(aligned_list, cons_list, w.transpose(3, 0, 1, 2), fused)


def pmifm(f_i: Tensor, sides: Sequence[Tensor], weights: PMIFMWeights) -> Tensor:
    """Refine ``f_i`` [B,C,H,W] with side sources; an empty side set fuses zeros."""
    trace = fuse_sides(f_i, sides, weights)
    return weights.fusion(trace.fused, f_i)


def pmifm_consistency_probe(f_i: Tensor, sides: Sequence[Tensor], weights: PMIFMWeights) -> list[Tensor]:
    """The raw per-side consistency maps the fusion uses."""
    return fuse_sides(f_i, sides, weights).consistency
