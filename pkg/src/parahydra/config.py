from __future__ import annotations

from dataclasses import asdict, dataclass

LAMBDAS = (1024, 2048, 4096, 8192)

# input sides are padded to a multiple of this (x16 analysis, x4 hyper-analysis)
PAD_MULTIPLE = 64


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 192
    slices: int = 8
    window: int = 5
    ep_hidden: int = 192
    seed: int = 0

    def __post_init__(self) -> None:
        if self.channels % self.slices:
            raise ValueError(f"channels ({self.channels}) must split evenly into {self.slices} slices")
        if self.window % 2 == 0:
            raise ValueError(f"window must be odd, got {self.window}")

    @property
    def slice_channels(self) -> int:
        return self.channels // self.slices

    def to_dict(self) -> dict[str, int]:
        return asdict(self)


# Full-width configuration (192 latent channels, 8 slices of 24, window 5).
FULL = ModelConfig()

# Reduced width for desk-scale training and the test-suite.
TOY = ModelConfig(channels=48, slices=8, window=5, ep_hidden=48)
