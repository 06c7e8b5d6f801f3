"""The full codec: shared per-view transforms, entropy model and joint decoder."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import ModelConfig
from .entropy import EntropyModel
from .nn import FormatError, Module, load_weights, save_weights
from .tensor import Tensor, round_ste
from .transforms import AnalysisTransform, HyperAnalysis, HyperSynthesis, ParaJD, check_image, mse, rd_loss

_CONFIG_PREFIX = "config."


class ParaHydra(Module):
    """Encoder weights are shared by all views, so any K works with one model."""

    def __init__(self, cfg: ModelConfig) -> None:
        rng = np.random.default_rng(cfg.seed)
        self.cfg = cfg
        n = cfg.channels
        self.encoder = AnalysisTransform(rng, n)
        self.hyper_enc = HyperAnalysis(rng, n)
        self.hyper_dec = HyperSynthesis(rng, n)
        self.entropy = EntropyModel(rng, cfg)
        self.decoder = ParaJD(rng, n)

    # -- persistence ---------------------------------------------------------
    def save(self, path: str) -> None:
        records = {f"{_CONFIG_PREFIX}{k}": np.array([v], dtype=np.float64) for k, v in self.cfg.to_dict().items()}
        records.update(self.state_dict())
        save_weights(path, records)

    @classmethod
    def load(cls, path: str) -> "ParaHydra":
        records = load_weights(path)
        cfg_items = {k[len(_CONFIG_PREFIX) :]: int(v[0]) for k, v in records.items() if k.startswith(_CONFIG_PREFIX)}
        if not cfg_items:
            raise FormatError(f"{path}: weight file carries no model configuration")
        model = cls(ModelConfig(**cfg_items))
        model.load_state_dict({k: v for k, v in records.items() if not k.startswith(_CONFIG_PREFIX)})
        return model

    # -- training forward ------------------------------------------------------
    def latent_shapes(self, batch: int, h: int, w: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
        n = self.cfg.channels
        return (batch, n, h // 16, w // 16), (batch, n, h // 64, w // 64)

    def forward_train(
        self, views: Sequence[np.ndarray], y_noise: np.ndarray, z_noise: np.ndarray
    ) -> "TrainOutput":
        """Noise-relaxed rates and straight-through reconstructions for K views.

        ``views[k]`` is a [B,3,H,W] array with H, W multiples of 64. The noise
        arrays (U(-0.5, 0.5), view-major batch of K*B) relax the rate terms.
        """
        K = len(views)
        B, _, H, W = views[0].shape
        for v in views:
            check_image(v)
        x_all = Tensor(np.concatenate(views, axis=0))  # view-major batch
        y = self.encoder(x_all)
        z = self.hyper_enc(y)
        z_hat = round_ste(z)
        z_bits = self.entropy.prior.bits(z + z_noise).sum(axis=(1, 2, 3))
        phi_h = self.hyper_dec(z_hat)
        y_hat, y_bits = self.entropy.forward_train(y, phi_h, y_noise)
        latents = [y_hat[k * B : (k + 1) * B] for k in range(K)]
        x_hat = self.decoder(latents)
        pixels = H * W
        rate_y = [y_bits[k * B : (k + 1) * B].mean() * (1.0 / pixels) for k in range(K)]
        rate_z = [z_bits[k * B : (k + 1) * B].mean() * (1.0 / pixels) for k in range(K)]
        xs = [Tensor(v) for v in views]
        dist = [mse(a, b) for a, b in zip(xs, x_hat)]
        return TrainOutput(xs, x_hat, rate_y, rate_z, dist)


@dataclass
class TrainOutput:
    x: list[Tensor]
    x_hat: list[Tensor]
    rate_y: list[Tensor]  # bpp per view
    rate_z: list[Tensor]
    distortion: list[Tensor]  # MSE per view

    def loss(self, lam: float) -> Tensor:
        return rd_loss(self.x, self.x_hat, self.rate_y, self.rate_z, lam)
