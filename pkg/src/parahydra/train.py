"""Toy rate-distortion trainer on synthetic multi-view scenes."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, TextIO

import numpy as np

from .config import LAMBDAS, TOY, ModelConfig
from .data import ViewSet, synthetic_dataset
from .model import ParaHydra
from .nn import Module
from .transforms import ConfigError

log = logging.getLogger(__name__)

LOG_HEADER = ("step", "distortion", "rate_bpp", "loss")


class TrainingDivergedError(RuntimeError):
    """The RD loss or one of its terms became non-finite."""


@dataclass(frozen=True)
class DatasetSpec:
    scenes: int = 8
    views: int = 2
    height: int = 64
    width: int = 64
    disparity: int = 4
    seed: int = 0

    def build(self) -> list[ViewSet]:
        return synthetic_dataset(self.seed, self.scenes, self.views, self.height, self.width, self.disparity)


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 1024.0
    steps: int = 500
    batch_size: int = 2
    lr: float = 1e-4
    seed: int = 0
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelConfig = TOY
    allow_any_lambda: bool = False

    def __post_init__(self) -> None:
        if self.lam <= 0:
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        if not self.allow_any_lambda and self.lam not in LAMBDAS:
            raise ConfigError(f"lambda {self.lam} not in {LAMBDAS}; pass allow_any_lambda to override")
        if self.steps < 0 or self.batch_size < 1 or self.lr < 0:
            raise ConfigError(f"invalid steps={self.steps}, batch_size={self.batch_size}, lr={self.lr}")
        if self.batch_size > self.dataset.scenes:
            raise ConfigError(f"batch size {self.batch_size} exceeds {self.dataset.scenes} scenes")


class Adam:
    def __init__(self, module: Module, lr: float, betas=(0.9, 0.999), eps: float = 1e-8) -> None:
        self.params = module.parameters()
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.b1
            m += (1.0 - self.b1) * p.grad
            v *= self.b2
            v += (1.0 - self.b2) * p.grad**2
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class StepRecord:
    step: int
    distortion: float
    rate_bpp: float
    loss: float


def _scene_noise(seed: int, scene: int, y_shape, z_shape) -> tuple[np.ndarray, np.ndarray]:
    """Rate-relaxation noise fixed per (run seed, scene) for reproducible logs."""
    rng = np.random.default_rng([seed, scene, 0x5EED])
    return rng.uniform(-0.5, 0.5, size=y_shape), rng.uniform(-0.5, 0.5, size=z_shape)


class Trainer:
    def __init__(self, cfg: TrainConfig, model: Optional[ParaHydra] = None) -> None:
        self.cfg = cfg
        self.model = model if model is not None else ParaHydra(cfg.model)
        self.data = cfg.dataset.build()
        self.opt = Adam(self.model, cfg.lr)
        self._order_rng = np.random.default_rng([cfg.seed, 1])
        self._queue: list[int] = []
        k, h, w = cfg.dataset.views, cfg.dataset.height, cfg.dataset.width
        y_shape, z_shape = self.model.latent_shapes(k, h, w)
        self._noise = [_scene_noise(cfg.seed, i, y_shape, z_shape) for i in range(len(self.data))]

    def _next_batch(self) -> list[int]:
        """Scenes in a seeded permutation, reshuffled each pass over the set."""
        out = []
        while len(out) < self.cfg.batch_size:
            if not self._queue:
                self._queue = list(self._order_rng.permutation(len(self.data)))
            out.append(int(self._queue.pop(0)))
        return out

    def step(self, step: int) -> StepRecord:
        idx = self._next_batch()
        k = self.cfg.dataset.views
        views = [np.stack([self.data[i].views[v] for i in idx]) for v in range(k)]
        # noise arrays are stored view-major per scene; regroup to view-major per batch
        y_noise = np.concatenate([np.stack([self._noise[i][0][v] for i in idx]) for v in range(k)])
        z_noise = np.concatenate([np.stack([self._noise[i][1][v] for i in idx]) for v in range(k)])
        try:
            out = self.model.forward_train(views, y_noise, z_noise)
        except FloatingPointError as exc:
            raise TrainingDivergedError(f"step {step}: non-finite activations on scenes {idx} ({exc})") from exc
        loss = out.loss(self.cfg.lam)
        dist = float(np.mean([d.item() for d in out.distortion]))
        rate = float(np.mean([(ry + rz).item() for ry, rz in zip(out.rate_y, out.rate_z)]))
        rec = StepRecord(step, dist, rate, loss.item())
        if not all(np.isfinite([rec.distortion, rec.rate_bpp, rec.loss])):
            raise TrainingDivergedError(
                f"step {step}: non-finite objective (distortion={rec.distortion}, rate={rec.rate_bpp}, "
                f"loss={rec.loss}) on scenes {idx}"
            )
        self.model.zero_grad()
        loss.backward()
        self.opt.step()
        return rec

    def run(self, log_file: Optional[TextIO] = None) -> list[StepRecord]:
        writer = csv.writer(log_file, lineterminator="\n") if log_file is not None else None
        if writer:
            writer.writerow(LOG_HEADER)
        records = []
        for s in range(1, self.cfg.steps + 1):
            rec = self.step(s)
            records.append(rec)
            if writer:
                writer.writerow([rec.step, repr(rec.distortion), repr(rec.rate_bpp), repr(rec.loss)])
                log_file.flush()
            if s % 50 == 0 or s == 1:
                log.info("step %d: D=%.6f R=%.4f bpp loss=%.4f", s, rec.distortion, rec.rate_bpp, rec.loss)
        return records


def train(cfg: TrainConfig, weights_out: Optional[str | Path] = None, log_path: Optional[str | Path] = None):
    trainer = Trainer(cfg)
    if log_path is not None:
        with open(log_path, "w", encoding="utf-8") as fh:
            records = trainer.run(fh)
    else:
        records = trainer.run()
    if weights_out is not None:
        trainer.model.save(str(weights_out))
    return trainer.model, records
