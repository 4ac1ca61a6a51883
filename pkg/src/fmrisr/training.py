"""Patch-based training of the SR network on randomly degraded pairs."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .degradation import DegradationConfig, DegradationRecipe, make_training_pair, sample_recipe
from .errors import ConfigError, NumericError
from .losses import LossConfig, compound_terms
from .network import ModelConfig, SRModel, init_model, save_checkpoint
from .volume import VoxelGrid

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    patch_size: int = 32
    batch_size: int = 4
    steps: int = 2000
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 0
    deterministic: bool = True
    bake: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    degradation: DegradationConfig = field(default_factory=DegradationConfig)

    def validate(self) -> "TrainConfig":
        self.model.validate()
        self.loss.validate()
        self.degradation.validate()
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        need = 2 * self.model.receptive_field_radius
        if self.patch_size < need:
            raise ConfigError(f"patch_size {self.patch_size} is below twice the receptive-field radius ({need})")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        model = ModelConfig.from_dict(d.pop("model", {}))
        loss = LossConfig.from_dict(d.pop("loss", {}))
        degradation = DegradationConfig.from_dict(d.pop("degradation", {}))
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        return cls(model=model, loss=loss, degradation=degradation, **d).validate()

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class PatchPair:
    input: np.ndarray
    target: np.ndarray
    frame_index: int
    corner: tuple[int, int, int]
    recipe: DegradationRecipe


@dataclass
class StepRecord:
    step: int
    loss: float
    l1: float
    ssim: float
    wall_time_s: float | None = None


@dataclass
class TrainJournal:
    records: list[StepRecord] = field(default_factory=list)
    final: dict = field(default_factory=dict)

    def to_jsonl(self) -> str:
        lines = [json.dumps({k: v for k, v in asdict(r).items() if v is not None}) for r in self.records]
        lines.append(json.dumps({"final": self.final}))
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_jsonl())


def sample_patch_pair(hr_frames: Sequence[VoxelGrid], rng: np.random.Generator, config: TrainConfig) -> PatchPair:
    """Pick a frame, degrade it with a fresh recipe, and crop an aligned cube from both."""
    p = config.patch_size
    for i, frame in enumerate(hr_frames):
        if min(frame.dims) < p:
            raise ConfigError(f"frame {i} with dims {frame.dims} is smaller than patch size {p}")
    index = int(rng.integers(len(hr_frames)))
    recipe = sample_recipe(rng, config.degradation)
    source, target = make_training_pair(hr_frames[index], recipe)
    corner = tuple(int(rng.integers(0, n - p + 1)) for n in source.dims)
    sl = tuple(slice(c, c + p) for c in corner)
    return PatchPair(source.data[sl].copy(), target.data[sl].copy(), index, corner, recipe)


def make_optimizer(model: SRModel, config: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(
        model.parameters(),
        lr=config.learning_rate,
        betas=(config.adam_beta1, config.adam_beta2),
        eps=config.adam_eps,
    )


def train_step(model: SRModel, optimizer: torch.optim.Optimizer, batch: Sequence[PatchPair],
               config: TrainConfig, step: int = 0) -> StepRecord:
    """One Adam update on the mean compound loss of ``batch``; returns the pre-update loss."""
    inputs = np.stack([b.input for b in batch])[:, None].astype(np.float64)
    x = torch.from_numpy(inputs).to(model.dtype)
    optimizer.zero_grad(set_to_none=False)
    # global residual added in float64, as at inference
    corr = model.residual(x)
    y_np = inputs + corr.detach().double().numpy()
    grads = np.empty(y_np.shape)
    loss = l1 = ssim = 0.0
    n = len(batch)
    # fixed summation order over the batch
    for i, pair in enumerate(batch):
        li, l1i, si, gi = compound_terms(y_np[i, 0], pair.target, config.loss)
        loss += li / n
        l1 += l1i / n
        ssim += si / n
        grads[i, 0] = gi / n
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss at step {step}")
    corr.backward(torch.from_numpy(grads).to(corr.dtype))
    optimizer.step()
    return StepRecord(step, loss, l1, ssim)


def bake_pairs(hr_frames: Sequence[VoxelGrid], config: TrainConfig, n: int) -> list[PatchPair]:
    rng = np.random.default_rng([config.seed, 1])
    return [sample_patch_pair(hr_frames, rng, config) for _ in range(n)]


def fit(hr_frames: Sequence[VoxelGrid], config: TrainConfig, checkpoint_dir=None,
        progress_every: int = 100) -> tuple[SRModel, TrainJournal]:
    config.validate()
    if not hr_frames:
        raise ConfigError("training needs at least one frame")
    if config.deterministic:
        torch.use_deterministic_algorithms(True)
    rng = np.random.default_rng(config.seed)
    model = init_model(config.model, np.random.default_rng([config.seed, 0]))
    optimizer = make_optimizer(model, config)
    baked = bake_pairs(hr_frames, config, config.bake) if config.bake else None
    journal = TrainJournal()
    start = time.perf_counter()
    for step in range(config.steps):
        if baked:
            batch = [baked[int(rng.integers(len(baked)))] for _ in range(config.batch_size)]
        else:
            batch = [sample_patch_pair(hr_frames, rng, config) for _ in range(config.batch_size)]
        record = train_step(model, optimizer, batch, config, step)
        if not config.deterministic:
            record.wall_time_s = time.perf_counter() - start
        journal.records.append(record)
        if progress_every and (step + 1) % progress_every == 0:
            recent = np.mean([r.loss for r in journal.records[-progress_every:]])
            log.info("step %d/%d  loss %.5f", step + 1, config.steps, recent)
        if checkpoint_dir is not None and config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
            save_checkpoint(model, Path(checkpoint_dir) / f"step_{step + 1:06d}.srfm")
    journal.final = {
        "steps": config.steps,
        "model_fingerprint": model.fingerprint(),
        "initial_loss": journal.records[0].loss if journal.records else None,
        "final_loss": journal.records[-1].loss if journal.records else None,
    }
    return model, journal
