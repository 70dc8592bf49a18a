"""Shared optimization loop for pretraining and SFT.

AdamW with linear warmup into cosine decay; fully seeded.  Checkpoints are
written at a configurable interval plus once at the end.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import torch

from .data import Batch, LineDataset, batch_loss
from .model import ModelConfig, PathModel, save_checkpoint
from .vocab import Vocab

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 64
    lr: float = 3e-4
    weight_decay: float = 0.01
    warmup_steps: int = 50
    grad_clip: float = 1.0
    checkpoint_every: int = 0  # extra checkpoints during the run; 0 = final only
    log_every: int = 50


def seed_everything(seed: int) -> None:
    torch.manual_seed(seed)


def make_optimizer(model: PathModel, config: TrainConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(
        model.parameters(), lr=config.lr, weight_decay=config.weight_decay, betas=(0.9, 0.95)
    )


def lr_at(step: int, total: int, config: TrainConfig) -> float:
    if step < config.warmup_steps:
        return config.lr * (step + 1) / config.warmup_steps
    progress = (step - config.warmup_steps) / max(1, total - config.warmup_steps)
    return config.lr * 0.5 * (1 + math.cos(math.pi * min(1.0, progress)))


def run_training(
    model: PathModel,
    dataset: LineDataset,
    steps: int,
    seed: int,
    config: TrainConfig,
    checkpoint_dir: str | Path | None = None,
    tag: str = "model",
    stop_below: float | None = None,
) -> list[float]:
    """Train for ``steps`` optimizer steps, cycling the dataset as needed.

    Returns the per-step loss history; stops early once the loss drops
    under ``stop_below``.
    """
    seed_everything(seed)
    optimizer = make_optimizer(model, config)
    losses: list[float] = []
    epoch = 0
    stream = dataset.batches(config.batch_size, seed)
    started = time.monotonic()
    model.train()
    for step in range(steps):
        batch = next(stream, None)
        if batch is None:
            epoch += 1
            stream = dataset.batches(config.batch_size, seed + epoch)
            batch = next(stream)
        for group in optimizer.param_groups:
            group["lr"] = lr_at(step, steps, config)
        loss = batch_loss(model, batch)
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
        optimizer.step()
        losses.append(loss.detach().item())
        if stop_below is not None and losses[-1] < stop_below:
            break
        if config.log_every and (step + 1) % config.log_every == 0:
            rate = (step + 1) / (time.monotonic() - started)
            log.info("%s step %d/%d loss %.4f (%.1f steps/s)", tag, step + 1, steps, losses[-1], rate)
        if checkpoint_dir and config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
            save_checkpoint(model, Path(checkpoint_dir) / f"{tag}-step{step + 1:06d}.pt",
                            {"step": step + 1, "loss": losses[-1]})
    if checkpoint_dir:
        save_checkpoint(model, Path(checkpoint_dir) / f"{tag}-final.pt",
                        {"step": steps, "loss": losses[-1] if losses else None})
    return losses


def new_model(vocab: Vocab, hidden: int = 512, max_seq_len: int = 256) -> PathModel:
    return PathModel(
        ModelConfig(vocab_size=vocab.size, vocab_digest=vocab.digest, hidden=hidden,
                    max_seq_len=max_seq_len)
    )


def pretrain_model(
    corpus_path: str | Path,
    vocab: Vocab,
    steps: int,
    seed: int,
    hidden: int = 512,
    config: TrainConfig | None = None,
    checkpoint_dir: str | Path | None = None,
) -> tuple[PathModel, list[float]]:
    """Next-token training over full random-walk sequences."""
    config = config or TrainConfig()
    dataset = LineDataset(corpus_path, vocab, sft=False)
    max_len = 2 + max(len(r) for r in dataset.rows)
    model = new_model(vocab, hidden=hidden, max_seq_len=max_len)
    losses = run_training(model, dataset, steps, seed, config, checkpoint_dir, tag="pretrain")
    return model, losses


def sft_train(
    model: PathModel,
    dataset_path: str | Path,
    vocab: Vocab,
    epochs: float,
    seed: int,
    config: TrainConfig | None = None,
    checkpoint_dir: str | Path | None = None,
) -> tuple[PathModel, list[float]]:
    """Fine-tune on record lines; prompt positions are excluded from the loss."""
    if model.config.vocab_digest != vocab.digest:
        raise ValueError("model vocabulary does not match the registry token table")
    config = config or TrainConfig()
    dataset = LineDataset(dataset_path, vocab, sft=True)
    steps = max(1, round(epochs * len(dataset) / config.batch_size))
    losses = run_training(model, dataset, steps, seed, config, checkpoint_dir, tag="sft")
    return model, losses
