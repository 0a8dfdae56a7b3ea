"""Seed-deterministic training loop.

Every optimizer step derives its own generator from (seed, step), so a run
resumed from a checkpoint at step n continues with exactly the randomness
the uninterrupted run would have used; combined with the bitwise parameter
and moment round-trip of the checkpoint format, the loss log continues
identically.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .backbone import build_model
from .checkpoint import load_checkpoint, restore_model, restore_optimizer, save_checkpoint
from .config import RunConfig
from .dataset import generate_arrays
from .diffusion import training_loss
from .optim import AdamW, warmup_lr

LOG_NAME = "loss_log.csv"
LOG_HEADER = "step,loss"


@dataclass
class TrainResult:
    final_checkpoint: Path
    log_path: Path
    losses: list[float]


def checkpoint_name(step: int) -> str:
    return f"checkpoint_{step:06d}.lmlp"


def run_training(config: RunConfig, resume: str | None = None) -> TrainResult:
    """Train per the config; write loss log and periodic checkpoints to out_dir."""
    config.validate()
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sched = config.noise_schedule()
    guidance = config.guidance_config()

    if resume is not None:
        snapshot = load_checkpoint(resume)
        model = restore_model(snapshot)
        optimizer = restore_optimizer(snapshot, model, lr=config.learning_rate,
                                      betas=(config.beta1, config.beta2),
                                      weight_decay=config.weight_decay)
        start_step = snapshot.step
    else:
        model = build_model(config.backbone_config(), config.seed, dtype=np.float32)
        optimizer = AdamW(list(model.named_parameters()), lr=config.learning_rate,
                          betas=(config.beta1, config.beta2),
                          weight_decay=config.weight_decay)
        start_step = 0

    images, captions = generate_arrays(config.dataset_config(), config.num_samples)
    x0_all = (2.0 * images - 1.0).astype(np.float32)

    log_path = out_dir / LOG_NAME
    new_log = not log_path.exists() or log_path.stat().st_size == 0
    losses: list[float] = []
    with open(log_path, "a") as log:
        if new_log:
            print(LOG_HEADER, file=log)
        if start_step == 0 and config.train_steps == 0:
            save_checkpoint(out_dir / checkpoint_name(0), config, model, 0, optimizer)
        for step in range(start_step, config.train_steps):
            rng = np.random.default_rng((config.seed, step))
            optimizer.zero_grad()
            step_loss = 0.0
            for _ in range(config.grad_accumulation):
                batch_idx = rng.integers(0, config.num_samples, size=config.batch_size)
                loss = training_loss(model, x0_all[batch_idx], captions[batch_idx],
                                     sched, guidance, rng)
                loss.backward()
                T.reset_tape()
                step_loss += loss.item()
            if config.grad_accumulation > 1:
                for p in optimizer.params:
                    if p.grad is not None:
                        p.grad /= config.grad_accumulation
            optimizer.step(warmup_lr(config.learning_rate, step, config.warmup_steps))
            step_loss /= config.grad_accumulation
            losses.append(step_loss)
            print(f"{step},{step_loss!r}", file=log)
            done = step + 1
            if done % config.checkpoint_every == 0 or done == config.train_steps:
                save_checkpoint(out_dir / checkpoint_name(done), config, model,
                                done, optimizer)
    final = out_dir / checkpoint_name(max(config.train_steps, 0))
    return TrainResult(final_checkpoint=final, log_path=log_path, losses=losses)


__all__ = ["LOG_HEADER", "LOG_NAME", "TrainResult", "checkpoint_name", "run_training"]
