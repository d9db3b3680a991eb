"""Mini-batch training loop: Adam, linear warmup, polynomial decay to zero.

The learning rate is exactly 0 at step 0, reaches the configured peak at the
end of warmup and returns to 0 on the final step. Gradients are clipped by
global norm before the update. Runs are bitwise reproducible for a fixed seed
and kernel backend.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import TrainingDivergedError
from .examples import QAExample
from .model import NluModel, pad_batch, save_checkpoint
from .tokenization import SubwordTokenizer


@dataclass
class TrainConfig:
    epochs: int = 3
    batch_size: int = 32
    max_lr: float = 1e-4
    warmup_ratio: float = 0.1
    decay_power: float = 1.0
    clip_norm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0


def warmup_steps(total_steps: int, warmup_ratio: float) -> int:
    return max(1, int(total_steps * warmup_ratio))


def lr_at(step: int, total_steps: int, config: TrainConfig) -> float:
    """Schedule value for a 0-based step index.

    lr(0) = 0, lr(warmup_steps) = max_lr, lr(total_steps - 1) = 0.
    """
    w = warmup_steps(total_steps, config.warmup_ratio)
    if step < w:
        return config.max_lr * step / w
    decay_span = max(1, total_steps - 1 - w)
    frac = min(1.0, (step - w) / decay_span)
    return config.max_lr * (1.0 - frac) ** config.decay_power


def global_grad_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.square(g, dtype=np.float64).sum())
    return math.sqrt(total)


def clip_grads(grads: dict[str, np.ndarray], clip_norm: float) -> float:
    """In-place global-norm clipping; returns the pre-clip norm."""
    norm = global_grad_norm(grads)
    if clip_norm > 0 and norm > clip_norm:
        scale = clip_norm / norm
        for g in grads.values():
            g *= scale
    return norm


@dataclass
class TrainResult:
    steps: int = 0
    history: list = field(default_factory=list)   # one record per step
    dev_losses: list = field(default_factory=list)  # one per epoch
    best_epoch: int = -1
    best_dev_loss: float = math.nan


def evaluate_loss(model: NluModel, examples: list[QAExample], pad_id: int, batch_size: int) -> float:
    if not examples:
        return math.nan
    total = 0.0
    for lo in range(0, len(examples), batch_size):
        chunk = examples[lo:lo + batch_size]
        batch = pad_batch(chunk, pad_id)
        _, _, per_example = model.loss_and_grads(batch, train=False)
        total += float(per_example.sum())
    return total / len(examples)


def train(
    model: NluModel,
    tokenizer: SubwordTokenizer,
    train_examples: list[QAExample],
    dev_examples: list[QAExample],
    config: TrainConfig,
    checkpoint_path: str | Path | None = None,
    log_path: str | Path | None = None,
) -> TrainResult:
    """Train in place; the best-dev-loss snapshot goes to `checkpoint_path`.

    The model object ends at the final step's parameters. With no dev set
    every epoch counts as an improvement, so the final state is checkpointed.
    """
    if not train_examples:
        raise ValueError("no training examples")
    rng = np.random.default_rng(config.seed)
    n = len(train_examples)
    steps_per_epoch = math.ceil(n / config.batch_size)
    total_steps = config.epochs * steps_per_epoch

    m_state = {k: np.zeros_like(v) for k, v in model.params.items()}
    v_state = {k: np.zeros_like(v) for k, v in model.params.items()}
    result = TrainResult()
    log_f = open(log_path, "w") if log_path else None
    step = 0
    try:
        for epoch in range(config.epochs):
            order = rng.permutation(n)
            for lo in range(0, n, config.batch_size):
                chunk = [train_examples[i] for i in order[lo:lo + config.batch_size]]
                batch = pad_batch(chunk, tokenizer.pad_id)
                lr = lr_at(step, total_steps, config)
                loss, grads, _ = model.loss_and_grads(batch, train=True, rng=rng)
                if not math.isfinite(loss):
                    keys = [
                        f"{ex.dialogue_id}/{ex.turn_index}/{ex.service}/{ex.task.name}"
                        for ex in chunk[:4]
                    ]
                    raise TrainingDivergedError(step=step, lr=lr, batch_keys=keys)
                norm = clip_grads(grads, config.clip_norm)
                t = step + 1
                for name in model.params:
                    kernels.adam_step(
                        model.params[name], grads[name],
                        m_state[name], v_state[name],
                        lr, config.beta1, config.beta2, config.eps, t,
                    )
                record = {
                    "step": step, "epoch": epoch, "lr": lr,
                    "train_loss": loss, "grad_norm": norm,
                }
                result.history.append(record)
                if log_f:
                    log_f.write(json.dumps(record) + "\n")
                step += 1

            dev_loss = evaluate_loss(model, dev_examples, tokenizer.pad_id, config.batch_size)
            result.dev_losses.append(dev_loss)
            if log_f:
                log_f.write(json.dumps({"epoch": epoch, "dev_loss": dev_loss}) + "\n")
            improved = (
                math.isnan(dev_loss)
                or math.isnan(result.best_dev_loss)
                or dev_loss < result.best_dev_loss
            )
            if improved:
                result.best_epoch = epoch
                result.best_dev_loss = dev_loss
                if checkpoint_path is not None:
                    save_checkpoint(
                        checkpoint_path, model, tokenizer.vocab,
                        extra={
                            "epoch": epoch,
                            "dev_loss": None if math.isnan(dev_loss) else dev_loss,
                            "train_config": asdict(config),
                        },
                    )
    finally:
        if log_f:
            log_f.close()
    result.steps = step
    return result
