from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, replace

import numpy as np

from .autodiff import NumericalError, Tensor, backward
from .objectives import LossBreakdown, fvae_loss
from .rng import Rng


@dataclass
class TrainConfig:
    seed: int = 0
    batch_size: int = 256
    steps: int = 2000
    learning_rate: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    checkpoint_every: int = 0
    log_every: int = 1

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size: must be >= 1")
        if self.steps < 0:
            raise ValueError("steps: must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate: must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1/beta2: must lie in [0, 1)")
        if self.eps <= 0:
            raise ValueError("eps: must be positive")
        if self.log_every < 1:
            raise ValueError("log_every: must be >= 1")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every: must be >= 0")


class Adam:
    """Adam with bias correction; eps added outside the square root."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


@dataclass
class LogEntry:
    step: int
    losses: LossBreakdown


def train(model, data, cfg: TrainConfig,
          on_checkpoint: Callable[[int], None] | None = None) -> list[LogEntry]:
    """Minibatch Adam on the flow-posterior VAE loss.

    Batches are drawn with replacement. Entry ``k`` of the history holds the
    batch loss at step ``(k + 1) * log_every`` (1-based, before that step's
    update), so ``len(history) == steps // log_every``.
    """
    cfg.validate()
    points = np.asarray(getattr(data, "points", data), dtype=np.float64)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ValueError("train: dataset must be a non-empty (n, d) array")
    if points.shape[1] != model.data_dim:
        raise ValueError(f"train: data dim {points.shape[1]} != model data_dim {model.data_dim}")
    rng = Rng(cfg.seed)
    params = model.trainable()
    opt = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    history: list[LogEntry] = []
    n = points.shape[0]
    for step in range(1, cfg.steps + 1):
        idx = rng.integers(n, cfg.batch_size)
        u = rng.normal((cfg.batch_size, model.latent_dim))
        try:
            losses = fvae_loss(points[idx], u, model)
        except NumericalError as exc:
            raise NumericalError(f"step {step}: {exc}", term=exc.term, step=step) from exc
        opt.zero_grad()
        backward(losses.tensor)
        for p in params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NumericalError(f"step {step}: non-finite gradient", term="gradient", step=step)
        opt.step()
        if step % cfg.log_every == 0:
            history.append(LogEntry(step, replace(losses, tensor=None)))
        if on_checkpoint is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            on_checkpoint(step)
    return history
