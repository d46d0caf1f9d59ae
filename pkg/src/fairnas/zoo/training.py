"""Mini-batch training with AdamW (decoupled weight decay)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import TRAIN, Dataset
from ..space import Configuration
from .layers import Context
from .models import ModelState, cross_entropy

BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8
MAX_EPOCHS = 10


class DivergedError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, step: int):
        super().__init__(f"non-finite loss at epoch {epoch}, step {step}")
        self.epoch, self.step = epoch, step


@dataclass(frozen=True)
class TrainSettings:
    learning_rate: float
    weight_decay: float
    dropout: float
    batch_size: int
    max_epochs: int = MAX_EPOCHS
    seed: int = 0
    sample_weights: np.ndarray | None = None

    def __post_init__(self):
        if not 1 <= self.max_epochs <= MAX_EPOCHS:
            raise ValueError(f"max_epochs must lie in [1, {MAX_EPOCHS}]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.sample_weights is not None and np.any(self.sample_weights <= 0):
            raise ValueError("sample weights must be positive")

    @classmethod
    def from_config(cls, config: Configuration, seed: int = 0, max_epochs: int = MAX_EPOCHS, sample_weights=None):
        return cls(
            learning_rate=float(config["learning_rate"]),
            weight_decay=float(config["weight_decay"]),
            dropout=float(config["dropout"]),
            batch_size=int(config["batch_size"]),
            max_epochs=max_epochs,
            seed=seed,
            sample_weights=sample_weights,
        )


def adamw_step(model: ModelState, grads: dict[str, np.ndarray], lr: float, weight_decay: float) -> None:
    """One in-place AdamW update: ``p *= 1 - lr * wd`` then the bias-corrected Adam step."""
    model.step += 1
    t = model.step
    c1 = 1.0 - BETA1**t
    c2 = 1.0 - BETA2**t
    decay = 1.0 - lr * weight_decay
    step = lr / c1
    for name, p in model.params.items():
        g = grads[name]
        m = model.moments.get("m:" + name)
        if m is None:
            m = model.moments["m:" + name] = np.zeros_like(p)
            model.moments["v:" + name] = np.zeros_like(p)
        v = model.moments["v:" + name]
        tmp = np.multiply(g, 1.0 - BETA1)
        m *= BETA1
        m += tmp
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - BETA2
        v *= BETA2
        v += tmp
        p *= decay
        # tmp <- lr * m_hat / (sqrt(v_hat) + eps), all in place
        np.divide(v, c2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += ADAM_EPS
        np.divide(m, tmp, out=tmp)
        tmp *= step
        p -= tmp


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    bounds = list(range(0, n, batch_size)) + [n]
    # a trailing batch of one row is folded into its predecessor (batch norm needs >= 2)
    if len(bounds) > 2 and bounds[-1] - bounds[-2] < 2:
        bounds.pop(-2)
    return [order[a:b] for a, b in zip(bounds[:-1], bounds[1:])]


def train_epochs(model: ModelState, data: Dataset, settings: TrainSettings, epochs: int) -> ModelState:
    """Train ``model`` in place for ``epochs`` more epochs on the train split.

    Raises:
        DivergedError: the loss of some mini-batch is not finite.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if model.epoch_counter + epochs > settings.max_epochs:
        raise ValueError(
            f"training to epoch {model.epoch_counter + epochs} exceeds max_epochs={settings.max_epochs}"
        )
    x, y, _, w = data.part(TRAIN)
    x = x.astype(model.dtype, copy=False)
    if settings.sample_weights is not None:
        if len(settings.sample_weights) != len(y):
            raise ValueError("sample_weights must have one entry per train row")
        w = np.asarray(settings.sample_weights, dtype=np.float64)
    if w is not None:
        w = w.astype(model.dtype, copy=False)
    if x.shape[1] != model.input_width:
        raise ValueError("dataset width does not match the model")
    net = model.network
    for _ in range(epochs):
        epoch = model.epoch_counter
        rng = np.random.default_rng((settings.seed, epoch))
        ctx = Context(train=True, rng=rng, buffers=model.buffers, update_buffers=True)
        for i, idx in enumerate(_batches(len(y), settings.batch_size, rng)):
            logits = net.forward(model.params, x[idx], ctx)
            loss, dlogits = cross_entropy(logits, y[idx], None if w is None else w[idx])
            if not np.isfinite(loss):
                raise DivergedError(epoch, i)
            grads: dict[str, np.ndarray] = {}
            net.backward(model.params, dlogits, grads)
            adamw_step(model, grads, settings.learning_rate, settings.weight_decay)
        model.epoch_counter += 1
    return model


def dataset_loss(model: ModelState, data: Dataset, split: str = TRAIN, chunk: int = 4096) -> float:
    """Evaluation-mode mean cross-entropy over one split."""
    x, y, _, _ = data.part(split)
    x = x.astype(model.dtype, copy=False)
    total = 0.0
    ctx = Context(train=False, buffers=model.buffers)
    for s in range(0, len(y), chunk):
        logits = model.network.forward(model.params, x[s : s + chunk], ctx)
        loss, _ = cross_entropy(logits, y[s : s + chunk])
        total += loss * len(logits)
    return total / len(y)
