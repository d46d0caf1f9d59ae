"""The three model families and their state.

Conventions (none is fixed by the search-space table, so they are pinned
here, following common tabular-deep-learning practice):

* MLP: ``[Linear -> ReLU -> Dropout] x depth -> Linear(2)``.
* ResNet: ``Linear(in, d)``, then blocks
  ``x + Linear(h, d)(Dropout(ReLU(Norm(Linear(d, h)(x)))))``, then
  ``Norm -> ReLU -> Linear(d, 2)``.
* FT-Transformer: feature tokenizer with a trailing [CLS] token, pre-norm
  blocks ``x + Dropout(Attention(LN(x)))`` and ``x + FFN(LN(x))``, then
  ``LN -> ReLU -> Linear(d, 2)`` on the [CLS] token.

All weights start from ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..space import Configuration, SpaceError, space
from .layers import (
    BatchNorm,
    Context,
    Dropout,
    FeatureTokenizer,
    LastToken,
    Layer,
    LayerNorm,
    Linear,
    ReLU,
    Residual,
    SelfAttention,
    Sequential,
)

N_CLASSES = 2
MIN_MLP_WIDTH = 4
CHECKPOINT_VERSION = 1


def mlp_widths(config: Configuration) -> list[int]:
    depth, base = config["depth"], config["base_width"]
    first = max(MIN_MLP_WIDTH, int(round(base * config["first_layer_multiplier"])))
    if depth == 1:
        return [first]
    last = max(MIN_MLP_WIDTH, int(round(base * config["last_layer_multiplier"])))
    return [first] + [base] * (depth - 2) + [last]


def resnet_hidden(config: Configuration) -> int:
    return max(1, int(round(config["main_width"] * config["hidden_expansion"])))


def ft_dims(config: Configuration) -> tuple[int, int]:
    """Token dim (rounded up to a multiple of the head count) and FFN hidden dim."""
    heads = config["n_heads"]
    d = -(-config["token_dim"] // heads) * heads
    return d, max(1, int(round(d * config["ffn_expansion"])))


def build_network(config: Configuration, input_width: int, blocks: list[tuple[int, int]]) -> Layer:
    p = config["dropout"]
    if config.family == "MLP":
        layers: list[Layer] = []
        fan_in = input_width
        for i, w in enumerate(mlp_widths(config)):
            layers += [Linear(f"layers.{i}", fan_in, w), ReLU(), Dropout(p)]
            fan_in = w
        layers.append(Linear("head", fan_in, N_CLASSES))
        return Sequential(layers)

    if config.family == "ResNet":
        d, h = config["main_width"], resnet_hidden(config)
        norm = BatchNorm if config["normalization"] == "batchnorm" else LayerNorm
        layers = [Linear("stem", input_width, d)]
        for i in range(config["n_blocks"]):
            layers.append(
                Residual(
                    Sequential(
                        [
                            Linear(f"blocks.{i}.linear1", d, h),
                            norm(f"blocks.{i}.norm", h),
                            ReLU(),
                            Dropout(p),
                            Linear(f"blocks.{i}.linear2", h, d),
                        ]
                    )
                )
            )
        layers += [norm("head.norm", d), ReLU(), Linear("head.linear", d, N_CLASSES)]
        return Sequential(layers)

    if config.family == "FTTransformer":
        d, h = ft_dims(config)
        layers = [FeatureTokenizer("tokenizer", blocks, d)]
        for i in range(config["n_blocks"]):
            layers.append(
                Residual(
                    Sequential(
                        [
                            LayerNorm(f"blocks.{i}.attention_norm", d),
                            SelfAttention(f"blocks.{i}.attention", d, config["n_heads"]),
                            Dropout(p),
                        ]
                    )
                )
            )
            ffn: list[Layer] = [LayerNorm(f"blocks.{i}.ffn_norm", d)]
            fan_in = d
            for j in range(config["ffn_hidden_layers"]):
                ffn += [Linear(f"blocks.{i}.ffn.{j}", fan_in, h), ReLU(), Dropout(p)]
                fan_in = h
            ffn.append(Linear(f"blocks.{i}.ffn.out", fan_in, d))
            layers.append(Residual(Sequential(ffn)))
        layers += [LastToken(), LayerNorm("head.norm", d), ReLU(), Linear("head.linear", d, N_CLASSES)]
        return Sequential(layers)

    raise SpaceError(f"unknown family {config.family!r}")


def parameter_count(config: Configuration, input_width: int, n_features: int | None = None) -> int:
    """Closed-form number of trainable scalars (normalization buffers excluded)."""
    n_features = input_width if n_features is None else n_features
    if config.family == "MLP":
        widths = [input_width] + mlp_widths(config) + [N_CLASSES]
        return sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))
    if config.family == "ResNet":
        d, h = config["main_width"], resnet_hidden(config)
        block = d * h + h + 2 * h + h * d + d
        return input_width * d + d + config["n_blocks"] * block + 2 * d + d * N_CLASSES + N_CLASSES
    if config.family == "FTTransformer":
        d, h = ft_dims(config)
        layers = config["ffn_hidden_layers"]
        tokenizer = input_width * d + n_features * d + d
        attention = 2 * d + 4 * (d * d + d)
        ffn = 2 * d + (d * h + h) + (layers - 1) * (h * h + h) + (h * d + d)
        head = 2 * d + d * N_CLASSES + N_CLASSES
        return tokenizer + config["n_blocks"] * (attention + ffn) + head
    raise SpaceError(f"unknown family {config.family!r}")


@dataclass
class ModelState:
    """Everything needed to resume training bit-exactly.

    Shuffling and dropout randomness for epoch ``e`` is drawn from
    ``default_rng((train_seed, e))``, so the epoch counter doubles as the
    generator state.
    """

    config: Configuration
    input_width: int
    blocks: tuple[tuple[int, int], ...]
    seed: int
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    moments: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    epoch_counter: int = 0
    _network: list = field(default_factory=list, repr=False, compare=False)

    @property
    def family(self) -> str:
        return self.config.family

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.params.values())).dtype

    @property
    def network(self) -> Layer:
        if not self._network:
            self._network.append(build_network(self.config, self.input_width, list(self.blocks)))
        return self._network[0]

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def save(self, path: str | Path) -> None:
        arrays = {f"param/{k}": v for k, v in self.params.items()}
        arrays.update({f"buffer/{k}": v for k, v in self.buffers.items()})
        arrays.update({f"moment/{k}": v for k, v in self.moments.items()})
        meta = {
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "input_width": self.input_width,
            "blocks": [list(b) for b in self.blocks],
            "seed": self.seed,
            "step": self.step,
            "epoch_counter": self.epoch_counter,
        }
        buf = io.BytesIO()
        np.savez(buf, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)
        Path(path).write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path: str | Path) -> "ModelState":
        with np.load(Path(path), allow_pickle=False) as data:
            meta = json.loads(data["__meta__"].tobytes().decode())
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta.get('version')!r}")
            groups: dict[str, dict] = {"param": {}, "buffer": {}, "moment": {}}
            for key in data.files:
                if key == "__meta__":
                    continue
                kind, name = key.split("/", 1)
                groups[kind][name] = data[key].copy()
        return cls(
            config=Configuration.from_dict(meta["config"]),
            input_width=meta["input_width"],
            blocks=tuple(tuple(b) for b in meta["blocks"]),
            seed=meta["seed"],
            params=groups["param"],
            buffers=groups["buffer"],
            moments=groups["moment"],
            step=meta["step"],
            epoch_counter=meta["epoch_counter"],
        )


def build(
    config: Configuration,
    input_width: int,
    seed: int,
    blocks: list[tuple[int, int]] | None = None,
    dtype=np.float64,
) -> ModelState:
    """Initialize an untrained model.

    ``blocks`` groups encoded columns into features for the FT-Transformer
    tokenizer (``Dataset.blocks``); by default every column is a feature.
    Initial values are always drawn in float64 and then cast, so a float32
    model is the rounded float64 one.
    """
    if input_width < 1:
        raise ValueError("input_width must be >= 1")
    # domains may be overridden per run, so only the hyperparameter names are checked here
    if [k for k, _ in config.values] != space(config.family).names:
        raise ValueError(f"configuration does not describe a {config.family} model")
    blocks = [(i, i + 1) for i in range(input_width)] if blocks is None else [tuple(b) for b in blocks]
    if blocks[0][0] != 0 or blocks[-1][1] != input_width or any(a[1] != b[0] for a, b in zip(blocks, blocks[1:])):
        raise ValueError("feature blocks must tile the input columns")
    state = ModelState(config, input_width, tuple(blocks), seed, params={}, buffers={})
    rng = np.random.default_rng(seed)
    for layer in state.network.walk():
        layer.init(rng, state.params, state.buffers)
    dtype = np.dtype(dtype)
    if dtype not in (np.float64, np.float32):
        raise ValueError(f"unsupported dtype {dtype}")
    if dtype != np.float64:
        state.params = {k: v.astype(dtype) for k, v in state.params.items()}
        state.buffers = {k: v.astype(dtype) for k, v in state.buffers.items()}
    return state


def _check_batch(model: ModelState, batch: np.ndarray) -> np.ndarray:
    x = np.asarray(batch, dtype=model.dtype)
    if x.ndim != 2 or x.shape[1] != model.input_width:
        raise ValueError(f"batch must have shape (n, {model.input_width}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("batch contains non-finite values")
    return x


def forward(
    model: ModelState,
    batch: np.ndarray,
    train: bool = False,
    rng: np.random.Generator | None = None,
    update_buffers: bool = False,
) -> np.ndarray:
    """Logits of shape ``(n, 2)``. Evaluation mode (the default) is deterministic."""
    x = _check_batch(model, batch)
    if train and rng is None:
        rng = np.random.default_rng(0)
    ctx = Context(train=train, rng=rng, buffers=model.buffers, update_buffers=update_buffers)
    return model.network.forward(model.params, x, ctx)


def predict(model: ModelState, batch: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Hard 0/1 predictions in evaluation mode, computed in chunks."""
    x = _check_batch(model, batch)
    out = np.empty(len(x), dtype=np.int8)
    for start in range(0, len(x), chunk):
        logits = forward(model, x[start : start + chunk])
        out[start : start + chunk] = logits[:, 1] > logits[:, 0]
    return out


def cross_entropy(logits: np.ndarray, labels: np.ndarray, weights: np.ndarray | None = None):
    """Mean (optionally weighted) cross-entropy and its gradient w.r.t. the logits."""
    labels = np.asarray(labels, dtype=np.int64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    n = len(labels)
    rows = np.arange(n)
    per_row = -log_probs[rows, labels]
    dlogits = np.exp(log_probs)
    dlogits[rows, labels] -= 1.0
    if weights is not None:
        per_row = per_row * weights
        dlogits *= weights[:, None]
    return per_row.sum() / n, dlogits / n


def gradients(
    model: ModelState,
    batch: np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray | None = None,
    train: bool = True,
    seed: int = 0,
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and exact gradients of the mean cross-entropy for every parameter.

    The forward pass runs in training mode (batch statistics, dropout drawn
    from ``default_rng(seed)``) without touching running statistics, so
    repeated calls are pure.
    """
    x = _check_batch(model, batch)
    ctx = Context(train=train, rng=np.random.default_rng(seed), buffers=model.buffers)
    logits = model.network.forward(model.params, x, ctx)
    loss, dlogits = cross_entropy(logits, labels, weights)
    grads: dict[str, np.ndarray] = {}
    model.network.backward(model.params, dlogits, grads)
    for k, v in model.params.items():
        grads.setdefault(k, np.zeros_like(v))
    return float(loss), grads
