"""Small dense regression network written directly in numpy.

Architecture: input -> 64 -> 64 -> 1, ReLU on the hidden layers, identity on
the output, inverted dropout after every hidden activation while training.
Training minimises MSE with Adam and early stopping on validation MSE.
Everything runs in float64.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import TextIO

import numpy as np

from .dataset import Normalizer, fit_normalizer
from .errors import ValidationError

MODEL_FORMAT = "pathloss-mlp"
MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int = 8
    hidden_layers: int = 2
    hidden_width: int = 64
    dropout_rate: float = 0.25

    def __post_init__(self):
        if self.input_dim < 1 or self.hidden_layers < 1 or self.hidden_width < 1:
            raise ValidationError("layer sizes must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValidationError("dropout_rate must lie in [0, 1)")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim] + [self.hidden_width] * self.hidden_layers + [1]


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8192
    learning_rate: float = 0.001
    patience_epochs: int = 50
    max_epochs: int = 1000
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.learning_rate <= 0 or self.patience_epochs < 1:
            raise ValidationError("batch size, learning rate and patience must be positive")
        if self.patience_epochs >= self.max_epochs:
            raise ValidationError("patience must be smaller than max_epochs")
        if not 0 < self.train_fraction < 1:
            raise ValidationError("train_fraction must lie in (0, 1)")


@dataclass
class MlpModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    config: MlpConfig
    normalizer: Normalizer | None = None

    def params(self) -> list[np.ndarray]:
        """Flat parameter list [W0, b0, W1, b1, ...]."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def with_params(self, params: list[np.ndarray]) -> "MlpModel":
        return MlpModel(list(params[0::2]), list(params[1::2]), self.config, self.normalizer)

    @property
    def param_count(self) -> int:
        return sum(p.size for p in self.params())

    def predict(self, raw_features) -> np.ndarray:
        return forward(self, raw_features)


@dataclass
class TrainHistory:
    train_mse: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def epochs_run(self) -> int:
        return len(self.val_mse)

    @property
    def best_val_mse(self) -> float:
        return self.val_mse[self.best_epoch - 1]

    def write_csv(self, stream: TextIO) -> None:
        stream.write("epoch,train_mse,val_mse\n")
        for i, (t, v) in enumerate(zip(self.train_mse, self.val_mse), start=1):
            stream.write(f"{i},{t!r},{v!r}\n")


def param_count(input_dim: int, hidden_layers: int = 2, hidden_width: int = 64) -> int:
    sizes = [input_dim] + [hidden_width] * hidden_layers + [1]
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def init_model(config: MlpConfig, seed: int) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    sizes = config.layer_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(weights, biases, config)


# --------------------------------------------------------------------------
# forward / backward


def sample_masks(model: MlpModel, n_rows: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Inverted-dropout masks for each hidden layer: 0 or 1/(1 - rate)."""
    rate = model.config.dropout_rate
    masks = []
    for w in model.weights[:-1]:
        if rate == 0:
            masks.append(np.ones((n_rows, w.shape[1])))
        else:
            keep = rng.random((n_rows, w.shape[1])) >= rate
            masks.append(keep / (1.0 - rate))
    return masks


def _check_inputs(model: MlpModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.config.input_dim:
        raise ValidationError(
            f"expected inputs of shape (n, {model.config.input_dim}), got {x.shape}"
        )
    return x


def _forward_cached(model: MlpModel, x: np.ndarray, masks: list[np.ndarray] | None):
    """Forward pass on already-normalized inputs, keeping what backprop needs."""
    acts = [x]
    pre = []
    h = x
    n_hidden = len(model.weights) - 1
    for i in range(n_hidden):
        z = h @ model.weights[i] + model.biases[i]
        pre.append(z)
        h = np.maximum(z, 0.0)
        if masks is not None:
            h = h * masks[i]
        acts.append(h)
    out = h @ model.weights[-1] + model.biases[-1]
    return out[:, 0], (acts, pre)


def forward(model: MlpModel, inputs, train: bool = False, rng=None) -> np.ndarray:
    """Predictions, one per row.

    Inference (``train=False``) takes raw features and applies the model's
    normalizer. Training mode takes normalized inputs and draws dropout
    masks from ``rng`` (a Generator or a seed).
    """
    x = _check_inputs(model, inputs)
    if not train:
        if model.normalizer is not None:
            x = model.normalizer.apply(x)
        return _forward_cached(model, x, None)[0]
    rng = np.random.default_rng(rng)
    return _forward_cached(model, x, sample_masks(model, x.shape[0], rng))[0]


def loss_and_grads(model: MlpModel, x, y, masks=None) -> tuple[float, list[np.ndarray]]:
    """MSE on normalized inputs and its gradient w.r.t. [W0, b0, W1, b1, ...]."""
    x = _check_inputs(model, x)
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] != x.shape[0]:
        raise ValidationError("inputs and targets differ in length")
    if masks is not None and len(masks) != len(model.weights) - 1:
        raise ValidationError("need one dropout mask per hidden layer")
    pred, (acts, pre) = _forward_cached(model, x, masks)
    resid = pred - y
    n = x.shape[0]
    loss = float(resid @ resid) / n

    grads: list[np.ndarray] = [None] * (2 * len(model.weights))
    delta = (2.0 / n) * resid[:, None]
    for i in range(len(model.weights) - 1, -1, -1):
        grads[2 * i] = acts[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i == 0:
            break
        delta = delta @ model.weights[i].T
        if masks is not None:
            delta = delta * masks[i - 1]
        delta = delta * (pre[i - 1] > 0)
    return loss, grads


def backward(model: MlpModel, inputs, targets, masks=None) -> list[np.ndarray]:
    """Gradients of the MSE for the pass defined by ``masks`` (None = no dropout)."""
    return loss_and_grads(model, inputs, targets, masks)[1]


# --------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: list[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, lr: float = 0.001):
    """One bias-corrected Adam update. Returns (new_params, new_state); inputs are not modified."""
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        step = lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
        new_p.append(p - step)
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t, b1, b2, state.eps)


# --------------------------------------------------------------------------
# training


def train(
    x_train,
    y_train,
    x_val,
    y_val,
    mlp_config: MlpConfig | None = None,
    train_config: TrainConfig | None = None,
    init_seed: int | None = None,
) -> tuple[MlpModel, TrainHistory]:
    """Fit on raw training features; early-stop on validation MSE.

    The normalizer is fitted on ``x_train`` only, and the output bias starts
    at the mean training target; Adam's fixed step size would otherwise need
    ~10^5 steps to walk a zero bias up to typical path loss values. The returned model carries
    the parameters of the best validation epoch. ``train_config.seed`` drives
    shuffling and dropout; ``init_seed`` (default: the same seed) drives the
    weight initialisation.
    """
    cfg = train_config or TrainConfig()
    x_train = np.asarray(x_train, dtype=np.float64)
    x_val = np.asarray(x_val, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.float64).ravel()
    y_val = np.asarray(y_val, dtype=np.float64).ravel()
    if x_train.shape[0] == 0 or x_val.shape[0] == 0:
        raise ValidationError("training and validation sets must be non-empty")
    mlp_config = mlp_config or MlpConfig(input_dim=x_train.shape[1])

    normalizer = fit_normalizer(x_train)
    xt = normalizer.apply(x_train)
    xv = normalizer.apply(x_val)

    model = init_model(mlp_config, cfg.seed if init_seed is None else init_seed)
    model.normalizer = normalizer
    model.biases[-1][:] = y_train.mean()
    params = model.params()
    state = AdamState.zeros_like(params)
    rng = np.random.default_rng(cfg.seed)
    history = TrainHistory()
    best_params = [p.copy() for p in params]
    best_val = np.inf
    wait = 0
    n = xt.shape[0]

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            xb = xt[idx]
            masks = sample_masks(model, xb.shape[0], rng)
            loss, grads = loss_and_grads(model, xb, y_train[idx], masks)
            total += loss * xb.shape[0]
            params, state = adam_step(params, grads, state, cfg.learning_rate)
            model = model.with_params(params)
        history.train_mse.append(total / n)

        resid = _forward_cached(model, xv, None)[0] - y_val
        val = float(resid @ resid) / resid.shape[0]
        history.val_mse.append(val)
        if val < best_val:
            best_val = val
            best_params = [p.copy() for p in params]
            history.best_epoch = epoch
            wait = 0
        else:
            wait += 1
            if wait >= cfg.patience_epochs:
                break

    return model.with_params(best_params), history


# --------------------------------------------------------------------------
# persistence


def model_to_dict(model: MlpModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_FORMAT_VERSION,
        "config": asdict(model.config),
        "normalizer": None if model.normalizer is None else model.normalizer.to_dict(),
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "param_count": model.param_count,
    }


def model_from_dict(d: dict) -> MlpModel:
    if d.get("format") != MODEL_FORMAT:
        raise ValidationError("not a pathloss model file")
    if d.get("version") != MODEL_FORMAT_VERSION:
        raise ValidationError(f"unsupported model file version {d.get('version')!r}")
    config = MlpConfig(**d["config"])
    weights = [np.array(w, dtype=np.float64) for w in d["weights"]]
    biases = [np.array(b, dtype=np.float64) for b in d["biases"]]
    sizes = config.layer_sizes
    for w, b, a, c in zip(weights, biases, sizes[:-1], sizes[1:]):
        if w.shape != (a, c) or b.shape != (c,):
            raise ValidationError("layer shapes do not match the stored config")
    norm = d.get("normalizer")
    return MlpModel(weights, biases, config, None if norm is None else Normalizer.from_dict(norm))


def save_model(model: MlpModel, stream: TextIO) -> None:
    json.dump(model_to_dict(model), stream)
    stream.write("\n")


def load_model(stream: TextIO) -> MlpModel:
    return model_from_dict(json.load(stream))
