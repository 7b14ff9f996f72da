"""Small dense feed-forward classifier with manual backpropagation.

Everything is float64 numpy. Models here are a few thousand parameters at
most, so the code favors clarity and exactness over throughput.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError, TrainingDivergenceError

LOG_EPS = 1e-12

ACTIVATIONS = ("tanh", "relu")


@dataclass
class MlpModel:
    """Fully connected net: linear layers with tanh or relu between them.

    weights[l] has shape (layer_dims[l], layer_dims[l+1]); biases[l] has
    shape (layer_dims[l+1],). The last layer is linear (logits).
    """

    layer_dims: list
    weights: list
    biases: list
    activation: str = "tanh"

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def num_classes(self) -> int:
        return self.layer_dims[-1]

    @property
    def num_parameters(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def copy(self) -> "MlpModel":
        return MlpModel(
            layer_dims=list(self.layer_dims),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            activation=self.activation,
        )


@dataclass
class Gradients:
    """Per-layer gradients, shaped exactly like the model parameters."""

    weights: list
    biases: list


def init_mlp(layer_dims, rng: np.random.Generator, activation: str = "tanh") -> MlpModel:
    """Build a model with per-layer uniform init in +-sqrt(6/(fan_in+fan_out))."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ParameterError(f"layer_dims must list at least input and output sizes, got {layer_dims}")
    if activation not in ACTIVATIONS:
        raise ParameterError(f"activation must be one of {ACTIVATIONS}, got {activation!r}")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(layer_dims=dims, weights=weights, biases=biases, activation=activation)


def _as_batch(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"expected a 2-D batch, got shape {x.shape}")
    return x


def _activate(model: MlpModel, z: np.ndarray) -> np.ndarray:
    if model.activation == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _forward_cached(model: MlpModel, x: np.ndarray):
    """Forward pass keeping pre-activations for backprop."""
    if x.shape[1] != model.input_dim:
        raise DimensionError(f"batch has {x.shape[1]} columns, model expects {model.input_dim}")
    acts = [x]
    pre = []
    h = x
    last = len(model.weights) - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        pre.append(z)
        h = z if l == last else _activate(model, z)
        acts.append(h)
    return acts, pre


def forward(model: MlpModel, batch) -> np.ndarray:
    """Logits for a batch, shape (batch, num_classes)."""
    acts, _ = _forward_cached(model, _as_batch(batch))
    return acts[-1]


def softmax(logits) -> np.ndarray:
    """Row-wise softmax with max subtraction for stability."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict_proba(model: MlpModel, batch) -> np.ndarray:
    return softmax(forward(model, batch))


def soft_ce_loss(targets, probs):
    """Cross entropy of soft targets against predicted probabilities.

    Returns (per_sample_losses, mean). Probabilities are clamped below at
    1e-12 before the log, so degenerate inputs stay finite.
    """
    t = np.asarray(targets, dtype=np.float64)
    p = np.asarray(probs, dtype=np.float64)
    if t.shape != p.shape:
        raise DimensionError(f"targets shape {t.shape} != probs shape {p.shape}")
    losses = -(t * np.log(np.maximum(p, LOG_EPS))).sum(axis=-1)
    return losses, float(losses.mean())


def backward(model: MlpModel, batch, targets):
    """Gradients of the mean soft cross entropy over the batch.

    Returns (Gradients, per_sample_losses). The logit gradient is
    (sum(t) * p - t) / batch_size, which reduces to (p - t) / batch_size
    for targets on the simplex but stays the true gradient for
    sub-stochastic targets as well.
    """
    x = _as_batch(batch)
    t = np.asarray(targets, dtype=np.float64)
    acts, pre = _forward_cached(model, x)
    p = softmax(acts[-1])
    if t.shape != p.shape:
        raise DimensionError(f"targets shape {t.shape} != logits shape {p.shape}")
    losses = -(t * np.log(np.maximum(p, LOG_EPS))).sum(axis=-1)
    n = x.shape[0]
    delta = (t.sum(axis=1, keepdims=True) * p - t) / n
    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.biases)
    for l in range(len(model.weights) - 1, -1, -1):
        grads_w[l] = acts[l].T @ delta
        grads_b[l] = delta.sum(axis=0)
        if l > 0:
            upstream = delta @ model.weights[l].T
            if model.activation == "tanh":
                delta = upstream * (1.0 - acts[l] ** 2)
            else:
                delta = upstream * (pre[l - 1] > 0)
    return Gradients(weights=grads_w, biases=grads_b), losses


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ParameterError(f"labels must lie in [0, {num_classes})")
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


@dataclass
class OptimizerState:
    """SGD with momentum, weight decay, and a step learning-rate schedule.

    lr(epoch) = base_lr / decay_factor ** (number of milestones <= epoch).
    """

    momentum: float
    weight_decay: float
    base_lr: float
    milestones: list
    decay_factor: float
    vel_weights: list
    vel_biases: list

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ParameterError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0.0:
            raise ParameterError(f"weight_decay must be nonnegative, got {self.weight_decay}")
        if self.base_lr <= 0.0 or self.decay_factor <= 0.0:
            raise ParameterError("base_lr and decay_factor must be positive")


def make_optimizer(model: MlpModel, base_lr: float = 0.02, momentum: float = 0.9,
                   weight_decay: float = 0.001, milestones=(), decay_factor: float = 10.0) -> OptimizerState:
    return OptimizerState(
        momentum=momentum,
        weight_decay=weight_decay,
        base_lr=base_lr,
        milestones=sorted(int(m) for m in milestones),
        decay_factor=decay_factor,
        vel_weights=[np.zeros_like(w) for w in model.weights],
        vel_biases=[np.zeros_like(b) for b in model.biases],
    )


def lr_at(state: OptimizerState, epoch: int) -> float:
    drops = sum(1 for m in state.milestones if epoch >= m)
    return state.base_lr / state.decay_factor ** drops


def sgd_step(model: MlpModel, grads: Gradients, state: OptimizerState, epoch: int) -> None:
    """One in-place update: buffer <- mom * buffer + (grad + wd * param),
    param <- param - lr(epoch) * buffer."""
    lr = lr_at(state, epoch)
    for arrs in (grads.weights, grads.biases):
        for g in arrs:
            if not np.all(np.isfinite(g)):
                raise TrainingDivergenceError(f"nonfinite gradient at epoch {epoch}")
    for w, g, v in zip(model.weights, grads.weights, state.vel_weights):
        v *= state.momentum
        v += g + state.weight_decay * w
        w -= lr * v
    for b, g, v in zip(model.biases, grads.biases, state.vel_biases):
        v *= state.momentum
        v += g + state.weight_decay * b
        b -= lr * v
