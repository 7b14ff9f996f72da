"""Training loops: plain cross entropy, bootstrap, EMA-corrected targets,
and the mixup retraining stage that consumes corrected targets.

The loop is epoch-indexed. Once label correction activates, each epoch
first snapshots the model's predictions over the whole training set (in
evaluation mode, before any of the epoch's gradient steps), folds that
snapshot into the per-sample targets, and only then runs the epoch's
batches against the updated targets.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .data import TrainView
from .errors import DimensionError, ParameterError, TrainingDivergenceError
from .mlp import MlpModel, OptimizerState, backward, lr_at, one_hot, predict_proba, sgd_step
from .rng import stream
from .targets import (
    MODE_ENSEMBLE_ONLY,
    MODE_SELC,
    EnsembleState,
    PredictionSnapshot,
    bootstrap_target,
    harden_targets,
    update_targets,
)

METHOD_CE = "ce"
METHOD_BOOTSTRAP = "bootstrap"
METHOD_SELC = "selc"
METHOD_OPTION1 = "option1"
METHODS = (METHOD_CE, METHOD_BOOTSTRAP, METHOD_SELC, METHOD_OPTION1)

# Methods whose targets evolve during the run.
_CORRECTING = (METHOD_SELC, METHOD_OPTION1)


@dataclass
class SelcRunConfig:
    """Schedule and method hyperparameters for one training run.

    ``turning_point`` is optional; when set, the activation epoch must fall
    before it and it must fall within the run. An ``activation_epoch`` at or
    past ``total_epochs`` simply never activates, which reduces the run to
    plain cross entropy.
    """

    total_epochs: int
    activation_epoch: int = 0
    turning_point: int | None = None
    alpha: float = 0.9
    bootstrap_beta: float = 0.8
    mixup_beta_param: float = 1.0

    def __post_init__(self):
        if self.total_epochs < 1:
            raise ParameterError(f"total_epochs must be >= 1, got {self.total_epochs}")
        if self.activation_epoch < 0:
            raise ParameterError(f"activation_epoch must be >= 0, got {self.activation_epoch}")
        if not 0.0 <= self.alpha < 1.0:
            raise ParameterError(f"alpha must be in [0, 1), got {self.alpha}")
        if not 0.0 <= self.bootstrap_beta <= 1.0:
            raise ParameterError(f"bootstrap_beta must be in [0, 1], got {self.bootstrap_beta}")
        if self.mixup_beta_param <= 0.0:
            raise ParameterError(f"mixup_beta_param must be positive, got {self.mixup_beta_param}")
        if self.turning_point is not None:
            if not self.activation_epoch < self.turning_point <= self.total_epochs:
                raise ParameterError(
                    f"need activation_epoch < turning_point <= total_epochs, got "
                    f"{self.activation_epoch}, {self.turning_point}, {self.total_epochs}"
                )


def default_activation_epoch(turning_point: int) -> int:
    """Start correcting a little before the estimated turning point."""
    return max(int(turning_point) - 10, 1)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float


@dataclass
class EpochEvent:
    """Handed to the epoch hook after each epoch's gradient updates.

    ``snapshot`` holds evaluation-mode predictions over the full training
    set for the just-finished epoch; ``state`` is the live targets state
    (None for methods without one). Hooks must treat both as read-only.
    A truthy return value stops the run after the current epoch.
    """

    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    snapshot: PredictionSnapshot
    state: Optional[EnsembleState]


EpochHook = Callable[[EpochEvent], object]


def _batches(order: np.ndarray, batch_size: int):
    for start in range(0, len(order), batch_size):
        yield order[start:start + batch_size]


def run_training(view: TrainView, model: MlpModel, opt: OptimizerState, cfg: SelcRunConfig,
                 method: str, batch_size: int, seed: int, epoch_hook: EpochHook | None = None):
    """Train the model in place; returns (model, state, records).

    ``state`` is the final targets state for the correcting methods and
    None otherwise. Batch order reshuffles every epoch from a per-epoch
    stream of ``seed``, and the last partial batch is kept.
    """
    if method not in METHODS:
        raise ParameterError(f"method must be one of {METHODS}, got {method!r}")
    if batch_size < 1:
        raise ParameterError(f"batch_size must be >= 1, got {batch_size}")
    n = view.n
    labels_onehot = one_hot(view.noisy_labels, view.num_classes)
    state = None
    if method == METHOD_SELC:
        state = EnsembleState.initial(view.noisy_labels, view.num_classes, cfg.alpha, MODE_SELC)
    elif method == METHOD_OPTION1:
        state = EnsembleState.initial(view.noisy_labels, view.num_classes, cfg.alpha, MODE_ENSEMBLE_ONLY)

    snapshot = None
    records = []
    for epoch in range(cfg.total_epochs):
        lr = lr_at(opt, epoch)
        correcting = method in _CORRECTING and epoch >= cfg.activation_epoch
        if correcting:
            if snapshot is None:
                # activation at epoch 0: fall back to the untrained model
                snapshot = PredictionSnapshot(predict_proba(model, view.features))
            update_targets(state, snapshot)
        order = stream(seed, "shuffle", epoch).permutation(n)
        loss_sum = 0.0
        for batch_ids in _batches(order, batch_size):
            x = view.features[batch_ids]
            if correcting:
                targets = state.targets[batch_ids]
            elif method == METHOD_BOOTSTRAP:
                probs = predict_proba(model, x)
                targets = bootstrap_target(labels_onehot[batch_ids], probs, cfg.bootstrap_beta)
            else:
                targets = labels_onehot[batch_ids]
            grads, losses = backward(model, x, targets)
            batch_loss = float(losses.mean())
            if not np.isfinite(batch_loss):
                raise TrainingDivergenceError(f"nonfinite training loss at epoch {epoch}")
            sgd_step(model, grads, opt, epoch)
            loss_sum += float(losses.sum())
        snapshot = PredictionSnapshot(predict_proba(model, view.features))
        train_acc = float(np.mean(snapshot.probs.argmax(axis=1) == view.noisy_labels))
        record = EpochRecord(epoch=epoch, lr=lr, train_loss=loss_sum / n, train_acc=train_acc)
        records.append(record)
        if epoch_hook is not None:
            stop = epoch_hook(EpochEvent(
                epoch=epoch, lr=lr, train_loss=record.train_loss,
                train_acc=train_acc, snapshot=snapshot, state=state,
            ))
            if stop:
                break
    return model, state, records


def mixup_batch(x1, t1, x2, t2, lam: float):
    """Convex combination of two batches and their targets."""
    if not 0.0 <= lam <= 1.0:
        raise ParameterError(f"lambda must be in [0, 1], got {lam}")
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    t1 = np.asarray(t1, dtype=np.float64)
    t2 = np.asarray(t2, dtype=np.float64)
    if x1.shape != x2.shape or t1.shape != t2.shape:
        raise DimensionError("mixup inputs must pair up shape for shape")
    return lam * x1 + (1.0 - lam) * x2, lam * t1 + (1.0 - lam) * t2


def run_selc_plus(features, corrected_targets, model: MlpModel, opt: OptimizerState,
                  cfg: SelcRunConfig, batch_size: int, seed: int,
                  epoch_hook: EpochHook | None = None, harden: bool = False):
    """Retrain a freshly initialized model with mixup on corrected targets.

    This stage sees only features and the corrected soft targets; the
    signature has no label argument on purpose. One lambda ~ Beta(a, a) is
    drawn per batch, and partners come from a within-batch permutation.
    ``harden`` replaces each target with a one-hot at its argmax (ablation).
    Returns (model, records).
    """
    features = np.asarray(features, dtype=np.float64)
    targets = np.asarray(corrected_targets, dtype=np.float64)
    if harden:
        targets = harden_targets(targets)
    if features.shape[0] != targets.shape[0]:
        raise DimensionError("features and corrected targets must agree in length")
    if batch_size < 1:
        raise ParameterError(f"batch_size must be >= 1, got {batch_size}")
    n = features.shape[0]
    records = []
    for epoch in range(cfg.total_epochs):
        lr = lr_at(opt, epoch)
        order = stream(seed, "shuffle", epoch).permutation(n)
        mix_rng = stream(seed, "mixup", epoch)
        loss_sum = 0.0
        for batch_ids in _batches(order, batch_size):
            x = features[batch_ids]
            t = targets[batch_ids]
            lam = float(mix_rng.beta(cfg.mixup_beta_param, cfg.mixup_beta_param))
            partner = mix_rng.permutation(len(batch_ids))
            mx, mt = mixup_batch(x, t, x[partner], t[partner], lam)
            grads, losses = backward(model, mx, mt)
            batch_loss = float(losses.mean())
            if not np.isfinite(batch_loss):
                raise TrainingDivergenceError(f"nonfinite training loss at epoch {epoch}")
            sgd_step(model, grads, opt, epoch)
            loss_sum += float(losses.sum())
        snapshot = PredictionSnapshot(predict_proba(model, features))
        train_acc = float(np.mean(snapshot.probs.argmax(axis=1) == targets.argmax(axis=1)))
        record = EpochRecord(epoch=epoch, lr=lr, train_loss=loss_sum / n, train_acc=train_acc)
        records.append(record)
        if epoch_hook is not None:
            stop = epoch_hook(EpochEvent(
                epoch=epoch, lr=lr, train_loss=record.train_loss,
                train_acc=train_acc, snapshot=snapshot, state=None,
            ))
            if stop:
                break
    return model, records
