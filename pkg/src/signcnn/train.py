"""Loss, Adam, early stopping and the epoch/batch training loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .data import Dataset
from .model import SequentialModel, predict_proba


class LabelError(ValueError):
    pass


class NumericError(FloatingPointError):
    """Training produced a non-finite loss."""


# ----------------------------------------------------------------------
# loss


def _check_labels(labels: np.ndarray, n: int, k: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise LabelError(f"expected {n} labels, got shape {labels.shape}")
    bad = np.flatnonzero((labels < 0) | (labels >= k))
    if bad.size:
        i = int(bad[0])
        raise LabelError(f"label {labels[i]} at index {i} is outside 0..{k - 1}")
    return labels.astype(np.int64)


def sparse_ce_loss(probabilities: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean sparse categorical cross-entropy of softmax outputs.

    Returns the loss and its gradient with respect to the logits that
    produced ``probabilities``, ``(p - onehot) / N``.
    """
    p = np.asarray(probabilities)
    n, k = p.shape
    labels = _check_labels(labels, n, k)
    picked = p[np.arange(n), labels].astype(np.float64)
    eps = np.finfo(p.dtype).tiny
    loss = float(-np.log(np.maximum(picked, eps)).mean())
    grad = p.copy()
    grad[np.arange(n), labels] -= 1
    return loss, grad / n


def sparse_ce_from_logits(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Fused log-softmax + cross-entropy; same gradient as :func:`sparse_ce_loss`."""
    z = np.asarray(logits)
    n, k = z.shape
    labels = _check_labels(labels, n, k)
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_norm
    loss = float(-log_p[np.arange(n), labels].astype(np.float64).mean())
    grad = np.exp(log_p)
    grad[np.arange(n), labels] -= 1
    return loss, grad / n


# ----------------------------------------------------------------------
# Adam


class Adam:
    """Adam with bias-corrected moments.

    ``p <- p - lr * m_hat / (sqrt(v_hat) + eps)`` with
    ``m_hat = m / (1 - beta1**t)`` and ``v_hat = v / (1 - beta2**t)``.
    """

    def __init__(self, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-7):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: list[np.ndarray] = []
        self.v: list[np.ndarray] = []

    def init(self, params: Sequence[np.ndarray]) -> None:
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def state_size(self) -> int:
        return int(sum(a.size for a in self.m) + sum(a.size for a in self.v))

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        """Update ``params`` in place."""
        if not self.m:
            self.init(params)
        if len(params) != len(self.m) or len(grads) != len(params):
            raise ValueError("params, grads and optimizer state differ in length")
        for p, g in zip(params, grads):
            if p.shape != g.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# ----------------------------------------------------------------------
# validation split and early stopping


def split_train_val(ds: Dataset, fraction: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded shuffle, then the last ``ceil(fraction * N)`` rows validate."""
    n = len(ds)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"validation fraction must be in (0, 1), got {fraction}")
    n_val = math.ceil(fraction * n)
    if n_val >= n:
        raise ValueError(f"fraction {fraction} of {n} rows leaves no training data")
    order = np.random.default_rng(seed).permutation(n)
    return ds.subset(np.sort(order[: n - n_val])), ds.subset(np.sort(order[n - n_val :]))


class EarlyStopping:
    """Stop once the monitored loss fails to strictly improve ``patience`` times in a row.

    Epochs are numbered from 1.
    """

    def __init__(self, patience: int = 5):
        if patience < 1:
            raise ValueError("patience must be >= 1")
        self.patience = patience
        self.best = math.inf
        self.best_epoch: Optional[int] = None
        self.wait = 0
        self.epoch = 0

    def update(self, val_loss: float) -> bool:
        """Record one epoch; return True when training should stop."""
        self.epoch += 1
        if val_loss < self.best:
            self.best = val_loss
            self.best_epoch = self.epoch
            self.wait = 0
            return False
        self.wait += 1
        return self.wait >= self.patience

    @property
    def improved(self) -> bool:
        return self.best_epoch == self.epoch


# ----------------------------------------------------------------------
# training loop


@dataclass
class TrainConfig:
    max_epochs: int = 30
    batch_size: int = 64
    validation_fraction: float = 0.2
    patience: int = 5
    restore_best: bool = True
    seed: int = 0
    lr: float = 0.001

    def __post_init__(self):
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in (0, 1)")
        if self.patience < 1 or self.batch_size < 1 or self.max_epochs < 0:
            raise ValueError("patience and batch_size must be >= 1, max_epochs >= 0")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float


@dataclass
class TrainingHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: Optional[int] = None
    stopped_early: bool = False

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> list[float]:
        return [getattr(r, name) for r in self.records]


def loss_and_accuracy(m: SequentialModel, ds: Dataset, batch_size: int = 256) -> tuple[float, float]:
    probs = predict_proba(m, ds.images, batch_size)
    loss, _ = sparse_ce_loss(probs, ds.labels)
    acc = float((probs.argmax(axis=1) == ds.labels).mean())
    return loss, acc


def train(
    model: SequentialModel,
    train_set: Dataset,
    config: TrainConfig = TrainConfig(),
    val_set: Optional[Dataset] = None,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> tuple[SequentialModel, TrainingHistory]:
    """Fit ``model`` with Adam on sparse cross-entropy.

    Without ``val_set`` a validation split is carved out of ``train_set``
    using ``config.validation_fraction``.  On exit the weights of the best
    validation-loss epoch are restored and the model is in inference mode.
    """
    history = TrainingHistory()
    if config.max_epochs == 0:
        return model.eval(), history
    if val_set is None:
        train_set, val_set = split_train_val(train_set, config.validation_fraction, config.seed)

    rng = np.random.default_rng(config.seed)
    opt = Adam(lr=config.lr)
    params = model.parameters()
    opt.init(params)
    model.optimizer = opt
    stopper = EarlyStopping(config.patience)
    best_weights = model.get_weights()
    n = len(train_set)

    for epoch in range(1, config.max_epochs + 1):
        model.train()
        order = rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for b, start in enumerate(range(0, n, config.batch_size), start=1):
            idx = order[start : start + config.batch_size]
            x, y = train_set.images[idx], train_set.labels[idx]
            try:
                probs = model.forward(x, rng=rng)
                loss, grad = sparse_ce_from_logits(model.logits(), y)
            except FloatingPointError as err:
                model.eval()
                raise NumericError(f"epoch {epoch}, batch {b}: {err}") from err
            if not math.isfinite(loss):
                model.eval()
                raise NumericError(f"non-finite loss {loss} at epoch {epoch}, batch {b}")
            model.backward(grad)
            opt.step(params, model.gradients())
            total_loss += loss * len(idx)
            correct += int((probs.argmax(axis=1) == y).sum())
        model.eval()

        val_loss, val_acc = loss_and_accuracy(model, val_set)
        record = EpochRecord(epoch, total_loss / n, correct / n, val_loss, val_acc)
        history.records.append(record)
        stop = stopper.update(val_loss)
        if stopper.improved:
            best_weights = model.get_weights()
        history.best_epoch = stopper.best_epoch
        if on_epoch is not None:
            on_epoch(record)
        if stop:
            history.stopped_early = True
            break

    if config.restore_best and history.best_epoch is not None:
        model.set_weights(best_weights)
    return model.eval(), history
