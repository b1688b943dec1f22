"""
Seeded mini-batch gradient descent for MlpModel.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from core.exceptions import ConfigurationError, DomainError, TrainingError
from core.types import LabeledDataset, LossKind
from nn import functional as F
from nn.model import MlpModel, forward

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Training hyper-parameters"""
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 0.05
    seed: int = 0
    loss_kind: LossKind = LossKind.HARD
    temperature: float = 1.0
    teacher: Optional[MlpModel] = None
    # weight of the hard-label term in distilled mode; 0 keeps the pure soft loss
    hard_weight: float = 0.0

    def validate(self) -> bool:
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError(f"epochs must be >= 0 and batch size >= 1 ({self.epochs}, {self.batch_size})")
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.hard_weight <= 1.0:
            raise ConfigurationError(f"hard_weight must lie in [0, 1], got {self.hard_weight}")
        if self.loss_kind is LossKind.DISTILLED:
            if self.teacher is None:
                raise ConfigurationError("distilled loss requires a teacher model")
            if not self.temperature > 0:
                raise ConfigurationError(f"distilled loss requires temperature > 0, got {self.temperature}")
        return True


def loss_and_gradients(
    model: MlpModel,
    x: np.ndarray,
    labels: Optional[np.ndarray] = None,
    soft_targets: Optional[np.ndarray] = None,
    temperature: float = 1.0,
    hard_weight: float = 0.0,
) -> Tuple[float, List[np.ndarray]]:
    """
    Batch loss and parameter gradients.

    With soft_targets the loss is the softened cross-entropy at `temperature`,
    optionally mixed with the hard-label term; otherwise it is the hard-label
    cross-entropy against `labels`.
    """
    trace = model.forward_trace(np.asarray(x, dtype=np.float64))
    logits = trace[1][-1]
    if soft_targets is None:
        if labels is None:
            raise DomainError("either labels or soft targets are required")
        loss = F.hard_label_loss(logits, labels)
        dlogits = F.hard_label_grad(logits, labels)
    else:
        loss = F.soft_target_loss(logits, soft_targets, temperature)
        dlogits = F.soft_target_grad(logits, soft_targets, temperature)
        if hard_weight > 0:
            loss = (1.0 - hard_weight) * loss + hard_weight * F.hard_label_loss(logits, labels)
            dlogits = (1.0 - hard_weight) * dlogits + hard_weight * F.hard_label_grad(logits, labels)
    return loss, model.backward(trace, dlogits)


def train(model: MlpModel, data: LabeledDataset, cfg: TrainConfig) -> Tuple[MlpModel, List[float]]:
    """
    Train a copy of `model`; returns the trained model and the per-epoch mean loss.

    Batch order is drawn from `cfg.seed` only, so identical inputs give
    bit-identical parameters.
    """
    cfg.validate()
    if cfg.epochs == 0:
        return model, []
    if len(data) == 0:
        raise DomainError("cannot train on an empty dataset")
    if data.input_dim != model.input_dim:
        raise DomainError(f"dataset width {data.input_dim} does not match model input {model.input_dim}")
    if data.y.min() < 0 or data.y.max() >= model.n_classes:
        raise DomainError(f"labels must lie in [0, {model.n_classes})")

    soft_targets = None
    if cfg.loss_kind is LossKind.DISTILLED:
        if cfg.teacher.n_classes != model.n_classes:
            raise ConfigurationError("teacher and student disagree on the class count")
        soft_targets = F.softmax_t(forward(cfg.teacher, data.x), cfg.temperature)

    rng = np.random.default_rng(cfg.seed)
    params = [p.copy() for p in model.parameters()]
    current = model
    history: List[float] = []
    n = len(data)

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = loss_and_gradients(
                current,
                data.x[idx],
                labels=data.y[idx],
                soft_targets=None if soft_targets is None else soft_targets[idx],
                temperature=cfg.temperature,
                hard_weight=cfg.hard_weight,
            )
            if not np.isfinite(loss):
                raise TrainingError(f"training diverged at epoch {epoch}: non-finite loss")
            total += loss * len(idx)
            for p, g in zip(params, grads):
                p -= cfg.learning_rate * g
            try:
                current = current.with_parameters(params)
            except DomainError as e:
                raise TrainingError(f"training diverged at epoch {epoch}: {e}") from e
        epoch_loss = total / n
        if not np.isfinite(epoch_loss):
            raise TrainingError(f"training diverged at epoch {epoch}: non-finite loss")
        history.append(float(epoch_loss))
        logger.debug(f"epoch {epoch}/{cfg.epochs} loss={epoch_loss:.6f}")

    logger.info(
        f"Trained {current.describe()} for {cfg.epochs} epochs "
        f"({cfg.loss_kind.value}, final loss {history[-1]:.4f})"
    )
    return current, history


def accuracy(model: MlpModel, data: LabeledDataset) -> float:
    """Fraction of rows whose logit argmax equals the label"""
    if len(data) == 0:
        raise DomainError("accuracy of an empty dataset is undefined")
    return float(np.mean(F.argmax(forward(model, data.x)) == data.y))
