"""
Temperature softmax and the two training losses with their analytic gradients.

All functions accept a single logit vector or a batch (rows = samples).
"""

import numpy as np

from core.exceptions import DomainError

# floor applied inside every logarithm of a cross-entropy
LOG_FLOOR = 1e-12


def _check_temperature(temperature: float) -> float:
    if not np.isfinite(temperature) or temperature <= 0:
        raise DomainError(f"temperature must be a positive real, got {temperature}")
    return float(temperature)


def _as_logits(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim not in (1, 2) or z.shape[-1] < 2:
        raise DomainError(f"logits need at least 2 classes, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise DomainError("logits contain non-finite entries")
    return z


def softmax_t(logits, temperature: float = 1.0) -> np.ndarray:
    """
    Softmax of logits / T with max subtraction.

    Larger temperatures flatten the distribution; argmax is unchanged.
    """
    t = _check_temperature(temperature)
    z = _as_logits(logits) / t
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def argmax(probs) -> np.ndarray:
    """Class index of the largest entry; ties go to the lowest index"""
    return np.argmax(np.asarray(probs), axis=-1)


def cross_entropy(target_probs, probs) -> np.ndarray:
    """H(target, probs) per row, with the log floor"""
    p = np.maximum(np.asarray(probs, dtype=np.float64), LOG_FLOOR)
    return -np.sum(np.asarray(target_probs, dtype=np.float64) * np.log(p), axis=-1)


def distill_loss(student_logits, teacher_logits, temperature: float) -> float:
    """
    Softened cross-entropy H(softmax_t(teacher, T), softmax_t(student, T)).

    Batches return the mean over rows.
    """
    s = _as_logits(student_logits)
    t = _as_logits(teacher_logits)
    if s.shape != t.shape:
        raise DomainError(f"student logits {s.shape} and teacher logits {t.shape} differ in shape")
    loss = cross_entropy(softmax_t(t, temperature), softmax_t(s, temperature))
    return float(np.mean(loss))


def distill_loss_grad(student_logits, teacher_logits, temperature: float) -> np.ndarray:
    """Gradient of distill_loss with respect to the student logits"""
    s = _as_logits(student_logits)
    t = _as_logits(teacher_logits)
    if s.shape != t.shape:
        raise DomainError(f"student logits {s.shape} and teacher logits {t.shape} differ in shape")
    grad = (softmax_t(s, temperature) - softmax_t(t, temperature)) / temperature
    if grad.ndim == 2:
        grad = grad / grad.shape[0]
    return grad


def soft_target_loss(student_logits, target_probs, temperature: float) -> float:
    """Mean softened cross-entropy against precomputed soft targets"""
    return float(np.mean(cross_entropy(target_probs, softmax_t(student_logits, temperature))))


def soft_target_grad(student_logits, target_probs, temperature: float) -> np.ndarray:
    """Batch gradient of soft_target_loss"""
    s = _as_logits(student_logits)
    grad = (softmax_t(s, temperature) - np.asarray(target_probs)) / temperature
    return grad / s.shape[0] if grad.ndim == 2 else grad


def one_hot(labels, n_classes: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise DomainError(f"label outside [0, {n_classes})")
    out = np.zeros((y.shape[0], n_classes))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def hard_label_loss(logits, labels) -> float:
    """Mean cross-entropy of softmax(logits) against one-hot labels"""
    z = _as_logits(np.atleast_2d(logits))
    return float(np.mean(cross_entropy(one_hot(labels, z.shape[1]), softmax_t(z, 1.0))))


def hard_label_grad(logits, labels) -> np.ndarray:
    """Batch gradient of hard_label_loss with respect to the logits"""
    z = _as_logits(np.atleast_2d(logits))
    return (softmax_t(z, 1.0) - one_hot(labels, z.shape[1])) / z.shape[0]
