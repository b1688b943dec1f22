"""
MLP evaluation, backpropagation and seeded training.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from core.exceptions import ConfigurationError, DataError, DomainError
from core.types import LabeledDataset, LossKind
from nn import functional as F
from nn.model import (
    MlpModel,
    SkipEdge,
    forward,
    forward_hidden,
    init_mlp,
    load_model,
    models_equal,
    reinitialize,
    save_model,
)
from nn.trainer import TrainConfig, accuracy, loss_and_gradients, train


def _model_with_skips(seed: int) -> MlpModel:
    base = init_mlp([3, 5, 4, 3], seed)
    rng = np.random.default_rng(seed + 100)
    skips = (
        SkipEdge(0, 2, rng.normal(scale=0.5, size=(3, 4))),
        SkipEdge(1, 3, rng.normal(scale=0.5, size=(5, 3))),
    )
    biases = tuple(rng.normal(scale=0.1, size=b.shape) for b in base.biases)
    return MlpModel(base.widths, base.weights, biases, base.activations, skips)


def _relative_error(a, b) -> float:
    a = np.concatenate([g.ravel() for g in a])
    b = np.concatenate([g.ravel() for g in b])
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


def _numeric_gradients(model, loss_fn, eps=1e-6):
    params = [p.copy() for p in model.parameters()]
    grads = []
    for k, p in enumerate(params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            plus = [q.copy() for q in params]
            minus = [q.copy() for q in params]
            plus[k][idx] += eps
            minus[k][idx] -= eps
            g[idx] = (loss_fn(model.with_parameters(plus)) - loss_fn(model.with_parameters(minus))) / (2 * eps)
        grads.append(g)
    return grads


@pytest.mark.parametrize("seed", range(20))
def test_hard_gradients_match_finite_differences(seed):
    model = _model_with_skips(seed)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(8, 3))
    labels = rng.integers(0, 3, size=8)

    _, analytic = loss_and_gradients(model, x, labels=labels)
    numeric = _numeric_gradients(model, lambda m: F.hard_label_loss(forward(m, x), labels))
    assert _relative_error(analytic, numeric) < 1e-4


@pytest.mark.parametrize("seed", range(20))
def test_distilled_gradients_match_finite_differences(seed):
    model = _model_with_skips(seed)
    rng = np.random.default_rng(50 + seed)
    x = rng.normal(size=(8, 3))
    teacher_logits = rng.normal(scale=3.0, size=(8, 3))
    targets = F.softmax_t(teacher_logits, 4.0)

    _, analytic = loss_and_gradients(model, x, soft_targets=targets, temperature=4.0)
    numeric = _numeric_gradients(model, lambda m: F.soft_target_loss(forward(m, x), targets, 4.0))
    assert _relative_error(analytic, numeric) < 1e-4


def test_forward_single_and_batch_agree(rng):
    model = init_mlp([2, 4, 3], 0)
    x = rng.normal(size=(5, 2))
    batch = forward(model, x)
    assert batch.shape == (5, 3)
    assert np.allclose(forward(model, x[2]), batch[2])


def test_forward_rejects_wrong_width():
    with pytest.raises(DomainError):
        forward(init_mlp([2, 4, 3], 0), np.zeros(3))


def test_forward_hidden_bounds(rng):
    model = init_mlp([2, 4, 3], 0)
    assert forward_hidden(model, rng.normal(size=2), 1).shape == (4,)
    with pytest.raises(DomainError):
        forward_hidden(model, rng.normal(size=2), 3)


def test_model_is_read_only():
    model = init_mlp([2, 3, 2], 0)
    with pytest.raises(ValueError):
        model.weights[0][0, 0] = 1.0


def test_invalid_skip_rejected():
    base = init_mlp([2, 3, 2], 0)
    with pytest.raises(DomainError):
        MlpModel(base.widths, base.weights, base.biases, base.activations,
                 (SkipEdge(2, 1, np.zeros((2, 3))),))


def test_training_is_deterministic(moons):
    train_set = moons[0]
    cfg = TrainConfig(epochs=3, seed=7)
    a, history_a = train(init_mlp([2, 8, 2], 0), train_set, cfg)
    b, history_b = train(init_mlp([2, 8, 2], 0), train_set, cfg)
    assert models_equal(a, b)
    assert history_a == history_b


def test_training_learns_two_moons(moons, teacher):
    assert accuracy(teacher, moons[2]) >= 0.85


def test_zero_epochs_returns_model_unchanged(moons):
    model = init_mlp([2, 8, 2], 0)
    trained, history = train(model, moons[0], TrainConfig(epochs=0))
    assert trained is model and history == []


def test_distilled_training_requires_teacher():
    with pytest.raises(ConfigurationError):
        TrainConfig(loss_kind=LossKind.DISTILLED).validate()


def test_label_out_of_range():
    data = LabeledDataset(x=np.zeros((2, 2)), y=np.array([0, 5]))
    with pytest.raises(DomainError):
        train(init_mlp([2, 3, 2], 0), data, TrainConfig(epochs=1))


def test_reinitialize_keeps_architecture():
    model = _model_with_skips(0)
    fresh = reinitialize(model, 9)
    assert fresh.widths == model.widths
    assert fresh.skip_pairs() == model.skip_pairs()
    assert all(not np.any(e.projection) for e in fresh.skips)


def test_model_artifact_reloads_bit_exact(tmp_path):
    model = _model_with_skips(3)
    path = save_model(model, tmp_path / "model.json")
    assert models_equal(load_model(path), model)


def test_model_artifact_version_checked(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"format_version": "other/9"}', encoding="utf-8")
    with pytest.raises(DataError):
        load_model(path)


def test_concurrent_forward_matches_sequential(rng):
    model = _model_with_skips(9)
    batches = [rng.normal(size=(16, 3)) for _ in range(64)]
    sequential = [forward(model, x) for x in batches]
    with ThreadPoolExecutor(max_workers=8) as pool:
        concurrent = list(pool.map(lambda x: forward(model, x), batches))
    assert all(np.array_equal(a, b) for a, b in zip(concurrent, sequential))
