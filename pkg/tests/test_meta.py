"""
Meta-feature extraction from probability vectors.
"""

import numpy as np
import pytest
from scipy.stats import spearmanr

from core.exceptions import DomainError
from meta.extract import FEATURE_ORDER, MetaFeatures, extract_meta, extract_meta_batch


def test_confident_vector():
    meta = extract_meta([0.9, 0.09, 0.01])
    assert meta.max_probability == pytest.approx(0.9)
    assert meta.least_confidence == pytest.approx(0.81)
    expected_entropy = 0.9 * np.log(0.9) + 0.09 * np.log(0.09) + 0.01 * np.log(0.01)
    assert meta.entropy == pytest.approx(expected_entropy)
    assert meta.std_dev == pytest.approx(0.402, abs=1e-3)


def test_unsorted_vector():
    meta = extract_meta([0.2, 0.5, 0.3])
    assert meta.max_probability == pytest.approx(0.5)
    assert meta.least_confidence == pytest.approx(0.2)
    assert meta.std_dev == pytest.approx(0.125, abs=1e-3)


def test_uniform_vector():
    meta = extract_meta(np.full(4, 0.25))
    assert meta.max_probability == pytest.approx(0.25)
    assert meta.least_confidence == 0.0
    assert meta.entropy == pytest.approx(-np.log(4))
    assert meta.std_dev == pytest.approx(0.0, abs=1e-15)


def test_one_hot_vector_has_zero_entropy():
    meta = extract_meta([0.0, 1.0, 0.0])
    assert meta.max_probability == 1.0
    assert meta.least_confidence == 1.0
    assert meta.entropy == 0.0


def test_permutation_invariance_is_exact(rng):
    probs = rng.dirichlet(np.ones(6), size=50)
    for p in probs:
        reference = extract_meta(p)
        for _ in range(3):
            assert extract_meta(rng.permutation(p)) == reference


def test_batch_matches_single(rng):
    probs = rng.dirichlet(np.ones(3), size=20)
    batch = extract_meta_batch(probs)
    assert batch.shape == (20, len(FEATURE_ORDER))
    for row, p in zip(batch, probs):
        assert np.array_equal(row, extract_meta(p).as_array())


@pytest.mark.parametrize("n_classes", [2, 3, 8])
def test_feature_ranges(rng, n_classes):
    probs = rng.dirichlet(np.full(n_classes, 0.5), size=1000)
    batch = extract_meta_batch(probs)
    mp, lc, entropy, std = batch.T
    assert np.all((mp >= 1.0 / n_classes - 1e-12) & (mp <= 1.0))
    assert np.all((lc >= 0.0) & (lc <= 1.0))
    assert np.all((entropy <= 0.0) & (entropy >= -np.log(n_classes) - 1e-12))
    assert np.all((std >= 0.0) & (std <= np.sqrt(n_classes - 1) / n_classes + 1e-12))


@pytest.mark.parametrize("n_classes", [2, 3, 8])
def test_confidence_features_agree_in_rank(rng, n_classes):
    batch = extract_meta_batch(rng.dirichlet(np.ones(n_classes), size=1000))
    for i in range(4):
        for j in range(i + 1, 4):
            rho, _ = spearmanr(batch[:, i], batch[:, j])
            assert rho > 0, (FEATURE_ORDER[i], FEATURE_ORDER[j], rho)
    rho, _ = spearmanr(batch[:, 0], batch[:, 2])
    assert rho > 0.7


@pytest.mark.parametrize("probs", [
    [0.5, 0.6],
    [1.2, -0.2],
    [1.0],
    [0.5, float("nan")],
])
def test_contract_violations(probs):
    with pytest.raises(DomainError):
        extract_meta(probs)


def test_from_array_validates():
    assert MetaFeatures.from_array([0.9, 0.8, -0.3, 0.4]).least_confidence == 0.8
    with pytest.raises(DomainError):
        MetaFeatures.from_array([0.9, 0.8])
