"""
Meta-information of a classification output: the uncertainty features
a decision unit is trained on.

Features, in serialized order:
- max_probability:  largest class probability
- least_confidence: top-1 minus top-2 probability
- entropy:          sum_i p_i ln p_i (non-positive; 0 ln 0 = 0)
- std_dev:          population standard deviation of the probabilities
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from core.exceptions import DomainError

FEATURE_ORDER: Tuple[str, ...] = ('max_probability', 'least_confidence', 'entropy', 'std_dev')
PROB_SUM_TOLERANCE = 1e-9


@dataclass(frozen=True)
class MetaFeatures:
    """Uncertainty features of one probability vector"""
    max_probability: float
    least_confidence: float
    entropy: float
    std_dev: float

    def as_array(self) -> np.ndarray:
        return np.array([self.max_probability, self.least_confidence, self.entropy, self.std_dev])

    @classmethod
    def from_array(cls, values) -> "MetaFeatures":
        v = np.asarray(values, dtype=np.float64)
        if v.shape != (4,) or not np.all(np.isfinite(v)):
            raise DomainError(f"meta features need 4 finite values, got {values!r}")
        return cls(float(v[0]), float(v[1]), float(v[2]), float(v[3]))


def validate_probs(probs) -> np.ndarray:
    """Check the probability-vector contract on a vector or on every row of a batch"""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim not in (1, 2) or p.shape[-1] < 2:
        raise DomainError(f"probability vectors need at least 2 classes, got shape {p.shape}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise DomainError("probabilities must be finite and non-negative")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > PROB_SUM_TOLERANCE):
        raise DomainError("probabilities must sum to 1")
    return p


def extract_meta_batch(probs) -> np.ndarray:
    """
    Meta features for every row of a (n, N) probability matrix, as an (n, 4) array.

    Rows are sorted descending before any reduction, so results are
    exactly invariant to class permutations.
    """
    p = validate_probs(np.atleast_2d(probs))
    ps = -np.sort(-p, axis=1)
    mp = ps[:, 0]
    lc = ps[:, 0] - ps[:, 1]
    safe = np.where(ps > 0, ps, 1.0)
    entropy = np.sum(np.where(ps > 0, ps * np.log(safe), 0.0), axis=1)
    std = np.std(ps, axis=1)
    return np.column_stack([mp, lc, entropy, std])


def extract_meta(probs) -> MetaFeatures:
    """Meta features of a single probability vector"""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1:
        raise DomainError(f"expected one probability vector, got shape {p.shape}")
    return MetaFeatures.from_array(extract_meta_batch(p)[0])
