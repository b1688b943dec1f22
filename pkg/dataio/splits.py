"""
Seeded train / validation / test split.
"""

import logging
from typing import Sequence, Tuple

import numpy as np

from core.exceptions import DomainError
from core.types import LabeledDataset

logger = logging.getLogger(__name__)

DEFAULT_FRACTIONS = (0.8, 0.1, 0.1)


def split(
    dataset: LabeledDataset,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    seed: int = 0,
) -> Tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
    """
    Disjoint, exhaustive split. Validation and test sizes are floored;
    the remainder goes to train.
    """
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise DomainError(f"need three non-negative fractions, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DomainError(f"fractions must sum to 1, got {sum(fractions)}")
    n = len(dataset)
    n_val = int(np.floor(fractions[1] * n + 1e-9))
    n_test = int(np.floor(fractions[2] * n + 1e-9))
    n_train = n - n_val - n_test
    if n > 0 and min(n_train, n_val, n_test) == 0:
        raise DomainError(
            f"split of {n} samples with fractions {tuple(fractions)} leaves an empty part "
            f"({n_train}/{n_val}/{n_test})"
        )
    order = np.random.default_rng(seed).permutation(n)
    train = dataset.subset(order[:n_train])
    validation = dataset.subset(order[n_train:n_train + n_val])
    test = dataset.subset(order[n_train + n_val:])
    logger.info(f"Split {n} samples into {n_train}/{n_val}/{n_test} (seed {seed})")
    return train, validation, test
