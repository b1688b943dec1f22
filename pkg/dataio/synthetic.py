"""
Seeded synthetic classification data: Gaussian clusters and interleaved half-moons.
"""

import logging
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from sklearn.datasets import make_moons

from core.exceptions import DomainError
from core.types import LabeledDataset

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SyntheticSpec:
    """
    Gaussian cluster layout.

    class_counts may be imbalanced; separation is the ratio of the distance
    between class centers to the noise standard deviation.
    """
    class_counts: Tuple[int, ...]
    input_dim: int
    separation: float
    seed: int
    noise: float = 1.0

    def validate(self) -> bool:
        if len(self.class_counts) < 2:
            raise DomainError(f"need at least 2 classes, got {len(self.class_counts)}")
        if min(self.class_counts) < 1:
            raise DomainError(f"every class needs at least one sample: {self.class_counts}")
        if self.input_dim < 1:
            raise DomainError(f"input dimension must be positive, got {self.input_dim}")
        if not self.separation > 0 or not self.noise > 0:
            raise DomainError("separation and noise must be positive")
        return True

    @property
    def n_classes(self) -> int:
        return len(self.class_counts)


def _class_centers(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    """
    Centers with pairwise distance separation * noise.

    Up to input_dim classes sit on scaled orthogonal axes under a random
    rotation (pairwise distances exact); beyond that, random directions.
    """
    n, d = spec.n_classes, spec.input_dim
    distance = spec.separation * spec.noise
    if n == 2:
        direction = rng.standard_normal(d)
        direction /= np.linalg.norm(direction)
        return np.stack([-0.5 * distance * direction, 0.5 * distance * direction])
    if n <= d:
        rotation, _ = np.linalg.qr(rng.standard_normal((d, d)))
        axes = np.eye(d)[:n] * (distance / np.sqrt(2.0))
        return axes @ rotation.T
    directions = rng.standard_normal((n, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return directions * (distance / np.sqrt(2.0))


def gen_synthetic(spec: SyntheticSpec) -> LabeledDataset:
    """Gaussian clusters, shuffled; a pure function of the spec"""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    centers = _class_centers(spec, rng)
    xs, ys = [], []
    for label, count in enumerate(spec.class_counts):
        xs.append(centers[label] + spec.noise * rng.standard_normal((count, spec.input_dim)))
        ys.append(np.full(count, label, dtype=np.int64))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    order = rng.permutation(len(y))
    logger.debug(f"Generated {len(y)} samples over {spec.n_classes} classes (seed {spec.seed})")
    return LabeledDataset(x=x[order], y=y[order], ids=[f"s{i:06d}" for i in range(len(y))])


def gen_two_moons(samples_per_class: int, noise: float, seed: int) -> LabeledDataset:
    """Interleaved half-moons in two dimensions"""
    if samples_per_class < 1 or noise < 0:
        raise DomainError("two-moons needs a positive sample count and non-negative noise")
    x, y = make_moons(n_samples=2 * samples_per_class, noise=noise, shuffle=True, random_state=seed)
    return LabeledDataset(x=x, y=y, ids=[f"m{i:06d}" for i in range(len(y))])


def class_counts(labels: Sequence[int], n_classes: int) -> np.ndarray:
    return np.bincount(np.asarray(labels, dtype=np.int64), minlength=n_classes)
