"""
Decision units: binary classifiers over meta features that predict whether
a client exit classified a sample correctly, plus the sensitivity gate.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Union

import numpy as np

from core.exceptions import DataError, DomainError, TrainingError
from core.types import GateDecision, LabeledDataset, LossKind, Sensitivity
from meta.extract import FEATURE_ORDER, MetaFeatures, extract_meta_batch
from nn import functional as F
from nn.model import MlpModel, forward, init_mlp, model_from_dict, model_to_dict
from nn.trainer import TrainConfig, train

logger = logging.getLogger(__name__)

HIDDEN_LAYERS = 4
DEFAULT_HIDDEN_WIDTH = 16
INCORRECT, CORRECT = 0, 1


@dataclass(frozen=True)
class DuSample:
    """Meta features of one classified sample and whether the exit got it right"""
    features: MetaFeatures
    correct: bool


@dataclass(frozen=True, eq=False)
class DecisionUnit:
    """Trained correctness classifier with its feature standardization"""
    classifier: MlpModel
    mean: np.ndarray
    scale: np.ndarray
    seed: int

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64)
        scale = np.array(self.scale, dtype=np.float64)
        if mean.shape != (4,) or scale.shape != (4,):
            raise DomainError("normalization constants need one entry per meta feature")
        if not np.all(scale > 0):
            raise DomainError("normalization scales must be strictly positive")
        widths = self.classifier.widths
        if widths[0] != 4 or widths[-1] != 2 or len(widths) != HIDDEN_LAYERS + 2:
            raise DomainError(f"decision unit classifier must be [4, h x {HIDDEN_LAYERS}, 2], got {list(widths)}")
        mean.setflags(write=False)
        scale.setflags(write=False)
        object.__setattr__(self, 'mean', mean)
        object.__setattr__(self, 'scale', scale)

    @property
    def hidden_width(self) -> int:
        return self.classifier.widths[1]

    def normalize(self, features: np.ndarray) -> np.ndarray:
        return (np.asarray(features, dtype=np.float64) - self.mean) / self.scale

    def certainty_batch(self, features: np.ndarray) -> np.ndarray:
        """Probability of the 'correct' class for each (n, 4) feature row"""
        logits = forward(self.classifier, self.normalize(np.atleast_2d(features)))
        return F.softmax_t(logits, 1.0)[:, CORRECT]

    def certainty(self, features: MetaFeatures) -> float:
        return certainty(self, features)


def build_du_dataset(probs_list, predictions: Sequence[int], labels: Sequence[int]) -> List[DuSample]:
    """One DuSample per classified sample; correct = (prediction == label)"""
    probs = list(probs_list) if not isinstance(probs_list, np.ndarray) else probs_list
    if not (len(probs) == len(predictions) == len(labels)):
        raise DomainError(
            f"length mismatch: {len(probs)} probability vectors, "
            f"{len(predictions)} predictions, {len(labels)} labels"
        )
    if len(probs) == 0:
        return []
    features = extract_meta_batch(np.asarray(probs, dtype=np.float64))
    return [
        DuSample(MetaFeatures.from_array(row), bool(int(pred) == int(label)))
        for row, pred, label in zip(features, predictions, labels)
    ]


def samples_to_arrays(samples: Sequence[DuSample]):
    x = np.array([s.features.as_array() for s in samples], dtype=np.float64).reshape(-1, 4)
    y = np.array([CORRECT if s.correct else INCORRECT for s in samples], dtype=np.int64)
    return x, y


def train_decision_unit(
    samples: Sequence[DuSample],
    cfg: TrainConfig,
    hidden_width: int = DEFAULT_HIDDEN_WIDTH,
) -> DecisionUnit:
    """Z-score the features, then train a [4, h, h, h, h, 2] classifier on hard labels"""
    if len(samples) < 2:
        raise TrainingError(f"decision unit needs at least 2 samples, got {len(samples)}")
    x, y = samples_to_arrays(samples)
    if len(np.unique(y)) < 2:
        kind = "correct" if y[0] == CORRECT else "incorrect"
        raise TrainingError(f"decision unit training set holds only {kind} samples; the gate would be vacuous")
    if cfg.loss_kind is not LossKind.HARD:
        raise TrainingError("decision units are trained with the hard-label loss")

    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    classifier = init_mlp([4] + [hidden_width] * HIDDEN_LAYERS + [2], cfg.seed)
    data = LabeledDataset(x=(x - mean) / scale, y=y)
    classifier, history = train(classifier, data, cfg)
    logger.info(
        f"Decision unit trained on {len(samples)} samples "
        f"({int(y.sum())} correct / {int(len(y) - y.sum())} incorrect), final loss "
        f"{history[-1] if history else float('nan'):.4f}"
    )
    return DecisionUnit(classifier=classifier, mean=mean, scale=scale, seed=cfg.seed)


def certainty(du: DecisionUnit, features: MetaFeatures) -> float:
    """DU probability that the exit's prediction is correct, in [0, 1]"""
    return float(du.certainty_batch(features.as_array())[0])


def gate(certainty_value: float, sensitivity: Union[Sensitivity, float]) -> GateDecision:
    """
    Escalate when certainty < sensitivity; sensitivity 1 always escalates,
    sensitivity 0 never does.
    """
    s = sensitivity if isinstance(sensitivity, Sensitivity) else Sensitivity(float(sensitivity))
    if not 0.0 <= certainty_value <= 1.0:
        raise DomainError(f"certainty must lie in [0, 1], got {certainty_value}")
    if s.value >= 1.0 or certainty_value < s.value:
        return GateDecision.ESCALATE
    return GateDecision.KEEP_LOCAL


# artifact I/O

def decision_unit_to_dict(du: DecisionUnit) -> dict:
    return {
        'kind': 'decision-unit',
        'feature_order': list(FEATURE_ORDER),
        'mean': du.mean.tolist(),
        'scale': du.scale.tolist(),
        'seed': du.seed,
        'hidden_width': du.hidden_width,
        'classifier': model_to_dict(du.classifier),
    }


def decision_unit_from_dict(doc: dict) -> DecisionUnit:
    if doc.get('kind') != 'decision-unit':
        raise DataError("document is not a decision unit")
    if tuple(doc.get('feature_order', ())) != FEATURE_ORDER:
        raise DataError(f"unexpected feature order {doc.get('feature_order')}")
    try:
        du = DecisionUnit(
            classifier=model_from_dict(doc['classifier']),
            mean=np.array(doc['mean'], dtype=np.float64),
            scale=np.array(doc['scale'], dtype=np.float64),
            seed=int(doc['seed']),
        )
    except KeyError as e:
        raise DataError(f"decision unit document lacks {e}") from e
    if int(doc.get('hidden_width', du.hidden_width)) != du.hidden_width:
        raise DataError(f"hidden width {doc['hidden_width']} disagrees with the classifier ({du.hidden_width})")
    return du


def save_decision_unit(du: DecisionUnit, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(decision_unit_to_dict(du)), encoding='utf-8')
    logger.info(f"Saved decision unit to {path}")
    return path


def load_decision_unit(path: Union[str, Path]) -> DecisionUnit:
    path = Path(path)
    if not path.exists():
        raise DataError(f"decision unit artifact not found: {path}")
    try:
        return decision_unit_from_dict(json.loads(path.read_text(encoding='utf-8')))
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: not a JSON document ({e})") from e
