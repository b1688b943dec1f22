"""
Decision-unit quality: accuracy, ROC-AUC, sensitivity and specificity,
with "exit prediction correct" as the positive class.
"""

from dataclasses import dataclass, field, asdict
from typing import Any, Dict, List, Sequence

import numpy as np
from sklearn.metrics import confusion_matrix, roc_auc_score, roc_curve

from core.exceptions import DomainError
from decision.unit import CORRECT, DecisionUnit, DuSample, samples_to_arrays


@dataclass
class DuReport:
    """Held-out performance of one decision unit"""
    accuracy: float
    auc: float
    sensitivity: float
    specificity: float
    n_samples: int
    n_correct: int
    roc_fpr: List[float] = field(default_factory=list)
    roc_tpr: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def summary(self) -> str:
        return (
            f"accuracy={self.accuracy:.3f} auc={self.auc:.3f} "
            f"sensitivity={self.sensitivity:.3f} specificity={self.specificity:.3f} n={self.n_samples}"
        )


def roc_auc(scores: Sequence[float], positives: Sequence[bool]) -> float:
    y = np.asarray(positives, dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise DomainError("ROC-AUC needs both correct and incorrect samples")
    return float(roc_auc_score(y, np.asarray(scores, dtype=np.float64)))


def evaluate_decision_unit(du: DecisionUnit, samples: Sequence[DuSample], threshold: float = 0.5) -> DuReport:
    """Score the DU on held-out samples"""
    x, y = samples_to_arrays(samples)
    if len(np.unique(y)) < 2:
        raise DomainError("evaluation set must contain both correct and incorrect samples")
    scores = du.certainty_batch(x)
    predicted = (scores >= threshold).astype(np.int64)
    tn, fp, fn, tp = confusion_matrix(y, predicted, labels=[1 - CORRECT, CORRECT]).ravel()
    fpr, tpr, _ = roc_curve(y, scores)
    return DuReport(
        accuracy=float((tp + tn) / len(y)),
        auc=roc_auc(scores, y == CORRECT),
        sensitivity=float(tp / (tp + fn)),
        specificity=float(tn / (tn + fp)),
        n_samples=int(len(y)),
        n_correct=int(y.sum()),
        roc_fpr=fpr.tolist(),
        roc_tpr=tpr.tolist(),
    )
