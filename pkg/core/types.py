"""
Core data types shared by the CascadeSplit packages.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Sequence

import numpy as np

from core.exceptions import DomainError


class LossKind(Enum):
    """Training objective"""
    HARD = "hard"
    DISTILLED = "distilled"


class GateDecision(Enum):
    """Outcome of comparing a certainty with a sensitivity"""
    KEEP_LOCAL = "keep_local"
    ESCALATE = "escalate"


class Destination(Enum):
    """Where a sample's final prediction was produced"""
    EXIT1 = "exit1"
    EXIT2 = "exit2"
    SERVER = "server"
    SERVER_FALLBACK_LOCAL = "server_fallback_local"
    FAILED = "failed"


class FallbackPolicy(Enum):
    """What to do with an escalated sample when the server cannot answer"""
    FAIL_SAMPLE = "fail_sample"
    USE_LOCAL_PREDICTION = "use_local_prediction"


class OperatingMode(Enum):
    """Static deployment presets"""
    NORMAL = "normal"
    CLIENT_ONLY = "client-only"
    EXIT1_ONLY = "exit1-only"


@dataclass(frozen=True)
class Sensitivity:
    """Per-exit escalation threshold in [0, 1]"""
    value: float

    def __post_init__(self):
        if not (0.0 <= float(self.value) <= 1.0):
            raise DomainError(f"sensitivity must lie in [0, 1], got {self.value}")


@dataclass
class LabeledDataset:
    """Feature matrix with integer labels and stable sample ids"""
    x: np.ndarray
    y: np.ndarray
    ids: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2:
            raise DomainError(f"features must be a 2-D array, got shape {self.x.shape}")
        if self.y.shape != (self.x.shape[0],):
            raise DomainError(
                f"{self.x.shape[0]} feature rows but {self.y.shape[0] if self.y.ndim else 0} labels"
            )
        if not self.ids:
            self.ids = [str(i) for i in range(len(self.y))]
        elif len(self.ids) != len(self.y):
            raise DomainError(f"{len(self.ids)} ids for {len(self.y)} samples")

    def __len__(self) -> int:
        return int(self.y.shape[0])

    @property
    def input_dim(self) -> int:
        return int(self.x.shape[1])

    @property
    def class_count(self) -> int:
        return int(self.y.max()) + 1 if len(self) else 0

    def subset(self, indices: Sequence[int]) -> "LabeledDataset":
        """Rows at the given indices, in the given order"""
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            x=self.x[idx].copy(),
            y=self.y[idx].copy(),
            ids=[self.ids[i] for i in idx],
        )
