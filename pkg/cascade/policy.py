"""
Cascade policy: the two client exits, their decision units and
sensitivities, and the server binding, plus the stage predictors that
produce probability vectors from either live models or logit replays.
"""

import logging
from dataclasses import dataclass, replace
from typing import Iterable, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from config.settings import DEVICE_PROFILES, get_config
from core.exceptions import ConfigurationError, DataError, DomainError
from core.types import FallbackPolicy, LabeledDataset, OperatingMode, Sensitivity
from dataio.replay import ReplayRow
from meta.extract import MetaFeatures
from morphnas.exits import TwoExitModel
from nn import functional as F
from nn.model import MlpModel, forward

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CascadeSample:
    """One sample as seen by the cascade: a feature vector, a replay row, or both"""
    sample_id: str
    label: int
    x: Optional[np.ndarray] = None
    replay: Optional[ReplayRow] = None

    def features(self) -> np.ndarray:
        if self.x is None:
            raise DataError(f"sample {self.sample_id!r} carries no feature vector")
        return self.x

    def replay_row(self) -> ReplayRow:
        if self.replay is None:
            raise DataError(f"sample {self.sample_id!r} carries no replay row")
        return self.replay


def as_samples(data: Union[LabeledDataset, Sequence[ReplayRow], Sequence[CascadeSample]]) -> List[CascadeSample]:
    """Normalize a dataset, replay rows or ready-made samples into CascadeSamples"""
    if isinstance(data, LabeledDataset):
        return [
            CascadeSample(sample_id=data.ids[i], label=int(data.y[i]), x=data.x[i])
            for i in range(len(data))
        ]
    samples = []
    for item in data:
        if isinstance(item, CascadeSample):
            samples.append(item)
        elif isinstance(item, ReplayRow):
            samples.append(CascadeSample(sample_id=item.sample_id, label=item.label, replay=item))
        else:
            raise DomainError(f"cannot route {type(item).__name__}")
    return samples


# predictors

class StagePredictor(Protocol):
    """Anything that turns a sample into a probability vector"""

    def probs(self, sample: CascadeSample) -> np.ndarray:
        ...


class CertaintySource(Protocol):
    """Anything that scores meta features with a certainty in [0, 1]"""

    def certainty(self, features: MetaFeatures) -> float:
        ...


@dataclass(frozen=True, eq=False)
class ModelExit:
    """Exit 1 or exit 2 of an in-process two-exit model"""
    model: TwoExitModel
    stage: int

    def probs(self, sample: CascadeSample) -> np.ndarray:
        return self.model.exit_probs(self.stage, sample.features())


@dataclass(frozen=True, eq=False)
class ModelServer:
    """Server model evaluated in-process"""
    model: MlpModel

    def probs(self, sample: CascadeSample) -> np.ndarray:
        return F.softmax_t(forward(self.model, sample.features()), 1.0)


@dataclass(frozen=True)
class ReplayColumn:
    """Probabilities from one logit column of the sample's replay row"""
    column: str

    def probs(self, sample: CascadeSample) -> np.ndarray:
        return F.softmax_t(sample.replay_row().column(self.column), 1.0)


def ReplayExit(stage: int) -> ReplayColumn:
    return ReplayColumn(f"exit{stage}")


def ReplayServer() -> ReplayColumn:
    return ReplayColumn("server")


# policy

@dataclass(frozen=True, eq=False)
class ExitStage:
    """A client exit with its decision unit, sensitivity and compute cost"""
    stage_id: int
    predictor: StagePredictor
    decision_unit: CertaintySource
    sensitivity: Sensitivity
    # cost of reaching this exit from the previous one (the prefix for exit 1)
    compute_cost: float
    enabled: bool = True

    def __post_init__(self):
        if not isinstance(self.sensitivity, Sensitivity):
            object.__setattr__(self, 'sensitivity', Sensitivity(float(self.sensitivity)))
        if self.compute_cost < 0:
            raise DomainError(f"exit {self.stage_id} compute cost must be non-negative")


@dataclass(frozen=True, eq=False)
class ServerBinding:
    """How escalated samples reach the server and what happens when they can't"""
    predictor: StagePredictor
    communication_cost: float = 100.0
    timeout_s: float = 1.0
    fallback: FallbackPolicy = FallbackPolicy.USE_LOCAL_PREDICTION

    def __post_init__(self):
        if self.communication_cost < 0:
            raise DomainError("communication cost must be non-negative")
        if not self.timeout_s > 0:
            raise DomainError("server timeout must be positive")


@dataclass(frozen=True, eq=False)
class CascadePolicy:
    exit1: ExitStage
    exit2: ExitStage
    server: ServerBinding

    def __post_init__(self):
        if (self.exit1.stage_id, self.exit2.stage_id) != (1, 2):
            raise ConfigurationError(
                f"exit stages must be ordered (1, 2), got ({self.exit1.stage_id}, {self.exit2.stage_id})"
            )
        if not self.exit2.enabled:
            raise ConfigurationError("exit 2 cannot be disabled")

    @property
    def sensitivities(self) -> Tuple[float, float]:
        return self.exit1.sensitivity.value, self.exit2.sensitivity.value

    def with_sensitivities(self, s1: Union[Sensitivity, float, None] = None,
                           s2: Union[Sensitivity, float, None] = None) -> "CascadePolicy":
        exit1 = self.exit1 if s1 is None else replace(self.exit1, sensitivity=_sensitivity(s1))
        exit2 = self.exit2 if s2 is None else replace(self.exit2, sensitivity=_sensitivity(s2))
        return replace(self, exit1=exit1, exit2=exit2)

    def without_exit1(self) -> "CascadePolicy":
        """Two-stage variant: samples enter at exit 2"""
        return replace(self, exit1=replace(self.exit1, enabled=False))

    def with_server(self, server: ServerBinding) -> "CascadePolicy":
        return replace(self, server=server)


def _sensitivity(value: Union[Sensitivity, float]) -> Sensitivity:
    return value if isinstance(value, Sensitivity) else Sensitivity(float(value))


def stage_costs(device: Optional[str] = None) -> Tuple[float, float]:
    """
    Per-stage compute costs for a device profile: the exit-1 cost and the
    increment from exit 1 to exit 2, so a sample reaching exit 2 pays the
    profile's end-to-end exit-2 figure.
    """
    cfg = get_config().cost
    device = device or cfg.device
    profiles = cfg.profiles if cfg.profiles else DEVICE_PROFILES
    if device not in profiles:
        raise ConfigurationError(f"unknown device profile {device!r}; known: {sorted(profiles)}")
    exit1, exit2_total = profiles[device]
    if exit2_total < exit1:
        raise ConfigurationError(f"device {device!r}: exit-2 cost {exit2_total} below exit-1 cost {exit1}")
    return exit1, exit2_total - exit1


def build_policy(
    exit1_predictor: StagePredictor,
    exit2_predictor: StagePredictor,
    server_predictor: StagePredictor,
    du1: CertaintySource,
    du2: CertaintySource,
    s1: float = 0.5,
    s2: float = 0.5,
    device: Optional[str] = None,
    communication_cost: Optional[float] = None,
    timeout_s: Optional[float] = None,
    fallback: FallbackPolicy = FallbackPolicy.USE_LOCAL_PREDICTION,
) -> CascadePolicy:
    """Assemble a policy with costs and timeout taken from settings unless given"""
    cfg = get_config()
    c1, c2 = stage_costs(device)
    return CascadePolicy(
        exit1=ExitStage(1, exit1_predictor, du1, _sensitivity(s1), c1),
        exit2=ExitStage(2, exit2_predictor, du2, _sensitivity(s2), c2),
        server=ServerBinding(
            predictor=server_predictor,
            communication_cost=cfg.cost.communication_cost if communication_cost is None else communication_cost,
            timeout_s=cfg.service.timeout_ms / 1000.0 if timeout_s is None else timeout_s,
            fallback=fallback,
        ),
    )


def apply_mode(policy: CascadePolicy, mode: Union[OperatingMode, str]) -> CascadePolicy:
    """
    Static deployment presets: client-only never offloads (s2 = 0),
    exit1-only finalizes everything at exit 1 (s1 = 0).
    """
    mode = OperatingMode(mode)
    if mode is OperatingMode.CLIENT_ONLY:
        return policy.with_sensitivities(s2=0.0)
    if mode is OperatingMode.EXIT1_ONLY:
        if not policy.exit1.enabled:
            raise ConfigurationError("exit1-only mode needs exit 1 enabled")
        return policy.with_sensitivities(s1=0.0)
    return policy


def standalone_accuracy(predictor: StagePredictor, data: Union[LabeledDataset, Iterable]) -> float:
    """Accuracy of one predictor on its own"""
    samples = as_samples(data)
    if not samples:
        raise DomainError("accuracy of an empty dataset is undefined")
    hits = sum(int(F.argmax(predictor.probs(s))) == s.label for s in samples)
    return hits / len(samples)
