"""
Greedy hill climbing over network morphisms with a distillation-driven
search loss.

Every step draws `candidates` morphed copies of the incumbent, trains each
briefly on the teacher's softened labels, scores it by softened validation
loss, and keeps the best one only if it beats the incumbent.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from tqdm import tqdm

from core.exceptions import ConfigurationError, DataError, DomainError, TrainingError
from core.types import LabeledDataset, LossKind
from morphnas.morphisms import MorphOp, apply_morph, random_morph
from nn import functional as F
from nn.model import MlpModel, forward, reinitialize
from nn.trainer import TrainConfig, train

logger = logging.getLogger(__name__)


@dataclass
class SearchConfig:
    """Hill-climbing budget and distillation settings"""
    steps: int = 5
    candidates: int = 8
    epochs_per_candidate: int = 5
    temperature: float = 20.0
    teacher: Optional[MlpModel] = None
    seed: int = 0
    loss_kind: LossKind = LossKind.DISTILLED
    batch_size: int = 32
    learning_rate: float = 0.05
    max_morphs: int = 2
    max_width: int = 64
    max_hidden_layers: int = 8
    workers: int = 1
    show_progress: bool = False

    def validate(self) -> bool:
        if self.steps < 0:
            raise ConfigurationError(f"steps must be >= 0, got {self.steps}")
        if self.candidates < 1:
            raise ConfigurationError(f"candidates must be >= 1, got {self.candidates}")
        if not self.temperature > 0:
            raise ConfigurationError(f"temperature must be positive, got {self.temperature}")
        if self.max_morphs < 1 or self.workers < 1:
            raise ConfigurationError("max_morphs and workers must be >= 1")
        if self.loss_kind is LossKind.DISTILLED and self.teacher is None:
            raise ConfigurationError("distilled search requires a teacher model")
        return True


@dataclass
class CandidateRecord:
    step: int
    index: int
    ops: List[str]
    loss: float
    accepted: bool
    architecture: str
    parameter_count: int


@dataclass
class SearchTrace:
    """Per-candidate records and the incumbent loss after every step"""
    initial_loss: Optional[float] = None
    candidates: List[CandidateRecord] = field(default_factory=list)
    best_so_far: List[float] = field(default_factory=list)

    def step_records(self, step: int) -> List[CandidateRecord]:
        return [c for c in self.candidates if c.step == step]


def softened_loss(model: MlpModel, teacher: MlpModel, data: LabeledDataset, temperature: float) -> float:
    """Softened cross-entropy between teacher and model outputs over a dataset"""
    return F.distill_loss(forward(model, data.x), forward(teacher, data.x), temperature)


def search_loss(model: MlpModel, data: LabeledDataset, cfg: SearchConfig) -> float:
    if cfg.loss_kind is LossKind.DISTILLED:
        return softened_loss(model, cfg.teacher, data, cfg.temperature)
    return F.hard_label_loss(forward(model, data.x), data.y)


def _train_config(cfg: SearchConfig, seed: int) -> TrainConfig:
    return TrainConfig(
        epochs=cfg.epochs_per_candidate,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        seed=seed,
        loss_kind=cfg.loss_kind,
        temperature=cfg.temperature if cfg.loss_kind is LossKind.DISTILLED else 1.0,
        teacher=cfg.teacher if cfg.loss_kind is LossKind.DISTILLED else None,
    )


def _candidate(incumbent: MlpModel, train_data: LabeledDataset, validation: LabeledDataset,
               cfg: SearchConfig, step: int, index: int) -> Tuple[MlpModel, List[MorphOp], float]:
    rng = np.random.default_rng([cfg.seed, step, index])
    model = incumbent
    ops: List[MorphOp] = []
    for _ in range(int(rng.integers(1, cfg.max_morphs + 1))):
        op = random_morph(model, rng, max_width=cfg.max_width, max_hidden_layers=cfg.max_hidden_layers)
        model = apply_morph(model, op)
        ops.append(op)
    train_seed = int(rng.integers(0, 2**31 - 1))
    try:
        model, _ = train(model, train_data, _train_config(cfg, train_seed))
    except TrainingError as e:
        described = ", ".join(op.describe() for op in ops)
        raise TrainingError(f"candidate {index} of step {step} [{described}]: {e}") from e
    return model, ops, search_loss(model, validation, cfg)


def hill_climb(
    seed_model: MlpModel,
    train_data: LabeledDataset,
    validation: LabeledDataset,
    cfg: SearchConfig,
) -> Tuple[MlpModel, SearchTrace]:
    """Greedy morphism search; a pure function of its inputs and cfg.seed"""
    cfg.validate()
    trace = SearchTrace()
    if cfg.steps == 0:
        return seed_model, trace
    if set(train_data.ids) & set(validation.ids):
        raise DomainError("train and validation splits must be disjoint")

    incumbent = seed_model
    incumbent_loss = search_loss(incumbent, validation, cfg)
    trace.initial_loss = incumbent_loss
    logger.info(
        f"Hill climbing from {incumbent.describe()} ({cfg.loss_kind.value} validation loss {incumbent_loss:.5f})"
    )

    for step in tqdm(range(1, cfg.steps + 1), desc="search", disable=not cfg.show_progress):
        if cfg.workers > 1:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                results = list(pool.map(
                    lambda i: _candidate(incumbent, train_data, validation, cfg, step, i),
                    range(cfg.candidates),
                ))
        else:
            results = [_candidate(incumbent, train_data, validation, cfg, step, i) for i in range(cfg.candidates)]

        losses = [loss for _, _, loss in results]
        best_index = int(np.argmin(losses))
        accepted = losses[best_index] < incumbent_loss
        for index, (model, ops, loss) in enumerate(results):
            trace.candidates.append(CandidateRecord(
                step=step,
                index=index,
                ops=[op.describe() for op in ops],
                loss=float(loss),
                accepted=accepted and index == best_index,
                architecture=model.describe(),
                parameter_count=parameter_count(model),
            ))
        if accepted:
            incumbent, _, incumbent_loss = results[best_index]
            logger.info(f"step {step}: accepted candidate {best_index} -> {incumbent.describe()} "
                        f"(loss {incumbent_loss:.5f})")
        else:
            logger.info(f"step {step}: no candidate beat {incumbent_loss:.5f}")
        trace.best_so_far.append(float(incumbent_loss))

    return incumbent, trace


def retrain_from_scratch(model: MlpModel, train_data: LabeledDataset, cfg: TrainConfig) -> MlpModel:
    """Re-initialise the winning architecture and train it on hard labels"""
    if cfg.loss_kind is not LossKind.HARD:
        raise ConfigurationError("the final retraining uses hard labels")
    trained, _ = train(reinitialize(model, cfg.seed), train_data, cfg)
    return trained


def parameter_count(model: MlpModel) -> int:
    return model.parameter_count


# trace I/O

def save_trace(trace: SearchTrace, path: Union[str, Path]) -> Path:
    """One JSON line per candidate"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', encoding='utf-8') as handle:
        for record in trace.candidates:
            handle.write(json.dumps(asdict(record)) + '\n')
    logger.info(f"Saved search trace ({len(trace.candidates)} candidates) to {path}")
    return path


def load_trace(path: Union[str, Path]) -> List[Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"search trace not found: {path}")
    records = []
    with path.open('r', encoding='utf-8') as handle:
        for line_no, text in enumerate(handle, 1):
            if text.strip():
                try:
                    records.append(json.loads(text))
                except json.JSONDecodeError as e:
                    raise DataError(f"malformed trace record ({e.msg})", line=line_no) from e
    return records
