"""
Two-exit client models: a backbone whose full path is exit 2, plus a linear
exit-1 head reading the hidden representation at an intermediate node.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from core.exceptions import DataError, DomainError
from core.types import LabeledDataset
from nn import functional as F
from nn.model import MlpModel, forward, forward_hidden, init_mlp, model_from_dict, model_to_dict
from nn.trainer import TrainConfig, train

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TwoExitModel:
    """Shared prefix up to node `position`, exit-1 head on it, exit-2 = full backbone"""
    backbone: MlpModel
    position: int
    head: MlpModel

    def __post_init__(self):
        if self.position not in self.backbone.hidden_nodes:
            raise DomainError(f"exit position {self.position} is not a hidden node of the backbone")
        if self.head.widths != (self.backbone.widths[self.position], self.backbone.n_classes):
            raise DomainError(f"exit head widths {self.head.widths} do not fit position {self.position}")

    @property
    def input_dim(self) -> int:
        return self.backbone.input_dim

    @property
    def n_classes(self) -> int:
        return self.backbone.n_classes

    @property
    def parameter_count(self) -> int:
        return self.backbone.parameter_count + self.head.parameter_count

    def hidden(self, x) -> np.ndarray:
        return forward_hidden(self.backbone, x, self.position)

    def exit1_logits(self, x) -> np.ndarray:
        return forward(self.head, self.hidden(x))

    def exit2_logits(self, x) -> np.ndarray:
        return forward(self.backbone, x)

    def exit_probs(self, stage: int, x) -> np.ndarray:
        logits = self.exit1_logits(x) if stage == 1 else self.exit2_logits(x)
        return F.softmax_t(logits, 1.0)


def default_exit_position(model: MlpModel) -> int:
    """The middle of the network"""
    return model.depth // 2


def attach_exit(model: MlpModel, position: Optional[int] = None, seed: int = 0) -> TwoExitModel:
    """Attach a fresh linear classifier at hidden node `position` (default: the middle)"""
    if position is None:
        position = default_exit_position(model)
    if position not in model.hidden_nodes:
        raise DomainError(
            f"exit position {position} must lie strictly inside the network (hidden nodes {model.hidden_nodes})"
        )
    head = init_mlp([model.widths[position], model.n_classes], seed)
    logger.info(f"Attached exit head at node {position} of {model.describe()}")
    return TwoExitModel(backbone=model, position=position, head=head)


def train_exits(
    two_exit: TwoExitModel,
    data: LabeledDataset,
    cfg: TrainConfig,
    fine_tune_exit2: bool = False,
) -> TwoExitModel:
    """
    Train the exit-1 head on the frozen prefix. With fine_tune_exit2 the
    backbone is first trained further on hard labels, then the head.
    """
    cfg.validate()
    if cfg.epochs == 0:
        return two_exit
    backbone = two_exit.backbone
    if fine_tune_exit2:
        backbone, _ = train(backbone, data, cfg)
    features = LabeledDataset(
        x=forward_hidden(backbone, data.x, two_exit.position), y=data.y, ids=data.ids
    )
    head, history = train(two_exit.head, features, cfg)
    logger.info(f"Exit-1 head trained (final loss {history[-1]:.4f})")
    return TwoExitModel(backbone=backbone, position=two_exit.position, head=head)


def exit_accuracy(two_exit: TwoExitModel, stage: int, data: LabeledDataset) -> float:
    if len(data) == 0:
        raise DomainError("accuracy of an empty dataset is undefined")
    probs = two_exit.exit_probs(stage, data.x)
    return float(np.mean(F.argmax(probs) == data.y))


def save_two_exit(two_exit: TwoExitModel, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        'kind': 'two-exit',
        'position': two_exit.position,
        'backbone': model_to_dict(two_exit.backbone),
        'head': model_to_dict(two_exit.head),
    }
    path.write_text(json.dumps(doc), encoding='utf-8')
    logger.info(f"Saved two-exit model to {path}")
    return path


def load_two_exit(path: Union[str, Path]) -> TwoExitModel:
    path = Path(path)
    if not path.exists():
        raise DataError(f"two-exit model artifact not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: not a JSON document ({e})") from e
    if doc.get('kind') != 'two-exit':
        raise DataError(f"{path} is not a two-exit model")
    return TwoExitModel(
        backbone=model_from_dict(doc['backbone']),
        position=int(doc['position']),
        head=model_from_dict(doc['head']),
    )
