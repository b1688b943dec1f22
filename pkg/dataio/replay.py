"""
Line-delimited JSON files: logit replays and labeled datasets.

Replay rows carry per-sample logits of exit 1, exit 2 and (optionally) the
server so routing and accounting can run on externally produced outputs.
Floats are written with their shortest exact repr, so round trips are lossless.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, List, Optional, Union

import numpy as np

from core.exceptions import DataError
from core.types import LabeledDataset

logger = logging.getLogger(__name__)

REPLAY_COLUMNS = ('exit1', 'exit2', 'server')


@dataclass(frozen=True, eq=False)
class ReplayRow:
    """Logits of every stage for one sample"""
    sample_id: str
    label: int
    exit1: np.ndarray
    exit2: np.ndarray
    server: Optional[np.ndarray] = None

    @property
    def n_classes(self) -> int:
        return int(self.exit1.shape[0])

    def column(self, name: str) -> np.ndarray:
        if name not in REPLAY_COLUMNS:
            raise DataError(f"unknown replay column {name!r}")
        values = getattr(self, name)
        if values is None:
            raise DataError(f"replay row {self.sample_id!r} has no {name!r} logits")
        return values

    def __eq__(self, other) -> bool:
        if not isinstance(other, ReplayRow):
            return NotImplemented
        same_server = (
            (self.server is None and other.server is None)
            or (self.server is not None and other.server is not None
                and np.array_equal(self.server, other.server))
        )
        return (
            self.sample_id == other.sample_id and self.label == other.label
            and np.array_equal(self.exit1, other.exit1)
            and np.array_equal(self.exit2, other.exit2)
            and same_server
        )

    def to_record(self) -> dict:
        record = {
            'id': self.sample_id,
            'label': int(self.label),
            'exit1': self.exit1.tolist(),
            'exit2': self.exit2.tolist(),
        }
        if self.server is not None:
            record['server'] = self.server.tolist()
        return record


def _logits(record: dict, key: str, line: int, required: bool = True) -> Optional[np.ndarray]:
    if key not in record or record[key] is None:
        if required:
            raise DataError(f"missing {key!r} logits", line=line)
        return None
    try:
        values = np.array(record[key], dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise DataError(f"{key!r} is not an array of reals ({e})", line=line) from e
    if values.ndim != 1 or values.shape[0] < 2 or not np.all(np.isfinite(values)):
        raise DataError(f"{key!r} must be a finite vector with at least 2 entries", line=line)
    return values


def row_from_record(record: dict, line: int) -> ReplayRow:
    if not isinstance(record, dict):
        raise DataError("replay row must be a JSON object", line=line)
    if 'id' not in record or 'label' not in record:
        raise DataError("replay row needs 'id' and 'label'", line=line)
    exit1 = _logits(record, 'exit1', line)
    exit2 = _logits(record, 'exit2', line)
    server = _logits(record, 'server', line, required=False)
    lengths = {v.shape[0] for v in (exit1, exit2, server) if v is not None}
    if len(lengths) != 1:
        raise DataError(f"logit vectors disagree on the class count: {sorted(lengths)}", line=line)
    label = record['label']
    if not isinstance(label, int) or isinstance(label, bool) or not 0 <= label < exit1.shape[0]:
        raise DataError(f"label {label!r} outside [0, {exit1.shape[0]})", line=line)
    return ReplayRow(str(record['id']), label, exit1, exit2, server)


def iter_replay(path: Union[str, Path]) -> Iterator[ReplayRow]:
    """Stream replay rows, validating each line and the class count across rows"""
    path = Path(path)
    if not path.exists():
        raise DataError(f"replay file not found: {path}")
    n_classes = None
    with path.open('r', encoding='utf-8') as handle:
        for line_no, text in enumerate(handle, 1):
            if not text.strip():
                continue
            try:
                record = json.loads(text)
            except json.JSONDecodeError as e:
                raise DataError(f"malformed JSON ({e.msg})", line=line_no) from e
            row = row_from_record(record, line_no)
            if n_classes is None:
                n_classes = row.n_classes
            elif row.n_classes != n_classes:
                raise DataError(
                    f"row has {row.n_classes} classes but earlier rows have {n_classes}", line=line_no
                )
            yield row


def load_replay(path: Union[str, Path]) -> List[ReplayRow]:
    rows = list(iter_replay(path))
    logger.info(f"Loaded {len(rows)} replay rows from {path}")
    return rows


def save_replay(rows: Iterable[ReplayRow], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open('w', encoding='utf-8') as handle:
        for row in rows:
            handle.write(json.dumps(row.to_record()) + '\n')
            count += 1
    logger.info(f"Saved {count} replay rows to {path}")
    return path


def build_replay(two_exit, server_model, dataset: LabeledDataset) -> List[ReplayRow]:
    """Replay rows from a two-exit client and an optional server model"""
    from nn.model import forward

    exit1 = two_exit.exit1_logits(dataset.x)
    exit2 = two_exit.exit2_logits(dataset.x)
    server = forward(server_model, dataset.x) if server_model is not None else None
    return [
        ReplayRow(
            sample_id=dataset.ids[i],
            label=int(dataset.y[i]),
            exit1=exit1[i],
            exit2=exit2[i],
            server=None if server is None else server[i],
        )
        for i in range(len(dataset))
    ]


def save_dataset(dataset: LabeledDataset, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', encoding='utf-8') as handle:
        for sample_id, x, y in zip(dataset.ids, dataset.x, dataset.y):
            handle.write(json.dumps({'id': sample_id, 'x': x.tolist(), 'label': int(y)}) + '\n')
    logger.info(f"Saved {len(dataset)} samples to {path}")
    return path


def load_dataset(path: Union[str, Path]) -> LabeledDataset:
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    ids, xs, ys = [], [], []
    with path.open('r', encoding='utf-8') as handle:
        for line_no, text in enumerate(handle, 1):
            if not text.strip():
                continue
            try:
                record = json.loads(text)
                x = np.array(record['x'], dtype=np.float64)
                label = int(record['label'])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise DataError(f"malformed dataset row ({e})", line=line_no) from e
            if xs and x.shape != xs[0].shape:
                raise DataError(f"feature width {x.shape} differs from {xs[0].shape}", line=line_no)
            ids.append(str(record.get('id', line_no - 1)))
            xs.append(x)
            ys.append(label)
    if not xs:
        raise DataError(f"dataset file is empty: {path}")
    return LabeledDataset(x=np.stack(xs), y=np.array(ys), ids=ids)
