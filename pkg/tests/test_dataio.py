"""
Synthetic data, splits, datasets and logit replays.
"""

import json

import numpy as np
import pytest

from core.exceptions import DataError, DomainError
from core.types import LabeledDataset
from dataio.replay import (
    ReplayRow,
    build_replay,
    iter_replay,
    load_dataset,
    load_replay,
    save_dataset,
    save_replay,
)
from dataio.splits import split
from dataio.synthetic import SyntheticSpec, class_counts, gen_synthetic, gen_two_moons


def _write_lines(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


def test_split_sizes():
    data = gen_synthetic(SyntheticSpec((50, 50), 3, 4.0, seed=0))
    train, validation, test = split(data, (0.8, 0.1, 0.1), seed=0)
    assert (len(train), len(validation), len(test)) == (80, 10, 10)
    ids = train.ids + validation.ids + test.ids
    assert sorted(ids) == sorted(data.ids)


def test_split_is_seeded():
    data = gen_two_moons(30, 0.1, seed=0)
    a = split(data, seed=4)
    b = split(data, seed=4)
    c = split(data, seed=5)
    assert a[2].ids == b[2].ids
    assert a[2].ids != c[2].ids


def test_split_rejects_empty_part():
    data = gen_two_moons(2, 0.1, seed=0)
    with pytest.raises(DomainError):
        split(data, (0.8, 0.1, 0.1))
    with pytest.raises(DomainError):
        split(data, (0.5, 0.2, 0.2))


def test_synthetic_is_deterministic_and_imbalanced():
    spec = SyntheticSpec((30, 10, 5), 4, 3.0, seed=2)
    a, b = gen_synthetic(spec), gen_synthetic(spec)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
    assert class_counts(a.y, 3).tolist() == [30, 10, 5]


def test_synthetic_separation_controls_difficulty():
    def centroid_gap(separation):
        data = gen_synthetic(SyntheticSpec((400, 400), 2, separation, seed=0))
        return np.linalg.norm(data.x[data.y == 0].mean(axis=0) - data.x[data.y == 1].mean(axis=0))

    assert centroid_gap(6.0) == pytest.approx(6.0, rel=0.1)
    assert centroid_gap(1.0) < centroid_gap(6.0)


def test_synthetic_spec_validation():
    with pytest.raises(DomainError):
        gen_synthetic(SyntheticSpec((10,), 2, 1.0, seed=0))
    with pytest.raises(DomainError):
        gen_synthetic(SyntheticSpec((10, 10), 2, 0.0, seed=0))


def test_two_moons_shape():
    data = gen_two_moons(20, 0.2, seed=1)
    assert data.x.shape == (40, 2)
    assert class_counts(data.y, 2).tolist() == [20, 20]
    assert data.ids[0] == "m000000"


def test_labeled_dataset_validation():
    with pytest.raises(DomainError):
        LabeledDataset(x=np.zeros((3, 2)), y=np.zeros(2))
    with pytest.raises(DomainError):
        LabeledDataset(x=np.zeros((2, 2)), y=np.zeros(2), ids=["a"])


def test_dataset_file(tmp_path):
    data = gen_two_moons(10, 0.2, seed=0)
    loaded = load_dataset(save_dataset(data, tmp_path / "d.jsonl"))
    assert loaded.ids == data.ids
    assert np.array_equal(loaded.x, data.x) and np.array_equal(loaded.y, data.y)


def test_replay_from_models(two_exit, teacher, moons, tmp_path):
    rows = build_replay(two_exit, teacher, moons[2])
    assert len(rows) == len(moons[2])
    path = save_replay(rows, tmp_path / "replay.jsonl")
    assert load_replay(path) == rows


def test_replay_without_server_column(tmp_path):
    path = _write_lines(tmp_path / "r.jsonl", [{"id": "a", "label": 1, "exit1": [0.1, 0.2], "exit2": [0.3, 0.1]}])
    (row,) = load_replay(path)
    assert row.server is None
    with pytest.raises(DataError):
        row.column("server")


@pytest.mark.parametrize("record", [
    {"label": 0, "exit1": [0.1, 0.2], "exit2": [0.3, 0.1]},
    {"id": "a", "label": 0, "exit2": [0.3, 0.1]},
    {"id": "a", "label": 0, "exit1": [0.1], "exit2": [0.3]},
    {"id": "a", "label": 0, "exit1": [0.1, 0.2], "exit2": [0.3, 0.1, 0.0]},
    {"id": "a", "label": 2, "exit1": [0.1, 0.2], "exit2": [0.3, 0.1]},
    {"id": "a", "label": 0, "exit1": ["x", 0.2], "exit2": [0.3, 0.1]},
    {"id": "a", "label": True, "exit1": [0.1, 0.2], "exit2": [0.3, 0.1]},
])
def test_malformed_replay_rows(tmp_path, record):
    good = {"id": "z", "label": 0, "exit1": [0.1, 0.2], "exit2": [0.3, 0.1]}
    path = _write_lines(tmp_path / "r.jsonl", [good, record])
    with pytest.raises(DataError) as excinfo:
        load_replay(path)
    assert excinfo.value.line == 2


def test_replay_class_count_consistent_across_rows(tmp_path):
    path = _write_lines(tmp_path / "r.jsonl", [
        {"id": "a", "label": 0, "exit1": [0.1, 0.2], "exit2": [0.3, 0.1]},
        {"id": "b", "label": 0, "exit1": [0.1, 0.2, 0.3], "exit2": [0.3, 0.1, 0.0]},
    ])
    with pytest.raises(DataError):
        list(iter_replay(path))


def test_replay_bad_json(tmp_path):
    path = tmp_path / "r.jsonl"
    path.write_text("{oops\n", encoding="utf-8")
    with pytest.raises(DataError) as excinfo:
        load_replay(path)
    assert excinfo.value.line == 1


def test_replay_row_equality():
    a = ReplayRow("a", 0, np.array([1.0, 2.0]), np.array([0.0, 1.0]))
    b = ReplayRow("a", 0, np.array([1.0, 2.0]), np.array([0.0, 1.0]), np.array([3.0, 1.0]))
    assert a != b
