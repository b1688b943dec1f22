"""
Settings, run configuration, logging and metrics setup.
"""

import json
import logging

import pytest

from config.run_config import RunConfig, apply_overrides, build_run_config, load_run_config
from config.settings import DEVICE_PROFILES, Config, CostConfig, get_config, parse_address
from core.exceptions import (
    CascadeSplitError,
    ConfigurationError,
    DataError,
    DomainError,
    NetworkError,
    ProtocolError,
    RemoteTimeoutError,
    TrainingError,
)
from utils.logger_setup import setup_logging
from utils.prometheus_exporter import get_metrics, get_metrics_summary, track_offload, track_route


# settings

def test_device_profiles():
    assert DEVICE_PROFILES['samsung-s10'] == (38.0, 74.0)
    assert CostConfig(device='iphone-11').exit_costs() == (34.0, 68.0)
    with pytest.raises(ConfigurationError):
        CostConfig(device='toaster').exit_costs()


@pytest.mark.parametrize("address, expected", [
    ("127.0.0.1:7461", ("127.0.0.1", 7461)),
    ("localhost:0", ("localhost", 0)),
])
def test_parse_address(address, expected):
    assert parse_address(address) == expected


@pytest.mark.parametrize("address", ["7461", "host:", ":80", "host:port"])
def test_parse_address_rejects(address):
    with pytest.raises(ConfigurationError):
        parse_address(address)


def test_global_config_validates():
    config = get_config()
    assert isinstance(config, Config)
    assert config.validate()
    assert 'device' in config.status()


# exceptions

@pytest.mark.parametrize("error, status, category", [
    (ConfigurationError("x"), 2, "usage"),
    (DomainError("x"), 3, "domain"),
    (DataError("x"), 3, "data"),
    (TrainingError("x"), 4, "training"),
    (NetworkError("x"), 5, "network"),
    (RemoteTimeoutError("x"), 5, "network-timeout"),
    (ProtocolError("x"), 5, "network-protocol"),
])
def test_exit_status_and_category(error, status, category):
    assert isinstance(error, CascadeSplitError)
    assert error.exit_status == status
    assert error.category == category


def test_data_error_carries_line():
    error = DataError("bad row", line=7)
    assert error.line == 7
    assert str(error) == "line 7: bad row"


# run configuration

def test_defaults():
    cfg = RunConfig()
    assert cfg.seed == 0
    assert cfg.client.hidden == [3, 3]
    assert cfg.teacher.hidden == [64, 64]
    assert cfg.cascade.s1_grid == [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
    assert cfg.search.temperature == 20.0
    assert cfg.cascade.communication_cost == 100.0


def test_unknown_key_rejected():
    with pytest.raises(ConfigurationError):
        build_run_config({'cascade': {'sensitivity': 0.4}})
    with pytest.raises(ConfigurationError):
        build_run_config({'extras': {}})


def test_sensitivity_range_checked():
    with pytest.raises(ConfigurationError):
        build_run_config({}, ["cascade.s1=1.5"])


def test_overrides():
    cfg = build_run_config({'cascade': {'s1': 0.2}}, ["cascade.s1=0.3", ("seed", 4), "cascade.mode=client-only"])
    assert cfg.cascade.s1 == 0.3
    assert cfg.seed == 4
    assert cfg.cascade.mode == 'client-only'


def test_override_syntax():
    with pytest.raises(ConfigurationError):
        apply_overrides({}, ["cascade.s1"])
    with pytest.raises(ConfigurationError):
        apply_overrides({'seed': 1}, ["seed.value=2"])


def test_load_from_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({'seed': 3, 'teacher': {'epochs': 5}}), encoding="utf-8")
    cfg = load_run_config(path, ["teacher.hidden=[8]"])
    assert cfg.seed == 3 and cfg.teacher.epochs == 5 and cfg.teacher.hidden == [8]


def test_load_errors(tmp_path):
    with pytest.raises(ConfigurationError):
        load_run_config(tmp_path / "absent.json")
    path = tmp_path / "bad.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigurationError):
        load_run_config(path)
    path.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ConfigurationError):
        load_run_config(path)


def test_section_digest_tracks_named_sections():
    base = RunConfig()
    changed_cascade = build_run_config({}, ["cascade.s1=0.9"])
    changed_seed = build_run_config({}, [("seed", 1)])
    assert base.section_digest('data') == changed_cascade.section_digest('data')
    assert base.section_digest('data', 'cascade') != changed_cascade.section_digest('data', 'cascade')
    assert base.section_digest('data') != changed_seed.section_digest('data')


# logging and metrics

def test_setup_logging_without_file():
    setup_logging("DEBUG", log_to_file=False)
    root = logging.getLogger()
    assert root.level == logging.DEBUG
    assert len(root.handlers) == 1
    setup_logging("INFO", log_to_file=False)


def test_metrics_registry():
    track_route("exit1")
    track_offload("ok")
    text = get_metrics()
    assert b"cascadesplit_routed_samples_total" in text
    assert b"cascadesplit_offloads_total" in text
    assert "cascadesplit_routed_samples" in get_metrics_summary()
