"""
Cascade routing, accounting, sweeps and plot data.
"""

from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from core.exceptions import ConfigurationError, DataError, DomainError
from core.types import Destination, FallbackPolicy, OperatingMode
from cascade.engine import (
    COUNT_COLUMNS,
    DEFAULT_GRID,
    SWEEP_COLUMNS,
    RoutingTally,
    evaluate,
    overall_accuracy,
    route_sample,
    sweep,
    sweep_two_stage,
)
from cascade.policy import (
    CascadePolicy,
    CascadeSample,
    ExitStage,
    ModelExit,
    ModelServer,
    ReplayExit,
    ReplayServer,
    apply_mode,
    as_samples,
    build_policy,
    stage_costs,
    standalone_accuracy,
)
from cascade.report import (
    accuracy_grid,
    counts_csv_path,
    exit1_count_grid,
    load_counts_csv,
    load_sweep_csv,
    local_count_grid,
    pareto_frontier,
    write_report,
)
from dataio.replay import build_replay

from tests.stubs import ConstantDU, DownServer, FixedProbs, MaxProbDU, TableDU

GRID = [0.0, 0.25, 0.5, 0.75, 1.0]


def _sample(sample_id, label=0):
    return CascadeSample(sample_id=sample_id, label=label)


def _constant_policy(c1, c2, server=None, fallback=FallbackPolicy.USE_LOCAL_PREDICTION, s1=0.5, s2=0.5):
    probs = FixedProbs({}, default=[0.7, 0.3])
    return build_policy(
        probs, probs, server or FixedProbs({}, default=[0.1, 0.9]),
        ConstantDU(c1), ConstantDU(c2),
        s1=s1, s2=s2, device="samsung-s10", communication_cost=100.0, timeout_s=1.0, fallback=fallback,
    )


@pytest.fixture
def ten_samples():
    """3 finalized at exit 1 (2 right), 4 at exit 2 (all right), 3 at the server (all right)"""
    exit1, exit2, server = {}, {}, {}
    samples = []
    for i in range(3):
        sid = f"a{i}"
        samples.append(_sample(sid, label=1 if i == 2 else 0))
        exit1[sid] = [0.95, 0.05]
    for i in range(4):
        sid = f"b{i}"
        samples.append(_sample(sid))
        exit1[sid] = [0.6, 0.4]
        exit2[sid] = [0.85, 0.15]
    for i in range(3):
        sid = f"c{i}"
        samples.append(_sample(sid, label=1))
        exit1[sid] = [0.6, 0.4]
        exit2[sid] = [0.6, 0.4]
        server[sid] = [0.2, 0.8]
    policy = build_policy(
        FixedProbs(exit1), FixedProbs(exit2), FixedProbs(server),
        TableDU({0.95: 0.9, 0.6: 0.1}), TableDU({0.85: 0.9, 0.6: 0.1}),
        s1=0.5, s2=0.5, device="samsung-s10", communication_cost=100.0,
    )
    return policy, samples


@pytest.fixture
def random_setup():
    """200 samples with random three-class outputs and max-probability certainties"""
    rng = np.random.default_rng(7)
    samples = [_sample(f"r{i}", label=int(rng.integers(0, 3))) for i in range(200)]
    tables = [{s.sample_id: rng.dirichlet(np.ones(3)) for s in samples} for _ in range(3)]
    policy = build_policy(
        FixedProbs(tables[0]), FixedProbs(tables[1]), FixedProbs(tables[2]),
        MaxProbDU(), MaxProbDU(), device="samsung-s10", communication_cost=100.0,
    )
    return policy, samples, tables


def _oracle(samples, tables, s1, s2):
    """Counts by direct enumeration of the routing rule"""
    tn1 = tn2 = sp = 0
    for sample in samples:
        p1, p2, ps = (t[sample.sample_id] for t in tables)
        if s1 < 1.0 and p1.max() >= s1:
            tn1 += int(np.argmax(p1) == sample.label)
        elif s2 < 1.0 and p2.max() >= s2:
            tn2 += int(np.argmax(p2) == sample.label)
        else:
            sp += int(np.argmax(ps) == sample.label)
    return tn1, tn2, sp


# costs

def test_stage_costs():
    assert stage_costs("samsung-s10") == (38.0, 36.0)
    assert stage_costs("iphone-11") == (34.0, 34.0)
    with pytest.raises(ConfigurationError):
        stage_costs("pager")


@pytest.mark.parametrize("c1, c2, destination, cost", [
    (0.9, 0.9, Destination.EXIT1, 38.0),
    (0.1, 0.9, Destination.EXIT2, 74.0),
    (0.1, 0.1, Destination.SERVER, 174.0),
])
def test_cost_per_destination(c1, c2, destination, cost):
    outcome = route_sample(_constant_policy(c1, c2), _sample("x"))
    assert outcome.destination is destination
    assert outcome.cost == cost


def test_route_records_certainties():
    outcome = route_sample(_constant_policy(0.1, 0.3), _sample("x"))
    assert outcome.certainties == {1: 0.1, 2: 0.3}
    assert outcome.predicted == 1


# accuracy

def test_overall_accuracy_example(ten_samples):
    policy, samples = ten_samples
    tally = evaluate(policy, samples)
    assert (tally.tn1, tally.tn2, tally.sp, tally.st) == (2, 4, 3, 10)
    assert tally.accuracy == pytest.approx(0.9)
    assert tally.offload_frac == pytest.approx(0.3)
    assert tally.exit1_frac == pytest.approx(0.3)
    assert tally.mean_cost == pytest.approx((3 * 38 + 4 * 74 + 3 * 174) / 10)


def test_overall_accuracy_checks_counts():
    assert overall_accuracy(2, 4, 3, 10) == pytest.approx(0.9)
    with pytest.raises(DomainError):
        overall_accuracy(0, 0, 0, 0)
    with pytest.raises(DomainError):
        overall_accuracy(5, 5, 5, 10)


def test_tally_merge(ten_samples):
    policy, samples = ten_samples
    whole = evaluate(policy, samples)
    merged = evaluate(policy, samples[:5]).merge(evaluate(policy, samples[5:]))
    assert merged.to_dict() == whole.to_dict()


def test_evaluate_empty():
    with pytest.raises(DomainError):
        evaluate(_constant_policy(0.5, 0.5), [])


# policy and modes

def test_sensitivity_bounds():
    with pytest.raises(DomainError):
        _constant_policy(0.5, 0.5, s1=1.5)


def test_policy_validation():
    policy = _constant_policy(0.5, 0.5)
    with pytest.raises(ConfigurationError):
        CascadePolicy(policy.exit2, policy.exit1, policy.server)
    with pytest.raises(ConfigurationError):
        CascadePolicy(policy.exit1, ExitStage(2, policy.exit2.predictor, ConstantDU(0.5), 0.5, 1.0, enabled=False),
                      policy.server)


def test_client_only_never_offloads(random_setup):
    policy, samples, _ = random_setup
    tally = evaluate(apply_mode(policy.with_sensitivities(0.9, 0.9), OperatingMode.CLIENT_ONLY), samples)
    assert tally.offload_frac == 0.0


def test_exit1_only(random_setup):
    policy, samples, _ = random_setup
    tally = evaluate(apply_mode(policy, "exit1-only"), samples)
    assert tally.exit1_frac == 1.0
    assert tally.accuracy == pytest.approx(standalone_accuracy(policy.exit1.predictor, samples))
    with pytest.raises(ConfigurationError):
        apply_mode(policy.without_exit1(), OperatingMode.EXIT1_ONLY)


def test_two_stage_skips_exit1_but_pays_prefix():
    policy = _constant_policy(0.9, 0.9)
    du1 = policy.exit1.decision_unit
    outcome = route_sample(policy.without_exit1(), _sample("x"))
    assert outcome.destination is Destination.EXIT2
    assert outcome.cost == 74.0
    assert du1.calls == 0


# server unavailable

def test_fallback_uses_exit2_prediction():
    server = DownServer()
    policy = _constant_policy(0.1, 0.1, server=server)
    outcome = route_sample(policy, _sample("x", label=0))
    assert outcome.destination is Destination.SERVER_FALLBACK_LOCAL
    assert outcome.predicted == 0 and outcome.correct
    assert outcome.cost == 174.0
    tally = evaluate(policy, [_sample("x"), _sample("y")])
    assert tally.fallbacks == 2 and tally.fallback_correct == 2
    assert tally.accuracy == 1.0
    assert tally.offload_frac == 1.0


def test_fail_sample_is_excluded_from_accuracy():
    policy = _constant_policy(0.1, 0.1, server=DownServer(), fallback=FallbackPolicy.FAIL_SAMPLE)
    outcome = route_sample(policy, _sample("x"))
    assert outcome.destination is Destination.FAILED
    assert outcome.predicted is None
    mixed = policy.with_sensitivities(s1=0.05)
    tally = evaluate(mixed, [_sample("x")])
    assert tally.st == 1 and tally.failed == 0
    tally = evaluate(policy, [_sample("x"), _sample("y")])
    assert tally.st == 0 and tally.failed == 2
    assert np.isnan(tally.to_dict()["accuracy"])


# sweeps

def test_sweep_matches_brute_force(random_setup):
    policy, samples, tables = random_setup
    result = sweep(policy, GRID, GRID, samples)
    assert len(result.cells) == 25
    assert [(c.s1, c.s2) for c in result.cells] == [(a, b) for a in GRID for b in GRID]
    for cell in result.cells:
        tn1, tn2, sp = _oracle(samples, tables, cell.s1, cell.s2)
        assert (cell.tally.tn1, cell.tally.tn2, cell.tally.sp, cell.tally.st) == (tn1, tn2, sp, 200)
        assert cell.tally.accuracy == pytest.approx((tn1 + tn2 + sp) / 200)
        assert sum(cell.tally.counts.values()) == cell.tally.st


def test_sweep_matches_single_evaluations(random_setup):
    policy, samples, _ = random_setup
    result = sweep(policy, [0.5], [0.25, 0.75], samples)
    for s2 in (0.25, 0.75):
        direct = evaluate(policy.with_sensitivities(0.5, s2), samples)
        assert result.cell(0.5, s2).tally.to_dict() == direct.to_dict()


def test_sweep_monotonicity(random_setup):
    policy, samples, _ = random_setup
    frame = sweep(policy, DEFAULT_GRID, DEFAULT_GRID, samples).to_frame()
    assert len(frame) == 121
    for _, rows in frame.groupby("s1"):
        assert rows["offload_frac"].is_monotonic_increasing
    for _, rows in frame.groupby("s2"):
        assert rows["exit1_frac"].is_monotonic_decreasing


def test_sweep_endpoints(random_setup):
    policy, samples, _ = random_setup
    result = sweep(policy, [0.0, 1.0], [0.0, 1.0], samples)
    assert result.cell(0.0, 0.0).tally.exit1_frac == 1.0
    assert result.cell(1.0, 0.0).tally.counts[Destination.EXIT2] == 200
    everything_offloaded = result.cell(1.0, 1.0).tally
    assert everything_offloaded.offload_frac == 1.0
    assert everything_offloaded.accuracy == pytest.approx(standalone_accuracy(policy.server.predictor, samples))


def test_sweep_runs_each_stage_once_per_sample(random_setup):
    policy, samples, _ = random_setup
    sweep(policy, GRID, GRID, samples)
    assert policy.exit1.predictor.calls == len(samples)
    assert policy.exit2.predictor.calls <= len(samples)
    assert policy.server.predictor.calls <= len(samples)


def test_two_stage_sweep(random_setup):
    policy, samples, tables = random_setup
    result = sweep_two_stage(policy, GRID, samples)
    assert [c.s1 for c in result.cells] == [None] * 5
    for cell in result.cells:
        assert cell.tally.tn1 == 0
        _, tn2, sp = _oracle(samples, tables, 1.0, cell.s2)
        assert (cell.tally.tn2, cell.tally.sp) == (tn2, sp)


def test_sweep_input_checks(random_setup):
    policy, samples, _ = random_setup
    with pytest.raises(DomainError):
        sweep(policy, [], GRID, samples)
    with pytest.raises(DomainError):
        sweep(policy, GRID, GRID, samples + samples[:1])
    with pytest.raises(DomainError):
        sweep(policy, [1.2], GRID, samples)


def test_sweep_errors_name_the_cell(moons):
    policy = build_policy(ReplayExit(1), ReplayExit(2), ReplayServer(), MaxProbDU(), MaxProbDU())
    with pytest.raises(DataError) as excinfo:
        sweep(policy, [0.0], [0.0], moons[2])
    assert "sweep cell (s1=0.0, s2=0.0)" in str(excinfo.value)


def test_sweep_csv_header(random_setup, tmp_path):
    policy, samples, _ = random_setup
    path = sweep(policy, GRID, GRID, samples).write_csv(tmp_path / "sweep.csv")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "s1,s2,accuracy,offload_frac,exit1_frac,mean_cost,Tn1,Tn2,Sp,St"
    assert len(lines) == 26
    assert tuple(load_sweep_csv(path).columns) == SWEEP_COLUMNS


# live models and replays

def test_replay_and_live_models_agree(two_exit, teacher, moons):
    test = moons[2]
    live = build_policy(ModelExit(two_exit, 1), ModelExit(two_exit, 2), ModelServer(teacher),
                        MaxProbDU(), MaxProbDU(), s1=0.9, s2=0.95)
    replayed = build_policy(ReplayExit(1), ReplayExit(2), ReplayServer(),
                            MaxProbDU(), MaxProbDU(), s1=0.9, s2=0.95)
    rows = build_replay(two_exit, teacher, test)
    a = evaluate(live, test)
    b = evaluate(replayed, rows)
    assert (a.tn1, a.tn2, a.sp, a.st) == (b.tn1, b.tn2, b.sp, b.st)


def test_as_samples_rejects_unknown_items():
    with pytest.raises(DomainError):
        as_samples([object()])


# report

@pytest.fixture
def sweep_result(random_setup):
    policy, samples, _ = random_setup
    return sweep(policy, GRID, GRID, samples)


@pytest.fixture
def sweep_frame(sweep_result):
    return sweep_result.to_frame()


def test_grids(sweep_result, sweep_frame):
    acc = accuracy_grid(sweep_frame)
    assert acc.shape == (5, 5)
    assert list(acc.index) == GRID and list(acc.columns) == GRID
    counts = sweep_result.counts_frame()
    exit1 = exit1_count_grid(counts)
    local = local_count_grid(counts)
    assert exit1.loc[0.0, 0.0] == 200
    assert (local.values >= exit1.values).all()
    assert local.loc[1.0, 1.0] == 0


def test_pareto_frontier(sweep_frame):
    front = pareto_frontier(sweep_frame)
    assert front["offload_frac"].is_monotonic_increasing
    assert front["accuracy"].diff().dropna().gt(0).all()
    for _, row in sweep_frame.iterrows():
        dominated_or_on = (
            (front["offload_frac"] <= row["offload_frac"]) & (front["accuracy"] >= row["accuracy"])
        ).any()
        assert dominated_or_on


def test_write_report(sweep_result, sweep_frame, tmp_path):
    outputs = write_report(sweep_frame, sweep_result.counts_frame(), tmp_path, stem="demo")
    assert set(outputs) == {"long", "accuracy_grid", "exit1_counts", "local_counts", "pareto"}
    long = pd.read_csv(outputs["long"])
    assert len(long) == 25
    assert pd.read_csv(outputs["accuracy_grid"], index_col=0).shape == (5, 5)


def test_load_sweep_csv_checks_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n", encoding="utf-8")
    with pytest.raises(DataError):
        load_sweep_csv(path)


def test_tally_to_dict_has_destination_counts():
    tally = RoutingTally()
    assert tally.to_dict()["n_exit1"] == 0


def test_count_grids_are_exact_when_samples_fail(random_setup, tmp_path):
    policy, samples, _ = random_setup
    down = replace(policy.server, predictor=DownServer(), fallback=FallbackPolicy.FAIL_SAMPLE)
    result = sweep(policy.with_server(down), GRID, GRID, samples)

    sweep_path = result.write_csv(tmp_path / "sweep.csv")
    result.write_counts_csv(counts_csv_path(sweep_path))
    counts = load_counts_csv(tmp_path / "sweep_counts.csv")
    assert tuple(counts.columns) == COUNT_COLUMNS

    exit1 = exit1_count_grid(counts)
    local = local_count_grid(counts)
    for cell in result.cells:
        tally = cell.tally
        assert exit1.loc[cell.s1, cell.s2] == tally.counts[Destination.EXIT1]
        assert local.loc[cell.s1, cell.s2] == tally.counts[Destination.EXIT1] + tally.counts[Destination.EXIT2]
        assert counts.loc[(counts.s1 == cell.s1) & (counts.s2 == cell.s2), 'n_total'].item() == 200
    assert result.cell(0.5, 0.5).tally.failed > 0
    assert local.loc[1.0, 1.0] == 0


def test_missing_counts_file_is_a_data_error(tmp_path):
    with pytest.raises(DataError):
        load_counts_csv(counts_csv_path(tmp_path / "sweep.csv"))
