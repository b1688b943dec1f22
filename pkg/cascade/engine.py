"""
Routing engine: per-sample cascade execution, exact tallies, and
sensitivity-grid sweeps.

Overall accuracy is (T_N1 + T_N2 + S_P + fallback hits) / S_T where S_T
counts every sample that received a prediction.
"""

import logging
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from core.exceptions import CascadeSplitError, DataError, DomainError, NetworkError
from core.types import Destination, FallbackPolicy, GateDecision, Sensitivity
from decision.unit import gate
from meta.extract import MetaFeatures, extract_meta
from nn import functional as F
from utils.prometheus_exporter import track_route

from cascade.policy import CascadePolicy, CascadeSample, ExitStage, as_samples

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ('s1', 's2', 'accuracy', 'offload_frac', 'exit1_frac', 'mean_cost', 'Tn1', 'Tn2', 'Sp', 'St')
COUNT_COLUMNS = ('s1', 's2', 'n_total', 'exit1', 'exit2', 'server', 'fallback', 'failed')
DEFAULT_GRID = tuple(round(0.1 * i, 1) for i in range(11))


@dataclass
class RoutingOutcome:
    """Where one sample ended up, what it was predicted as and what it cost"""
    sample_id: str
    label: int
    destination: Destination
    predicted: Optional[int]
    certainties: Dict[int, float] = field(default_factory=dict)
    compute_cost: float = 0.0
    communication_cost: float = 0.0

    @property
    def cost(self) -> float:
        return self.compute_cost + self.communication_cost

    @property
    def correct(self) -> bool:
        return self.predicted is not None and self.predicted == self.label


@dataclass
class RoutingTally:
    """Exact counters behind the overall-accuracy formula"""
    tn1: int = 0
    tn2: int = 0
    sp: int = 0
    fallback_correct: int = 0
    counts: Dict[Destination, int] = field(default_factory=lambda: {d: 0 for d in Destination})
    compute_cost: float = 0.0
    communication_cost: float = 0.0

    def record(self, outcome: RoutingOutcome):
        self.counts[outcome.destination] += 1
        self.compute_cost += outcome.compute_cost
        self.communication_cost += outcome.communication_cost
        if outcome.correct:
            if outcome.destination is Destination.EXIT1:
                self.tn1 += 1
            elif outcome.destination is Destination.EXIT2:
                self.tn2 += 1
            elif outcome.destination is Destination.SERVER:
                self.sp += 1
            elif outcome.destination is Destination.SERVER_FALLBACK_LOCAL:
                self.fallback_correct += 1

    def merge(self, other: "RoutingTally") -> "RoutingTally":
        return RoutingTally(
            tn1=self.tn1 + other.tn1,
            tn2=self.tn2 + other.tn2,
            sp=self.sp + other.sp,
            fallback_correct=self.fallback_correct + other.fallback_correct,
            counts={d: self.counts[d] + other.counts[d] for d in Destination},
            compute_cost=self.compute_cost + other.compute_cost,
            communication_cost=self.communication_cost + other.communication_cost,
        )

    @property
    def st(self) -> int:
        """Samples that received a prediction (failed samples excluded)"""
        return self.n_total - self.failed

    @property
    def n_total(self) -> int:
        return sum(self.counts.values())

    @property
    def failed(self) -> int:
        return self.counts[Destination.FAILED]

    @property
    def fallbacks(self) -> int:
        return self.counts[Destination.SERVER_FALLBACK_LOCAL]

    @property
    def offloads(self) -> int:
        """Samples sent to the server, answered or not"""
        return self.counts[Destination.SERVER] + self.fallbacks + self.failed

    @property
    def accuracy(self) -> float:
        return overall_accuracy(self.tn1, self.tn2, self.sp + self.fallback_correct, self.st)

    @property
    def offload_frac(self) -> float:
        return self.offloads / self.n_total if self.n_total else 0.0

    @property
    def exit1_frac(self) -> float:
        return self.counts[Destination.EXIT1] / self.n_total if self.n_total else 0.0

    @property
    def total_cost(self) -> float:
        return self.compute_cost + self.communication_cost

    @property
    def mean_cost(self) -> float:
        return self.total_cost / self.n_total if self.n_total else 0.0

    def to_dict(self) -> Dict[str, float]:
        return {
            'accuracy': self.accuracy if self.st else float('nan'),
            'offload_frac': self.offload_frac,
            'exit1_frac': self.exit1_frac,
            'mean_cost': self.mean_cost,
            'Tn1': self.tn1,
            'Tn2': self.tn2,
            'Sp': self.sp,
            'St': self.st,
            'fallbacks': self.fallbacks,
            'fallback_correct': self.fallback_correct,
            'failed': self.failed,
            **{f"n_{d.value}": n for d, n in self.counts.items()},
        }


def overall_accuracy(tn1: int, tn2: int, sp: int, st: int) -> float:
    """(T_N1 + T_N2 + S_P) / S_T; with exit 1 disabled tn1 is 0 and this is the two-stage form"""
    if st <= 0:
        raise DomainError("overall accuracy needs at least one classified sample")
    if min(tn1, tn2, sp) < 0 or tn1 + tn2 + sp > st:
        raise DomainError(f"inconsistent counts: Tn1={tn1} Tn2={tn2} Sp={sp} St={st}")
    return (tn1 + tn2 + sp) / st


def _visit(stage: ExitStage, sample: CascadeSample, outcome: RoutingOutcome):
    probs = stage.predictor.probs(sample)
    value = float(stage.decision_unit.certainty(extract_meta(probs)))
    outcome.certainties[stage.stage_id] = value
    return probs, gate(value, stage.sensitivity)


def route_sample(policy: CascadePolicy, sample: CascadeSample) -> RoutingOutcome:
    """Run one sample through exit 1, exit 2 and, if escalated twice, the server"""
    outcome = RoutingOutcome(sample.sample_id, sample.label, Destination.EXIT1, None)
    # the shared prefix is always computed, even when the exit-1 head is skipped
    outcome.compute_cost = policy.exit1.compute_cost

    if policy.exit1.enabled:
        probs1, decision = _visit(policy.exit1, sample, outcome)
        if decision is GateDecision.KEEP_LOCAL:
            outcome.predicted = int(F.argmax(probs1))
            return outcome

    outcome.compute_cost += policy.exit2.compute_cost
    probs2, decision = _visit(policy.exit2, sample, outcome)
    if decision is GateDecision.KEEP_LOCAL:
        outcome.destination = Destination.EXIT2
        outcome.predicted = int(F.argmax(probs2))
        return outcome

    server = policy.server
    outcome.communication_cost = server.communication_cost
    try:
        probs_s = server.predictor.probs(sample)
    except NetworkError as e:
        if server.fallback is FallbackPolicy.USE_LOCAL_PREDICTION:
            logger.warning(f"sample {sample.sample_id}: server unavailable ({e}); using the exit-2 prediction")
            outcome.destination = Destination.SERVER_FALLBACK_LOCAL
            outcome.predicted = int(F.argmax(probs2))
        else:
            logger.warning(f"sample {sample.sample_id}: server unavailable ({e}); sample failed")
            outcome.destination = Destination.FAILED
        return outcome
    outcome.destination = Destination.SERVER
    outcome.predicted = int(F.argmax(probs_s))
    return outcome


def evaluate(policy: CascadePolicy, data, show_progress: bool = False) -> RoutingTally:
    """Route every sample and tally the outcomes"""
    samples = as_samples(data)
    if not samples:
        raise DomainError("cannot evaluate a cascade on an empty dataset")
    tally = RoutingTally()
    for sample in tqdm(samples, desc="route", disable=not show_progress):
        outcome = route_sample(policy, sample)
        tally.record(outcome)
        track_route(outcome.destination.value)
    s1, s2 = policy.sensitivities
    logger.debug(
        f"evaluate s1={s1} s2={s2}: accuracy={tally.accuracy if tally.st else float('nan'):.4f} "
        f"offload={tally.offload_frac:.3f} exit1={tally.exit1_frac:.3f}"
    )
    if tally.failed:
        logger.warning(f"{tally.failed} of {tally.n_total} samples failed without a prediction")
    return tally


# sweeps

class _Memo:
    """Caches a predictor's output or a decision unit's certainty per sample"""

    def __init__(self, inner):
        self.inner = inner
        self._cache = {}
        self._lock = threading.Lock()

    def probs(self, sample: CascadeSample) -> np.ndarray:
        key = sample.sample_id
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        value = self.inner.probs(sample)
        with self._lock:
            self._cache[key] = value
        return value

    def certainty(self, features: MetaFeatures) -> float:
        with self._lock:
            if features in self._cache:
                return self._cache[features]
        value = self.inner.certainty(features)
        with self._lock:
            self._cache[features] = value
        return value


def memoized(policy: CascadePolicy) -> CascadePolicy:
    """
    Same policy with per-sample stage outputs and certainties cached, so a
    sweep runs every model once per sample and the server only for samples
    some cell escalates.
    """
    exit1 = replace(policy.exit1, predictor=_Memo(policy.exit1.predictor),
                    decision_unit=_Memo(policy.exit1.decision_unit))
    exit2 = replace(policy.exit2, predictor=_Memo(policy.exit2.predictor),
                    decision_unit=_Memo(policy.exit2.decision_unit))
    server = replace(policy.server, predictor=_Memo(policy.server.predictor))
    return replace(policy, exit1=exit1, exit2=exit2, server=server)


@dataclass
class SweepCell:
    s1: Optional[float]
    s2: float
    tally: RoutingTally

    def row(self) -> Dict[str, float]:
        t = self.tally
        return {
            's1': self.s1,
            's2': self.s2,
            'accuracy': t.accuracy if t.st else float('nan'),
            'offload_frac': t.offload_frac,
            'exit1_frac': t.exit1_frac,
            'mean_cost': t.mean_cost,
            'Tn1': t.tn1,
            'Tn2': t.tn2,
            'Sp': t.sp,
            'St': t.st,
        }

    def count_row(self) -> Dict[str, float]:
        """Exact destination counts; failed samples included in n_total"""
        c = self.tally.counts
        return {
            's1': self.s1,
            's2': self.s2,
            'n_total': self.tally.n_total,
            'exit1': c[Destination.EXIT1],
            'exit2': c[Destination.EXIT2],
            'server': c[Destination.SERVER],
            'fallback': c[Destination.SERVER_FALLBACK_LOCAL],
            'failed': c[Destination.FAILED],
        }


@dataclass
class SweepResult:
    """One cell per (s1, s2) pair, in grid order (s1 outer, s2 inner)"""
    s1_grid: List[Optional[float]]
    s2_grid: List[float]
    cells: List[SweepCell]

    def cell(self, s1: Optional[float], s2: float) -> SweepCell:
        for c in self.cells:
            if c.s1 == s1 and c.s2 == s2:
                return c
        raise DomainError(f"no sweep cell at s1={s1}, s2={s2}")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([c.row() for c in self.cells], columns=list(SWEEP_COLUMNS))

    def counts_frame(self) -> pd.DataFrame:
        return pd.DataFrame([c.count_row() for c in self.cells], columns=list(COUNT_COLUMNS))

    def write_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, lineterminator='\n')
        logger.info(f"Wrote sweep of {len(self.cells)} cells to {path}")
        return path

    def write_counts_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.counts_frame().to_csv(path, index=False, lineterminator='\n')
        return path


def _unique_ids(samples: List[CascadeSample]) -> List[CascadeSample]:
    ids = [s.sample_id for s in samples]
    if len(set(ids)) != len(ids):
        raise DomainError("sample ids must be unique for a sweep")
    return samples


def _grid_values(grid: Sequence[Union[Sensitivity, float]], name: str) -> List[float]:
    if not grid:
        raise DomainError(f"{name} grid must not be empty")
    return [g.value if isinstance(g, Sensitivity) else Sensitivity(float(g)).value for g in grid]


def _cell(policy: CascadePolicy, samples: List[CascadeSample], s1, s2) -> RoutingTally:
    try:
        return evaluate(policy, samples)
    except CascadeSplitError as e:
        where = f"sweep cell (s1={s1}, s2={s2})"
        if isinstance(e, DataError):
            raise DataError(f"{where}: {e}") from e
        raise type(e)(f"{where}: {e}") from e


def sweep(
    policy: CascadePolicy,
    s1_grid: Sequence[Union[Sensitivity, float]],
    s2_grid: Sequence[Union[Sensitivity, float]],
    data,
    show_progress: bool = False,
) -> SweepResult:
    """evaluate() at every (s1, s2) pair; rows and columns keep the given order"""
    s1_values = _grid_values(s1_grid, "s1")
    s2_values = _grid_values(s2_grid, "s2")
    samples = _unique_ids(as_samples(data))
    base = memoized(policy)
    cells = []
    pairs = [(s1, s2) for s1 in s1_values for s2 in s2_values]
    for s1, s2 in tqdm(pairs, desc="sweep", disable=not show_progress):
        tally = _cell(base.with_sensitivities(s1, s2), samples, s1, s2)
        cells.append(SweepCell(s1, s2, tally))
    logger.info(f"Swept {len(s1_values)}x{len(s2_values)} sensitivities over {len(samples)} samples")
    return SweepResult(s1_values, s2_values, cells)


def sweep_two_stage(
    policy: CascadePolicy,
    s2_grid: Sequence[Union[Sensitivity, float]],
    data,
    show_progress: bool = False,
) -> SweepResult:
    """Sweep only the second decision unit with exit 1 disabled"""
    s2_values = _grid_values(s2_grid, "s2")
    samples = _unique_ids(as_samples(data))
    base = memoized(policy.without_exit1())
    cells = []
    for s2 in tqdm(s2_values, desc="sweep", disable=not show_progress):
        cells.append(SweepCell(None, s2, _cell(base.with_sensitivities(s2=s2), samples, None, s2)))
    return SweepResult([None], s2_values, cells)
