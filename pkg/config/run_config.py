"""
CascadeSplit - Run Configuration
Pipeline configuration file (JSON) with one section per stage. Unknown keys
are rejected; command-line flags override file values through dotted paths.
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from core.exceptions import ConfigurationError

logger = logging.getLogger(__name__)


def _default_grid() -> List[float]:
    return [round(0.1 * i, 1) for i in range(11)]


class Section(BaseModel):
    model_config = ConfigDict(extra='forbid')


class DataSection(Section):
    """Synthetic dataset and split"""
    kind: Literal['blobs', 'moons'] = 'moons'
    class_counts: List[int] = Field(default_factory=lambda: [1000, 1000])
    input_dim: int = 2
    separation: float = 3.0
    noise: float = 0.25
    fractions: Tuple[float, float, float] = (0.8, 0.1, 0.1)


class ModelSection(Section):
    """Architecture and training budget of a plain MLP"""
    hidden: List[int] = Field(default_factory=lambda: [64, 64])
    epochs: int = 60
    batch_size: int = 32
    learning_rate: float = 0.05


class SearchSection(Section):
    steps: int = 5
    candidates: int = 8
    epochs_per_candidate: int = 5
    temperature: float = 20.0
    loss_kind: Literal['distilled', 'hard'] = 'distilled'
    max_morphs: int = 2
    max_width: int = 64
    max_hidden_layers: int = 8
    workers: int = 1
    retrain_epochs: int = 20


class ExitsSection(Section):
    position: Optional[int] = None
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.05
    fine_tune_exit2: bool = False


class DecisionSection(Section):
    hidden_width: int = 16
    epochs: int = 60
    batch_size: int = 32
    learning_rate: float = 0.05
    exit2_training: Literal['all', 'surviving'] = 'all'
    # exit-1 sensitivity that decides which samples survive to exit 2
    surviving_s1: float = 0.5


class CascadeSection(Section):
    s1: float = 0.5
    s2: float = 0.5
    s1_grid: List[float] = Field(default_factory=_default_grid)
    s2_grid: List[float] = Field(default_factory=_default_grid)
    device: str = 'samsung-s10'
    communication_cost: float = 100.0
    fallback: Literal['fail_sample', 'use_local_prediction'] = 'use_local_prediction'
    mode: Literal['normal', 'client-only', 'exit1-only'] = 'normal'

    @field_validator('s1', 's2')
    @classmethod
    def _in_unit_interval(cls, value: float) -> float:
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"sensitivity must lie in [0, 1], got {value}")
        return value


class ServiceSection(Section):
    address: Optional[str] = None
    timeout_ms: Optional[float] = None
    response_delay_ms: float = 0.0
    metrics_port: Optional[int] = None


class RunConfig(Section):
    """Every knob of the pipeline"""
    seed: int = 0
    data: DataSection = Field(default_factory=DataSection)
    teacher: ModelSection = Field(default_factory=ModelSection)
    client: ModelSection = Field(default_factory=lambda: ModelSection(hidden=[3, 3], epochs=10))
    search: SearchSection = Field(default_factory=SearchSection)
    exits: ExitsSection = Field(default_factory=ExitsSection)
    decision: DecisionSection = Field(default_factory=DecisionSection)
    cascade: CascadeSection = Field(default_factory=CascadeSection)
    service: ServiceSection = Field(default_factory=ServiceSection)

    def section_digest(self, *names: str) -> str:
        """Short content hash of the named sections plus the seed"""
        doc = {'seed': self.seed, **{n: getattr(self, n).model_dump(mode='json') for n in names}}
        return hashlib.md5(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:8]

    def resolved_json(self) -> str:
        return json.dumps(self.model_dump(mode='json'), sort_keys=True)


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: Dict[str, Any], overrides: Iterable[Union[str, Tuple[str, Any]]]) -> Dict[str, Any]:
    """Set dotted keys ('cascade.s1=0.3' or ('cascade.s1', 0.3)) in a nested dict"""
    for item in overrides:
        if isinstance(item, str):
            key, sep, raw = item.partition('=')
            if not sep:
                raise ConfigurationError(f"override must look like key=value, got {item!r}")
            value = _parse_value(raw)
        else:
            key, value = item
        parts = key.strip().split('.')
        node = doc
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"override {key!r} descends into a non-section")
        node[parts[-1]] = value
    return doc


def build_run_config(doc: Optional[Dict[str, Any]] = None, overrides: Iterable = ()) -> RunConfig:
    doc = apply_overrides(dict(doc or {}), overrides)
    try:
        return RunConfig.model_validate(doc)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
        )
        raise ConfigurationError(f"invalid run configuration: {problems}") from e


def load_run_config(path: Optional[Union[str, Path]] = None, overrides: Iterable = ()) -> RunConfig:
    """Read a JSON config file (optional), apply overrides, validate"""
    doc: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text(encoding='utf-8'))
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"{path}: not a JSON document ({e})") from e
        if not isinstance(doc, dict):
            raise ConfigurationError(f"{path}: top level must be an object")
    cfg = build_run_config(doc, overrides)
    logger.info(f"Resolved run configuration: {cfg.resolved_json()}")
    return cfg
