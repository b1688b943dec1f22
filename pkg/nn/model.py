"""
Dense multilayer perceptron with optional additive skip edges.

Nodes are numbered 0..L: node 0 is the input, node L the logit layer.
Layer n (1..L) computes

    pre_n = h_{n-1} @ W_{n-1} + b_{n-1} + sum_{skips (s, n)} h_s @ P_s
    h_n   = act_n(pre_n)

with rectifier activations on hidden nodes and identity on the logit node.
A model is immutable: all arrays are read-only and every edit returns a new model.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.exceptions import DataError, DomainError

logger = logging.getLogger(__name__)

FORMAT_VERSION = "cascadesplit-mlp/1"
RELU = "relu"
IDENTITY = "identity"
ACTIVATIONS = (RELU, IDENTITY)


def _frozen(array, dtype=np.float64) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class SkipEdge:
    """Additive edge from node src into the pre-activation of node dst"""
    src: int
    dst: int
    projection: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'projection', _frozen(self.projection))


@dataclass(frozen=True, eq=False)
class MlpModel:
    """Immutable MLP parameters and architecture"""
    widths: Tuple[int, ...]
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    activations: Tuple[str, ...]
    skips: Tuple[SkipEdge, ...] = field(default_factory=tuple)
    format_version: str = FORMAT_VERSION

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, 'widths', widths)
        object.__setattr__(self, 'weights', tuple(_frozen(w) for w in self.weights))
        object.__setattr__(self, 'biases', tuple(_frozen(b) for b in self.biases))
        object.__setattr__(self, 'activations', tuple(self.activations))
        skips = tuple(sorted(self.skips, key=lambda e: (e.dst, e.src)))
        object.__setattr__(self, 'skips', skips)
        self._validate()

    def _validate(self):
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise DomainError(f"invalid layer widths {self.widths}")
        depth = len(self.widths) - 1
        if not (len(self.weights) == len(self.biases) == len(self.activations) == depth):
            raise DomainError("weights, biases and activations must have one entry per layer")
        for n in range(depth):
            if self.weights[n].shape != (self.widths[n], self.widths[n + 1]):
                raise DomainError(
                    f"layer {n + 1}: weight shape {self.weights[n].shape} does not match "
                    f"widths {self.widths[n]}->{self.widths[n + 1]}"
                )
            if self.biases[n].shape != (self.widths[n + 1],):
                raise DomainError(f"layer {n + 1}: bias shape {self.biases[n].shape}")
            if self.activations[n] not in ACTIVATIONS:
                raise DomainError(f"layer {n + 1}: unknown activation {self.activations[n]!r}")
        seen = set()
        for edge in self.skips:
            if not (0 <= edge.src < edge.dst <= depth):
                raise DomainError(f"skip edge {edge.src}->{edge.dst} is not forward-only")
            if (edge.src, edge.dst) in seen:
                raise DomainError(f"duplicate skip edge {edge.src}->{edge.dst}")
            seen.add((edge.src, edge.dst))
            if edge.projection.shape != (self.widths[edge.src], self.widths[edge.dst]):
                raise DomainError(f"skip edge {edge.src}->{edge.dst}: projection shape mismatch")
        for array in self.parameters():
            if not np.all(np.isfinite(array)):
                raise DomainError("model parameters contain non-finite values")

    # architecture

    @property
    def depth(self) -> int:
        """Number of weight layers"""
        return len(self.widths) - 1

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def n_classes(self) -> int:
        return self.widths[-1]

    @property
    def hidden_nodes(self) -> List[int]:
        return list(range(1, self.depth))

    @property
    def parameter_count(self) -> int:
        return int(sum(a.size for a in self.parameters()))

    def skip_pairs(self) -> List[Tuple[int, int]]:
        return [(e.src, e.dst) for e in self.skips]

    def describe(self) -> str:
        skips = ",".join(f"{s}->{d}" for s, d in self.skip_pairs())
        return f"widths={list(self.widths)} skips=[{skips}] params={self.parameter_count}"

    # parameters

    def parameters(self) -> List[np.ndarray]:
        """Parameter arrays in a fixed order: W0, b0, W1, b1, ..., skip projections"""
        params: List[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        params.extend(e.projection for e in self.skips)
        return params

    def with_parameters(self, params: Sequence[np.ndarray]) -> "MlpModel":
        """Same architecture, new parameter values (order as parameters())"""
        expected = 2 * self.depth + len(self.skips)
        if len(params) != expected:
            raise DomainError(f"expected {expected} parameter arrays, got {len(params)}")
        weights = [params[2 * n] for n in range(self.depth)]
        biases = [params[2 * n + 1] for n in range(self.depth)]
        skips = [
            SkipEdge(e.src, e.dst, params[2 * self.depth + i])
            for i, e in enumerate(self.skips)
        ]
        return MlpModel(self.widths, tuple(weights), tuple(biases), self.activations, tuple(skips))

    # evaluation

    def forward_trace(self, x: np.ndarray) -> Tuple[List[Optional[np.ndarray]], List[np.ndarray]]:
        """Pre-activations and node values for a batch; pre[0] is None"""
        incoming: Dict[int, List[SkipEdge]] = {}
        for edge in self.skips:
            incoming.setdefault(edge.dst, []).append(edge)
        pre: List[Optional[np.ndarray]] = [None]
        h: List[np.ndarray] = [x]
        for n in range(1, self.depth + 1):
            z = h[n - 1] @ self.weights[n - 1] + self.biases[n - 1]
            for edge in incoming.get(n, ()):
                z = z + h[edge.src] @ edge.projection
            pre.append(z)
            h.append(np.maximum(z, 0.0) if self.activations[n - 1] == RELU else z)
        return pre, h

    def backward(self, trace, dlogits: np.ndarray) -> List[np.ndarray]:
        """Gradients of a scalar loss for every parameter, given dL/dlogits"""
        pre, h = trace
        dh = [np.zeros_like(v) for v in h]
        dh[self.depth] = dlogits
        grads_w: List[np.ndarray] = [None] * self.depth
        grads_b: List[np.ndarray] = [None] * self.depth
        grads_skip: Dict[Tuple[int, int], np.ndarray] = {}
        incoming: Dict[int, List[SkipEdge]] = {}
        for edge in self.skips:
            incoming.setdefault(edge.dst, []).append(edge)
        for n in range(self.depth, 0, -1):
            dz = dh[n] * (pre[n] > 0) if self.activations[n - 1] == RELU else dh[n]
            grads_w[n - 1] = h[n - 1].T @ dz
            grads_b[n - 1] = dz.sum(axis=0)
            dh[n - 1] = dh[n - 1] + dz @ self.weights[n - 1].T
            for edge in incoming.get(n, ()):
                grads_skip[(edge.src, edge.dst)] = h[edge.src].T @ dz
                dh[edge.src] = dh[edge.src] + dz @ edge.projection.T
        grads: List[np.ndarray] = []
        for gw, gb in zip(grads_w, grads_b):
            grads.extend([gw, gb])
        grads.extend(grads_skip[(e.src, e.dst)] for e in self.skips)
        return grads


def _as_batch(model: MlpModel, inputs) -> Tuple[np.ndarray, bool]:
    x = np.asarray(inputs, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != model.input_dim:
        raise DomainError(f"input of shape {x.shape} does not match model input width {model.input_dim}")
    return x2, single


def forward(model: MlpModel, inputs) -> np.ndarray:
    """Logits for one input vector or a batch of rows"""
    x, single = _as_batch(model, inputs)
    _, h = model.forward_trace(x)
    return h[-1][0] if single else h[-1]


def forward_hidden(model: MlpModel, inputs, node: int) -> np.ndarray:
    """Value of node `node` (0 = input, depth = logits)"""
    if not (0 <= node <= model.depth):
        raise DomainError(f"node {node} outside 0..{model.depth}")
    x, single = _as_batch(model, inputs)
    _, h = model.forward_trace(x)
    return h[node][0] if single else h[node]


def init_mlp(widths: Sequence[int], seed: int) -> MlpModel:
    """Scaled uniform initialisation U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases"""
    widths = tuple(int(w) for w in widths)
    if len(widths) < 2:
        raise DomainError(f"need at least input and output widths, got {widths}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    activations = [RELU] * (len(widths) - 2) + [IDENTITY]
    return MlpModel(widths, tuple(weights), tuple(biases), tuple(activations))


def reinitialize(model: MlpModel, seed: int) -> MlpModel:
    """Fresh parameters for the same architecture; skip projections start at zero"""
    fresh = init_mlp(model.widths, seed)
    skips = tuple(SkipEdge(e.src, e.dst, np.zeros_like(e.projection)) for e in model.skips)
    return MlpModel(fresh.widths, fresh.weights, fresh.biases, model.activations, skips)


def models_equal(a: MlpModel, b: MlpModel) -> bool:
    """Bit-exact equality of architecture and parameters"""
    if a.widths != b.widths or a.activations != b.activations or a.skip_pairs() != b.skip_pairs():
        return False
    return all(np.array_equal(p, q) for p, q in zip(a.parameters(), b.parameters()))


# artifact I/O

def model_to_dict(model: MlpModel) -> Dict:
    """Structured document; floats keep their shortest exact repr"""
    return {
        'format_version': model.format_version,
        'widths': list(model.widths),
        'activations': list(model.activations),
        'weights': [w.tolist() for w in model.weights],
        'biases': [b.tolist() for b in model.biases],
        'skips': [
            {'src': e.src, 'dst': e.dst, 'projection': e.projection.tolist()}
            for e in model.skips
        ],
    }


def model_from_dict(doc: Dict) -> MlpModel:
    version = doc.get('format_version')
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported model format version {version!r}")
    try:
        widths = tuple(doc['widths'])
        weights = tuple(np.array(w, dtype=np.float64).reshape(widths[n], widths[n + 1])
                        for n, w in enumerate(doc['weights']))
        biases = tuple(np.array(b, dtype=np.float64).reshape(-1) for b in doc['biases'])
        skips = tuple(
            SkipEdge(int(s['src']), int(s['dst']),
                     np.array(s['projection'], dtype=np.float64).reshape(widths[s['src']], widths[s['dst']]))
            for s in doc.get('skips', [])
        )
        return MlpModel(widths, weights, biases, tuple(doc['activations']), skips)
    except (KeyError, TypeError, ValueError, IndexError) as e:
        raise DataError(f"malformed model document: {e}") from e


def save_model(model: MlpModel, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model_to_dict(model)), encoding='utf-8')
    logger.info(f"Saved model {model.describe()} to {path}")
    return path


def load_model(path: Union[str, Path]) -> MlpModel:
    path = Path(path)
    if not path.exists():
        raise DataError(f"model artifact not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: not a JSON document ({e})") from e
    return model_from_dict(doc)
