"""
Function-preserving edits of dense networks: widen, deepen and additive skip.

Each edit returns a new model whose logits equal the host's at the moment
of the edit (up to float rounding for widen).
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from core.exceptions import DomainError
from nn.model import RELU, MlpModel, SkipEdge

logger = logging.getLogger(__name__)


class MorphKind(Enum):
    WIDEN = "widen"
    DEEPEN = "deepen"
    ADD_SKIP = "add_skip"


@dataclass(frozen=True)
class MorphOp:
    """One architecture edit and the seed it was drawn with"""
    kind: MorphKind
    layer: Optional[int] = None
    new_width: Optional[int] = None
    position: Optional[int] = None
    src: Optional[int] = None
    dst: Optional[int] = None
    seed: int = 0

    def describe(self) -> str:
        if self.kind is MorphKind.WIDEN:
            return f"widen(layer={self.layer}, width={self.new_width})"
        if self.kind is MorphKind.DEEPEN:
            return f"deepen(position={self.position})"
        return f"add_skip({self.src}->{self.dst})"


def _check_hidden(model: MlpModel, node: int, what: str):
    if node not in model.hidden_nodes:
        raise DomainError(f"{what} {node} is not a hidden layer (hidden layers: {model.hidden_nodes})")


def widen(model: MlpModel, layer: int, new_width: int, seed: int = 0) -> MlpModel:
    """
    Grow hidden node `layer` to `new_width` units by replicating randomly chosen
    units and splitting their outgoing weights among the copies.
    """
    _check_hidden(model, layer, "layer")
    old_width = model.widths[layer]
    if new_width <= old_width:
        raise DomainError(f"widen must increase width of layer {layer}: {old_width} -> {new_width}")

    rng = np.random.default_rng(seed)
    mapping = np.concatenate([np.arange(old_width), rng.integers(0, old_width, size=new_width - old_width)])
    copies = np.bincount(mapping, minlength=old_width).astype(np.float64)
    share = 1.0 / copies[mapping]

    weights = list(model.weights)
    biases = list(model.biases)
    weights[layer - 1] = model.weights[layer - 1][:, mapping]
    biases[layer - 1] = model.biases[layer - 1][mapping]
    weights[layer] = model.weights[layer][mapping, :] * share[:, None]

    skips = []
    for edge in model.skips:
        projection = edge.projection
        if edge.dst == layer:
            projection = projection[:, mapping]
        if edge.src == layer:
            projection = projection[mapping, :] * share[:, None]
        skips.append(SkipEdge(edge.src, edge.dst, projection))

    widths = list(model.widths)
    widths[layer] = new_width
    return MlpModel(tuple(widths), tuple(weights), tuple(biases), model.activations, tuple(skips))


def deepen(model: MlpModel, position: int) -> MlpModel:
    """
    Insert an identity-initialised rectifier layer right after hidden node
    `position`. Hidden values are non-negative, so the identity is exact.
    """
    _check_hidden(model, position, "position")
    width = model.widths[position]
    k = position
    widths = model.widths[:k + 1] + (width,) + model.widths[k + 1:]
    weights = model.weights[:k] + (np.eye(width),) + model.weights[k:]
    biases = model.biases[:k] + (np.zeros(width),) + model.biases[k:]
    activations = model.activations[:k] + (RELU,) + model.activations[k:]

    def shift(node: int) -> int:
        return node + 1 if node > k else node

    skips = tuple(SkipEdge(shift(e.src), shift(e.dst), e.projection) for e in model.skips)
    return MlpModel(widths, weights, biases, activations, skips)


def add_skip(model: MlpModel, src: int, dst: int) -> MlpModel:
    """Add a zero-initialised additive edge from node src to node dst"""
    if not (0 <= src < dst <= model.depth):
        raise DomainError(f"skip {src}->{dst} must be forward-only within 0..{model.depth}")
    if (src, dst) in model.skip_pairs():
        raise DomainError(f"skip {src}->{dst} already exists")
    edge = SkipEdge(src, dst, np.zeros((model.widths[src], model.widths[dst])))
    return MlpModel(model.widths, model.weights, model.biases, model.activations, model.skips + (edge,))


def apply_morph(model: MlpModel, op: MorphOp) -> MlpModel:
    if op.kind is MorphKind.WIDEN:
        return widen(model, op.layer, op.new_width, seed=op.seed)
    if op.kind is MorphKind.DEEPEN:
        return deepen(model, op.position)
    return add_skip(model, op.src, op.dst)


def _free_skip_pairs(model: MlpModel) -> List[Tuple[int, int]]:
    existing = set(model.skip_pairs())
    return [
        (s, d)
        for s in range(model.depth)
        for d in range(s + 2, model.depth + 1)
        if (s, d) not in existing
    ]


def random_morph(model: MlpModel, rng: np.random.Generator,
                 max_width: int = 64, max_hidden_layers: int = 8) -> MorphOp:
    """Draw one applicable morphism uniformly over the available kinds"""
    widenable = [k for k in model.hidden_nodes if model.widths[k] < max_width]
    kinds = []
    if widenable:
        kinds.append(MorphKind.WIDEN)
    if model.hidden_nodes and len(model.hidden_nodes) < max_hidden_layers:
        kinds.append(MorphKind.DEEPEN)
    free_pairs = _free_skip_pairs(model)
    if free_pairs:
        kinds.append(MorphKind.ADD_SKIP)
    if not kinds:
        raise DomainError(f"no morphism applies to {model.describe()}")

    seed = int(rng.integers(0, 2**31 - 1))
    kind = kinds[int(rng.integers(0, len(kinds)))]
    if kind is MorphKind.WIDEN:
        layer = widenable[int(rng.integers(0, len(widenable)))]
        width = model.widths[layer]
        grow = int(rng.integers(1, max(1, width // 2) + 1))
        return MorphOp(kind, layer=layer, new_width=min(max_width, width + grow), seed=seed)
    if kind is MorphKind.DEEPEN:
        position = model.hidden_nodes[int(rng.integers(0, len(model.hidden_nodes)))]
        return MorphOp(kind, position=position, seed=seed)
    src, dst = free_pairs[int(rng.integers(0, len(free_pairs)))]
    return MorphOp(kind, src=src, dst=dst, seed=seed)
