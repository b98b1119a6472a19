"""
A minimal numpy network engine: dense layers, batch normalization, a softmax
classifier and momentum SGD, enough to train toy supernets and their children.

Every network is a stem (dense + norm) feeding the root node of a child's cell, the
child's active edges, and a linear classifier (dense + bias) reading the leaf node.
Each parametric layer is ReLU, dense, norm, so every nonlinearity of a network sits
inside its operators. Node values are the sum of their incoming edges.
"""

import copy
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Dict, Iterator, List, Mapping, Optional, Tuple

import numpy as np

from . import constants
from .data import ToyDataset
from .exceptions import *
from .graph import ChildModel, OperatorId, OperatorKind, OperatorSpec
from .util import StrEnum

logger = logging.getLogger(__name__)


class ParamRole(StrEnum):
    operator_weight = "operator_weight"
    norm_scale = "norm_scale"
    norm_shift = "norm_shift"
    stem_weight = "stem_weight"
    classifier_weight = "classifier_weight"
    classifier_bias = "classifier_bias"


class Mode(StrEnum):
    train = "train"
    eval = "eval"
    collect = "collect"
    """Normalize with batch statistics and pool them, leaving running stats alone."""


class InitPolicy(StrEnum):
    kaiming_normal = "kaiming-normal"
    xavier_uniform = "xavier-uniform"
    orthogonal = "orthogonal"


def init_matrix(shape: Tuple[int, int], policy: InitPolicy, rng: np.random.Generator) -> np.ndarray:
    """
    Draw a weight matrix used as ``x @ w``, so ``shape[0]`` is the fan-in.
    """
    fan_in, fan_out = shape
    policy = InitPolicy(policy)
    if policy == InitPolicy.kaiming_normal:
        return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)
    if policy == InitPolicy.xavier_uniform:
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=shape)
    flat = rng.normal(0.0, 1.0, size=(max(shape), min(shape)))
    q, r = np.linalg.qr(flat)
    q = q * np.sign(np.diag(r))
    return q if fan_in >= fan_out else q.T


@dataclass
class ParamTensor:
    value: np.ndarray
    role: ParamRole
    grad: np.ndarray = field(init=False, repr=False)
    velocity: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)


@dataclass
class NormState:
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = constants.NORM_MOMENTUM
    eps: float = constants.NORM_EPS

    @classmethod
    def fresh(cls, dim: int) -> "NormState":
        return cls(np.zeros(dim), np.ones(dim))

    def update(self, mean: np.ndarray, var: np.ndarray):
        self.running_mean = (1.0 - self.momentum) * self.running_mean + self.momentum * mean
        self.running_var = (1.0 - self.momentum) * self.running_var + self.momentum * var


@dataclass
class DenseLayer:
    weight: ParamTensor
    scale: ParamTensor
    shift: ParamTensor
    norm: NormState

    @classmethod
    def create(
        cls, shape: Tuple[int, int], policy: InitPolicy, rng: np.random.Generator, role: ParamRole
    ) -> "DenseLayer":
        return cls(
            weight=ParamTensor(init_matrix(shape, policy, rng), role),
            scale=ParamTensor(np.ones(shape[1]), ParamRole.norm_scale),
            shift=ParamTensor(np.zeros(shape[1]), ParamRole.norm_shift),
            norm=NormState.fresh(shape[1]),
        )

    def named_params(self, prefix: str) -> Iterator[Tuple[str, ParamTensor]]:
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.scale", self.scale
        yield f"{prefix}.shift", self.shift


def layer_prefix(op: OperatorId, index: int) -> str:
    return f"op.{op.edge}.{op.slot}.{index}"


@dataclass
class NetworkWeights:
    stem: DenseLayer
    operators: Dict[OperatorId, List[DenseLayer]]
    classifier_weight: ParamTensor
    classifier_bias: ParamTensor

    def named_layers(self) -> Iterator[Tuple[str, DenseLayer]]:
        yield "stem", self.stem
        for op in sorted(self.operators):
            for index, layer in enumerate(self.operators[op]):
                yield layer_prefix(op, index), layer

    def named_params(self) -> Iterator[Tuple[str, ParamTensor]]:
        for prefix, layer in self.named_layers():
            yield from layer.named_params(prefix)
        yield "classifier.weight", self.classifier_weight
        yield "classifier.bias", self.classifier_bias

    def named_norms(self) -> Iterator[Tuple[str, NormState]]:
        for prefix, layer in self.named_layers():
            yield f"{prefix}.norm", layer.norm

    def params(self) -> Dict[str, ParamTensor]:
        return dict(self.named_params())

    def copy(self) -> "NetworkWeights":
        return copy.deepcopy(self)


@lru_cache(maxsize=None)
def pooling_matrix(width: int, pool_size: int) -> np.ndarray:
    """
    The fixed averaging map of a pooling operator: features are viewed as a square grid,
    every output averages its zero-padded ``pool_size`` window with weight 1/k².
    """
    side = math.isqrt(width)
    if side * side != width:
        raise ShapeMismatch(f"Pooling needs a square width, got {width}")
    radius = pool_size // 2
    matrix = np.zeros((width, width))
    for row in range(side):
        for col in range(side):
            for in_row in range(max(0, row - radius), min(side, row + radius + 1)):
                for in_col in range(max(0, col - radius), min(side, col + radius + 1)):
                    matrix[in_row * side + in_col, row * side + col] = 1.0 / (pool_size * pool_size)
    matrix.setflags(write=False)
    return matrix


class MomentCollector:
    """
    Pools exact per-feature moments of every normalization input across batches.
    """

    def __init__(self):
        self._stats: Dict[str, Tuple[int, np.ndarray, np.ndarray]] = {}

    def add(self, name: str, values: np.ndarray):
        count = values.shape[0]
        mean = values.mean(axis=0)
        m2 = ((values - mean) ** 2).sum(axis=0)
        if name in self._stats:
            seen, seen_mean, seen_m2 = self._stats[name]
            total = seen + count
            delta = mean - seen_mean
            mean = seen_mean + delta * count / total
            m2 = seen_m2 + m2 + delta**2 * seen * count / total
            count = total
        self._stats[name] = (count, mean, m2)

    def states(self, templates: Mapping[str, NormState]) -> Dict[str, NormState]:
        out = {}
        for name, (count, mean, m2) in self._stats.items():
            template = templates[f"{name}.norm"]
            out[f"{name}.norm"] = NormState(mean, m2 / count, template.momentum, template.eps)
        return out


@dataclass
class _Tape:
    inputs: np.ndarray
    stem: Any
    edges: Dict[int, Any]
    leaf: np.ndarray


def _norm_forward(
    h: np.ndarray,
    layer: DenseLayer,
    prefix: str,
    mode: Mode,
    norms: Optional[Mapping[str, NormState]],
    collector: Optional[MomentCollector],
):
    state = layer.norm if norms is None else norms.get(f"{prefix}.norm", layer.norm)
    if mode == Mode.eval:
        inv_std = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (h - state.running_mean) * inv_std
    else:
        mean = h.mean(axis=0)
        var = h.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + state.eps)
        xhat = (h - mean) * inv_std
        if mode == Mode.train:
            state.update(mean, var)
        elif collector is not None:
            collector.add(prefix, h)
    return xhat * layer.scale.value + layer.shift.value, (xhat, inv_std, mode != Mode.eval)


def _norm_backward(dy: np.ndarray, layer: DenseLayer, prefix: str, cache, grads: Dict[str, np.ndarray]):
    xhat, inv_std, batch_stats = cache
    grads[f"{prefix}.scale"] = (dy * xhat).sum(axis=0)
    grads[f"{prefix}.shift"] = dy.sum(axis=0)
    dxhat = dy * layer.scale.value
    if not batch_stats:
        return dxhat * inv_std
    n = dy.shape[0]
    return inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))


def _dense_forward(x, layer, prefix, mode, norms, collector):
    y, cache = _norm_forward(x @ layer.weight.value, layer, prefix, mode, norms, collector)
    return y, (x, cache)


def _dense_backward(dy, layer, prefix, cache, grads):
    x, norm_cache = cache
    dh = _norm_backward(dy, layer, prefix, norm_cache, grads)
    grads[f"{prefix}.weight"] = x.T @ dh
    return dh @ layer.weight.value.T


def _op_forward(x, spec: OperatorSpec, op: OperatorId, weights: NetworkWeights, width, mode, norms, collector):
    if spec.kind == OperatorKind.identity:
        return x, None
    if spec.kind == OperatorKind.pooling:
        assert spec.pool_size is not None
        return x @ pooling_matrix(width, spec.pool_size), None
    layers = weights.operators.get(op)
    if layers is None:
        raise ShapeMismatch(f"No weights stored for parametric operator {op}")
    caches = []
    h = x
    for index, layer in enumerate(layers):
        mask = h > 0
        h, cache = _dense_forward(h * mask, layer, layer_prefix(op, index), mode, norms, collector)
        caches.append((mask, cache))
    return h, caches


def _op_backward(dy, spec: OperatorSpec, op: OperatorId, weights: NetworkWeights, width, caches, grads):
    if spec.kind == OperatorKind.identity:
        return dy
    if spec.kind == OperatorKind.pooling:
        assert spec.pool_size is not None
        return dy @ pooling_matrix(width, spec.pool_size).T
    layers = weights.operators[op]
    for index in reversed(range(len(layers))):
        mask, cache = caches[index]
        dy = _dense_backward(dy, layers[index], layer_prefix(op, index), cache, grads) * mask
    return dy


def _run(
    child: ChildModel,
    weights: NetworkWeights,
    inputs: np.ndarray,
    mode: Mode,
    norms: Optional[Mapping[str, NormState]] = None,
    collector: Optional[MomentCollector] = None,
) -> Tuple[np.ndarray, _Tape]:
    space = child.space
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeMismatch(f"Expected a non-empty 2-D batch, got shape {x.shape}")
    if x.shape[1] != weights.stem.weight.value.shape[0]:
        raise ShapeMismatch(
            f"Batch has {x.shape[1]} features but the stem expects {weights.stem.weight.value.shape[0]}"
        )
    if weights.stem.weight.value.shape[1] != space.width:
        raise ShapeMismatch(f"Stem produces {weights.stem.weight.value.shape[1]} features, space width is {space.width}")
    if not child.is_valid:
        raise InvalidChild(f"Child {child.encode()} has no path from root to leaf")

    root, stem_cache = _dense_forward(x, weights.stem, "stem", mode, norms, collector)
    values = {space.root: root}
    edge_caches: Dict[int, Any] = {}
    active = set(child.active_edges)
    for node in space.topo_order:
        total = None
        for e in space.in_edges[node]:
            if e not in active:
                continue
            op = OperatorId(e, child.choices[e])
            out, cache = _op_forward(
                values[space.edges[e].src], child.spec(e), op, weights, space.width, mode, norms, collector
            )
            edge_caches[e] = cache
            total = out if total is None else total + out
        if total is not None:
            values[node] = total

    leaf = values[space.leaf]
    logits = leaf @ weights.classifier_weight.value + weights.classifier_bias.value
    if not np.all(np.isfinite(logits)):
        raise NumericalOverflow(f"Non-finite activations while running child {child.encode()}")
    return logits, _Tape(x, stem_cache, edge_caches, leaf)


def _backward(child: ChildModel, weights: NetworkWeights, tape: _Tape, dlogits: np.ndarray) -> Dict[str, np.ndarray]:
    space = child.space
    grads: Dict[str, np.ndarray] = {
        "classifier.weight": tape.leaf.T @ dlogits,
        "classifier.bias": dlogits.sum(axis=0),
    }
    node_grads = {space.leaf: dlogits @ weights.classifier_weight.value.T}
    for node in reversed(space.topo_order):
        grad = node_grads.get(node)
        if grad is None or node == space.root:
            continue
        for e in space.in_edges[node]:
            if e not in tape.edges:
                continue
            op = OperatorId(e, child.choices[e])
            dx = _op_backward(grad, child.spec(e), op, weights, space.width, tape.edges[e], grads)
            src = space.edges[e].src
            node_grads[src] = dx if src not in node_grads else node_grads[src] + dx
    _dense_backward(node_grads[space.root], weights.stem, "stem", tape.stem, grads)
    return grads


def forward(
    child: ChildModel,
    weights: NetworkWeights,
    inputs: np.ndarray,
    mode: Mode = Mode.eval,
    norms: Optional[Mapping[str, NormState]] = None,
) -> np.ndarray:
    """
    Run a batch through a child and return its logits.

    In train mode normalization uses batch statistics and updates the running stats; in
    eval mode it uses the running stats, or the states in ``norms`` where given.

    :raises ShapeMismatch: If the batch or the stored weights don't fit the space.
    :raises NumericalOverflow: If the logits aren't finite.
    """
    return _run(child, weights, inputs, Mode(mode), norms=norms)[0]


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    n = len(labels)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -float(log_probs[np.arange(n), labels].mean())
    dlogits = np.exp(log_probs)
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n


def loss_and_grads(
    child: ChildModel, weights: NetworkWeights, inputs: np.ndarray, labels: np.ndarray
) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    Train-mode forward and backward pass. Only parameters the child touches get a gradient.
    """
    logits, tape = _run(child, weights, inputs, Mode.train)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (logits.shape[0],) or labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ShapeMismatch(f"Labels don't match {logits.shape[0]} samples of {logits.shape[1]} classes")
    loss, dlogits = softmax_cross_entropy(logits, labels)
    return loss, _backward(child, weights, tape, dlogits)


def sgd_step(
    weights: NetworkWeights,
    grads: Mapping[str, np.ndarray],
    lr: float,
    momentum: float = 0.0,
    weight_decay: float = 0.0,
) -> NetworkWeights:
    """
    Momentum SGD (``v = momentum * v + g``, ``w -= lr * v``) on the parameters in ``grads``.

    Parameters without a gradient keep both their values and their momentum buffers.
    """
    if lr < 0:
        raise ConfigurationError(f"Learning rate must be >= 0, got {lr}")
    if lr == 0:
        return weights
    params = weights.params()
    for name, grad in grads.items():
        param = params[name]
        if grad.shape != param.value.shape:
            raise ShapeMismatch(f"Gradient of '{name}' has shape {grad.shape}, expected {param.value.shape}")
        param.grad = grad
        if weight_decay:
            grad = grad + weight_decay * param.value
        if momentum:
            param.velocity = grad.copy() if param.velocity is None else momentum * param.velocity + grad
            grad = param.velocity
        param.value = param.value - lr * grad
        if not np.all(np.isfinite(param.value)):
            raise NumericalOverflow(f"Parameter '{name}' became non-finite")
    return weights


def recalibrate_norm(
    child: ChildModel, weights: NetworkWeights, train_data: ToyDataset, batch_size: Optional[int] = None
) -> Dict[str, NormState]:
    """
    Recompute the running mean and variance of every normalization the child uses by
    streaming the training split through it. The store's own states and the learnable
    scale/shift are left untouched; the returned states are meant for ``forward(norms=...)``.
    """
    if len(train_data) == 0:
        raise ShapeMismatch("Can't recalibrate normalization on an empty dataset")
    collector = MomentCollector()
    for inputs, _ in train_data.batches(batch_size or len(train_data)):
        _run(child, weights, inputs, Mode.collect, collector=collector)
    return collector.states(dict(weights.named_norms()))


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == labels))
