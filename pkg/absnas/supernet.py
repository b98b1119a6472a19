"""
The shared weight store of a supernet and single-path uniform-sampling training.
"""

import copy
import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import constants
from .aliases import PathOrStr
from .angle import Reference, VectorMode, angle_of_child
from .data import DataSplits, ToyDataset
from .exceptions import *
from .graph import ChildModel, OperatorId, OperatorKind, SupernetGraph, sample_child
from .nnet import (
    DenseLayer,
    InitPolicy,
    Mode,
    NetworkWeights,
    NormState,
    ParamRole,
    ParamTensor,
    accuracy,
    forward,
    init_matrix,
    layer_prefix,
    loss_and_grads,
    recalibrate_norm,
    sgd_step,
)
from .util import StrEnum, check_schema

logger = logging.getLogger(__name__)


class LrSchedule(StrEnum):
    constant = "constant"
    cosine = "cosine"


class WeightSource(StrEnum):
    current = "current"
    init = "init"
    base = "base"


@dataclass
class TrainConfig:
    first_stage_epochs: int = 20
    later_stage_epochs: int = 5
    standalone_epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.05
    lr_schedule: LrSchedule = LrSchedule.cosine
    momentum: float = 0.9
    weight_decay: float = 0.0
    init_policy: InitPolicy = InitPolicy.kaiming_normal

    def __post_init__(self):
        try:
            self.lr_schedule = LrSchedule(self.lr_schedule)
            self.init_policy = InitPolicy(self.init_policy)
        except ValueError as exc:
            raise ConfigurationError(f"train: {exc}")
        for name in ("first_stage_epochs", "later_stage_epochs", "standalone_epochs"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"train: '{name}' must be >= 1")
        if self.batch_size < 2:
            raise ConfigurationError("train: 'batch_size' must be >= 2 (batch normalization needs two samples)")
        if self.learning_rate < 0:
            raise ConfigurationError("train: 'learning_rate' must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError("train: 'momentum' must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigurationError("train: 'weight_decay' must be >= 0")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"train: unknown keys {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        return {k: str(v) if isinstance(v, StrEnum) else v for k, v in asdict(self).items()}

    def lr_at(self, epoch: int, total: int) -> float:
        """
        Learning rate for the ``epoch``-th (0-based) of ``total`` epochs of a stage.
        """
        if self.lr_schedule == LrSchedule.constant or total <= 1:
            return self.learning_rate
        return 0.5 * self.learning_rate * (1.0 + math.cos(math.pi * epoch / total))


@dataclass
class ResetEvent:
    epoch: int
    removed: Tuple[str, ...] = ()


@dataclass
class TrainLogEntry:
    epoch: int
    lr: float
    loss_mean: float
    loss_std: float
    batches: int
    updates: Dict[str, int] = field(default_factory=dict)
    """How many batches sampled each operator, keyed by operator id."""


@dataclass
class WeightStore:
    """
    Current weights W of every parametric operator (plus stem and classifier), the
    initial weights and the base snapshot used as the angle reference.
    """

    space_hash: str
    weights: NetworkWeights
    init_snapshot: Dict[str, np.ndarray]
    base_snapshot: Dict[str, np.ndarray]
    epoch: int = 0
    reset_log: List[ResetEvent] = field(default_factory=list)

    def _source(self, source: WeightSource) -> Dict[str, np.ndarray]:
        source = WeightSource(source)
        if source == WeightSource.current:
            return {name: param.value for name, param in self.weights.named_params()}
        return self.init_snapshot if source == WeightSource.init else self.base_snapshot

    def operator_vector(self, op: OperatorId, spec, source: WeightSource = WeightSource.current) -> np.ndarray:
        """
        One operator's weights flattened in layer order. Pooling yields its constant k×k
        kernel and identity an empty vector.
        """
        if spec.kind == OperatorKind.pooling:
            return np.full(spec.pool_size * spec.pool_size, 1.0 / (spec.pool_size * spec.pool_size))
        if spec.kind != OperatorKind.parametric:
            return np.zeros(0)
        values = self._source(source)
        try:
            return np.concatenate(
                [values[f"{layer_prefix(op, i)}.weight"].ravel() for i in range(len(spec.layer_shapes(1)))]
            )
        except KeyError:
            raise InvalidOperator(f"Weight store has no weights for operator {op}")

    def scale_operator(self, op: OperatorId, factor: float):
        for layer in self.weights.operators[op]:
            layer.weight.value = layer.weight.value * factor

    def snapshot(self) -> "WeightStore":
        """
        An independent copy for readers that run next to further training.
        """
        return copy.deepcopy(self)


def _freeze(values: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    out = {}
    for name, value in values.items():
        value = np.array(value, copy=True)
        value.setflags(write=False)
        out[name] = value
    return out


def _current_values(weights: NetworkWeights) -> Dict[str, np.ndarray]:
    return {name: param.value for name, param in weights.named_params()}


def init_supernet(
    space: SupernetGraph,
    policy: InitPolicy,
    seed: int,
    *,
    input_dim: int = 2,
    num_classes: int = 4,
) -> WeightStore:
    """
    Draw weights for every parametric operator of the space (live or not), the stem and
    the classifier. The init and base snapshots both start out as the drawn values.
    """
    rng = np.random.default_rng(seed)
    policy = InitPolicy(policy)
    stem = DenseLayer.create((input_dim, space.width), policy, rng, ParamRole.stem_weight)
    operators: Dict[OperatorId, List[DenseLayer]] = {}
    for op in space.all_operators():
        spec = space.operator(op)
        if spec.is_parametric:
            operators[op] = [
                DenseLayer.create(shape, policy, rng, ParamRole.operator_weight)
                for shape in spec.layer_shapes(space.width)
            ]
    weights = NetworkWeights(
        stem=stem,
        operators=operators,
        classifier_weight=ParamTensor(
            init_matrix((space.width, num_classes), policy, rng), ParamRole.classifier_weight
        ),
        classifier_bias=ParamTensor(np.zeros(num_classes), ParamRole.classifier_bias),
    )
    init_snapshot = _freeze(_current_values(weights))
    logger.debug("Initialized %d operators of space '%s' with %s", len(operators), space.name, policy)
    return WeightStore(
        space_hash=space.structure_hash(),
        weights=weights,
        init_snapshot=init_snapshot,
        base_snapshot=init_snapshot,
    )


def _check_store(store: WeightStore, space: SupernetGraph):
    if store.space_hash != space.structure_hash():
        raise SpaceMismatch(
            f"Weight store belongs to space {store.space_hash}, not to '{space.name}' ({space.structure_hash()})"
        )


def train_epoch(
    store: WeightStore,
    space: SupernetGraph,
    data: ToyDataset,
    cfg: TrainConfig,
    rng: np.random.Generator,
    *,
    lr: Optional[float] = None,
    child: Optional[ChildModel] = None,
    accept: Optional[Callable[[ChildModel], bool]] = None,
) -> TrainLogEntry:
    """
    One pass over the training data. Every batch samples one valid child uniformly (or
    uses ``child`` when given) and updates only that child's weights.

    :raises NumericalOverflow: If training diverges.
    """
    _check_store(store, space)
    lr = cfg.learning_rate if lr is None else lr
    losses = []
    updates: Counter = Counter()
    for inputs, labels in data.batches(cfg.batch_size, rng):
        picked = child if child is not None else sample_child(space, rng, accept=accept)
        loss, grads = loss_and_grads(picked, store.weights, inputs, labels)
        sgd_step(store.weights, grads, lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
        losses.append(loss)
        updates.update(str(OperatorId(e, picked.choices[e])) for e in picked.active_edges)
    store.epoch += 1
    entry = TrainLogEntry(
        epoch=store.epoch,
        lr=lr,
        loss_mean=float(np.mean(losses)) if losses else float("nan"),
        loss_std=float(np.std(losses)) if losses else float("nan"),
        batches=len(losses),
        updates=dict(sorted(updates.items())),
    )
    logger.debug("epoch %d: lr=%.4g loss=%.4f±%.4f", entry.epoch, lr, entry.loss_mean, entry.loss_std)
    return entry


def train_stage(
    store: WeightStore,
    space: SupernetGraph,
    data: ToyDataset,
    cfg: TrainConfig,
    epochs: int,
    rng: np.random.Generator,
    **kwargs,
) -> List[TrainLogEntry]:
    """
    Train for ``epochs`` epochs, following the config's schedule within the stage.
    """
    return [
        train_epoch(store, space, data, cfg, rng, lr=cfg.lr_at(epoch, epochs), **kwargs) for epoch in range(epochs)
    ]


def train_supernet(space: SupernetGraph, data: DataSplits, cfg: TrainConfig, seed: int) -> WeightStore:
    """
    Initialize a supernet and train it for ``cfg.first_stage_epochs`` epochs.
    """
    rng = np.random.default_rng(seed)
    store = init_supernet(
        space,
        cfg.init_policy,
        int(rng.integers(2**32)),
        input_dim=data.train.input_dim,
        num_classes=data.train.num_classes,
    )
    train_stage(store, space, data.train, cfg, cfg.first_stage_epochs, rng)
    return store


def eval_child_accuracy(
    child: ChildModel,
    store: WeightStore,
    data: DataSplits,
    with_rebn: bool = True,
    norms: Optional[Dict[str, NormState]] = None,
) -> float:
    """
    Validation accuracy of a child with inherited weights. With ``with_rebn`` the child's
    normalization statistics are first recomputed on the training split.
    """
    if not child.is_valid:
        raise InvalidChild(f"Child {child.encode()} has no path from root to leaf")
    if with_rebn and norms is None:
        norms = recalibrate_norm(child, store.weights, data.train)
    logits = forward(child, store.weights, data.validation.inputs, Mode.eval, norms=norms)
    return accuracy(logits, data.validation.labels)


def reset_base_weights(store: WeightStore, removed: Sequence[OperatorId] = ()) -> WeightStore:
    """
    Make the current weights the new angle reference. The init snapshot stays untouched.
    """
    store.base_snapshot = _freeze(_current_values(store.weights))
    store.reset_log.append(ResetEvent(epoch=store.epoch, removed=tuple(str(op) for op in removed)))
    logger.info("Reset base weights at epoch %d", store.epoch)
    return store


@dataclass
class StandaloneResult:
    child: ChildModel
    store: WeightStore
    accuracy: float
    angle: float
    losses: List[float]


def train_standalone(
    child: ChildModel,
    data: DataSplits,
    cfg: TrainConfig,
    seed: int,
) -> StandaloneResult:
    """
    Train one child from a fresh initialization for ``cfg.standalone_epochs`` epochs.

    The returned angle is measured against the child's own initialization; a child
    without any weights gets angle 0.
    """
    space = child.space
    if not child.is_valid:
        raise InvalidChild(f"Child {child.encode()} has no path from root to leaf")
    rng = np.random.default_rng(seed)
    init_seed = int(rng.integers(2**32))
    store = init_supernet(
        space,
        cfg.init_policy,
        init_seed,
        input_dim=data.train.input_dim,
        num_classes=data.train.num_classes,
    )
    log = train_stage(store, space, data.train, cfg, cfg.standalone_epochs, rng, child=child)
    acc = eval_child_accuracy(child, store, data, with_rebn=False)
    try:
        angle = angle_of_child(child, store, reference=Reference.init, mode=VectorMode.full_graph)
    except ZeroNormVector:
        angle = 0.0
    return StandaloneResult(child, store, acc, angle, [entry.loss_mean for entry in log])


def save_checkpoint(
    store: WeightStore,
    path: PathOrStr,
    rng: Optional[np.random.Generator] = None,
    *,
    config_hash: Optional[str] = None,
    seed: Optional[int] = None,
):
    """
    Write everything needed to resume training bit-exactly into one ``.npz`` archive.

    ``rng`` should be the generator the run continues with; ``config_hash`` and ``seed``
    only label the archive.
    """
    arrays: Dict[str, np.ndarray] = {}
    for name, param in store.weights.named_params():
        arrays[f"current:{name}"] = param.value
        if param.velocity is not None:
            arrays[f"velocity:{name}"] = param.velocity
    for name, norm in store.weights.named_norms():
        arrays[f"mean:{name}"] = norm.running_mean
        arrays[f"var:{name}"] = norm.running_var
    for name, value in store.init_snapshot.items():
        arrays[f"init:{name}"] = value
    for name, value in store.base_snapshot.items():
        arrays[f"base:{name}"] = value
    meta = {
        "schema": constants.CHECKPOINT_SCHEMA,
        "space_hash": store.space_hash,
        "epoch": store.epoch,
        "reset_log": [asdict(event) for event in store.reset_log],
        "rng": None if rng is None else rng.bit_generator.state,
        "config_hash": config_hash,
        "seed": seed,
    }
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    path = Path(path)
    try:
        path.parent.mkdir(exist_ok=True, parents=True)
        with open(path, "wb") as f:
            np.savez(f, **arrays)
    except OSError as exc:
        raise IoFailure(f"Failed to write checkpoint '{path}': {exc}")


def load_checkpoint(path: PathOrStr, space: SupernetGraph) -> Tuple[WeightStore, Optional[np.random.Generator]]:
    """
    :raises SpaceMismatch: If the checkpoint belongs to a different space.
    :raises SchemaError: If the checkpoint was written by an incompatible version.
    """
    try:
        with np.load(path, allow_pickle=False) as archive:
            arrays = {name: archive[name] for name in archive.files}
    except (OSError, ValueError) as exc:
        raise IoFailure(f"Failed to read checkpoint '{path}': {exc}")
    meta = json.loads(str(arrays.pop("meta")))
    check_schema(meta.get("schema"), constants.CHECKPOINT_SCHEMA, source=path)
    if meta["space_hash"] != space.structure_hash():
        raise SpaceMismatch(f"Checkpoint '{path}' belongs to space {meta['space_hash']}, not '{space.name}'")

    def layer(prefix: str, role: ParamRole) -> DenseLayer:
        built = DenseLayer(
            weight=ParamTensor(arrays[f"current:{prefix}.weight"], role),
            scale=ParamTensor(arrays[f"current:{prefix}.scale"], ParamRole.norm_scale),
            shift=ParamTensor(arrays[f"current:{prefix}.shift"], ParamRole.norm_shift),
            norm=NormState(arrays[f"mean:{prefix}.norm"], arrays[f"var:{prefix}.norm"]),
        )
        return built

    try:
        operators = {
            op: [
                layer(layer_prefix(op, i), ParamRole.operator_weight)
                for i in range(len(space.operator(op).layer_shapes(space.width)))
            ]
            for op in space.all_operators()
            if space.operator(op).is_parametric
        }
        weights = NetworkWeights(
            stem=layer("stem", ParamRole.stem_weight),
            operators=operators,
            classifier_weight=ParamTensor(arrays["current:classifier.weight"], ParamRole.classifier_weight),
            classifier_bias=ParamTensor(arrays["current:classifier.bias"], ParamRole.classifier_bias),
        )
    except KeyError as exc:
        raise IoFailure(f"Checkpoint '{path}' is missing array {exc}")
    for name, param in weights.named_params():
        velocity = arrays.get(f"velocity:{name}")
        if velocity is not None:
            param.velocity = velocity
    snapshot = {kind: {} for kind in ("init", "base")}  # type: Dict[str, Dict[str, np.ndarray]]
    for key, value in arrays.items():
        kind, _, name = key.partition(":")
        if kind in snapshot:
            snapshot[kind][name] = value
    store = WeightStore(
        space_hash=meta["space_hash"],
        weights=weights,
        init_snapshot=_freeze(snapshot["init"]),
        base_snapshot=_freeze(snapshot["base"]),
        epoch=int(meta["epoch"]),
        reset_log=[ResetEvent(event["epoch"], tuple(event["removed"])) for event in meta["reset_log"]],
    )
    rng = None
    if meta.get("rng") is not None:
        rng = np.random.default_rng()
        rng.bit_generator.state = meta["rng"]
    return store, rng
