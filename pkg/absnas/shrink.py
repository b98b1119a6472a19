"""
Operator scoring and the iterative search-space shrinking loop.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import TYPE_CHECKING, Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import constants
from .aliases import PathOrStr
from .angle import Reference, VectorMode, angle_of_child
from .data import DataSplits
from .exceptions import *
from .graph import ChildModel, OperatorId, SupernetGraph, sample_child, space_size
from .supernet import (
    TrainConfig,
    WeightStore,
    eval_child_accuracy,
    init_supernet,
    reset_base_weights,
    train_stage,
)
from .util import StrEnum, check_schema

if TYPE_CHECKING:
    from .bench import GroundTruthTable

logger = logging.getLogger(__name__)


class ScoreMetric(StrEnum):
    angle = "angle"
    accuracy = "accuracy"
    ground_truth = "ground_truth"


@dataclass
class ShrinkConfig:
    threshold: int = 100
    drop_per_iteration: int = 2
    samples_per_operator: int = 100
    reset_after: int = 4
    """Reset the angle reference once more than this many operators were removed since the last reset."""
    vector_mode: VectorMode = VectorMode.full_graph
    metric: ScoreMetric = ScoreMetric.angle
    max_removals: Optional[int] = None
    param_band: Optional[Tuple[int, int]] = None
    max_paths: int = constants.DEFAULT_MAX_PATHS
    workers: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        try:
            self.vector_mode = VectorMode(self.vector_mode)
            self.metric = ScoreMetric(self.metric)
        except ValueError as exc:
            raise ConfigurationError(f"shrink: {exc}")
        if isinstance(self.train, dict):
            self.train = TrainConfig.from_dict(self.train)
        if self.threshold < 1:
            raise ConfigurationError("shrink: 'threshold' must be >= 1")
        if self.drop_per_iteration < 1:
            raise ConfigurationError("shrink: 'drop_per_iteration' must be >= 1")
        if self.samples_per_operator < 1:
            raise ConfigurationError("shrink: 'samples_per_operator' must be >= 1")
        if self.reset_after < 0:
            raise ConfigurationError("shrink: 'reset_after' must be >= 0")
        if self.max_removals is not None and self.max_removals < 0:
            raise ConfigurationError("shrink: 'max_removals' must be >= 0")
        if self.param_band is not None:
            lo, hi = self.param_band
            if lo > hi:
                raise ConfigurationError("shrink: 'param_band' must be [low, high] with low <= high")
            self.param_band = (int(lo), int(hi))
        if self.workers < 1:
            raise ConfigurationError("shrink: 'workers' must be >= 1")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ShrinkConfig":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"shrink: unknown keys {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["vector_mode"] = str(self.vector_mode)
        out["metric"] = str(self.metric)
        out["param_band"] = None if self.param_band is None else list(self.param_band)
        out["train"] = self.train.to_dict()
        return out

    def acceptor(self) -> Optional[Callable[[ChildModel], bool]]:
        if self.param_band is None:
            return None
        lo, hi = self.param_band
        return lambda child: lo <= child.param_count() <= hi


@dataclass
class OperatorScore:
    op: OperatorId
    score: float
    count: int
    std: float

    def to_dict(self) -> Dict[str, Any]:
        return {"op": str(self.op), "score": self.score, "count": self.count, "std": self.std}


@dataclass
class IterationRecord:
    iteration: int
    scores: List[OperatorScore]
    removed: List[OperatorId]
    shortfall: int
    size_before: int
    size_after: int
    reset: bool = False
    losses: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "iteration": self.iteration,
            "scores": [score.to_dict() for score in self.scores],
            "removed": [str(op) for op in self.removed],
            "shortfall": self.shortfall,
            "size_before": self.size_before,
            "size_after": self.size_after,
            "reset": self.reset,
            "losses": self.losses,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "IterationRecord":
        return cls(
            iteration=data["iteration"],
            scores=[
                OperatorScore(OperatorId.parse(s["op"]), s["score"], s["count"], s["std"]) for s in data["scores"]
            ],
            removed=[OperatorId.parse(op) for op in data["removed"]],
            shortfall=data["shortfall"],
            size_before=data["size_before"],
            size_after=data["size_after"],
            reset=data["reset"],
            losses=data["losses"],
        )


class StopReason(StrEnum):
    threshold = "threshold"
    max_removals = "max-removals"
    no_removable = "no-removable"


@dataclass
class ShrinkState:
    initial_space: SupernetGraph
    space: SupernetGraph
    records: List[IterationRecord] = field(default_factory=list)
    terminated: bool = False
    stop_reason: Optional[StopReason] = None
    removed_since_reset: int = 0
    store: Optional[WeightStore] = field(default=None, repr=False, compare=False)
    rng: Optional[np.random.Generator] = field(default=None, repr=False, compare=False)
    """The generator the run draws from; checkpoint it to continue the run."""

    @property
    def removed(self) -> List[OperatorId]:
        return [op for record in self.records for op in record.removed]


def score_operator(
    op: OperatorId,
    space: SupernetGraph,
    store: WeightStore,
    n: int,
    rng: np.random.Generator,
    *,
    metric: ScoreMetric = ScoreMetric.angle,
    mode: VectorMode = VectorMode.full_graph,
    data: Optional[DataSplits] = None,
    table: Optional["GroundTruthTable"] = None,
    accept: Optional[Callable[[ChildModel], bool]] = None,
    max_paths: int = constants.DEFAULT_MAX_PATHS,
) -> OperatorScore:
    """
    Estimate an operator's score as the mean metric over ``n`` children sampled uniformly
    among those containing it. Ground-truth scores average the whole table instead.

    Children without any weights count with angle 0.

    :raises SamplingExhausted: If no valid child containing ``op`` can be sampled.
    """
    metric = ScoreMetric(metric)
    if n < 1:
        raise ConfigurationError(f"Need at least one sample per operator, got {n}")
    if metric == ScoreMetric.ground_truth:
        if table is None:
            raise MissingBenchmark("Ground-truth scoring needs a benchmark table")
        values = table.operator_accuracies(op)
    else:
        if metric == ScoreMetric.accuracy and data is None:
            raise ConfigurationError("Accuracy scoring needs the dataset")
        samples = []
        for _ in range(n):
            child = sample_child(space, rng, containing=op, accept=accept)
            if metric == ScoreMetric.accuracy:
                assert data is not None
                samples.append(eval_child_accuracy(child, store, data, with_rebn=True))
                continue
            try:
                samples.append(angle_of_child(child, store, Reference.base, mode, max_paths))
            except EmptyVector:
                samples.append(0.0)
        values = np.asarray(samples)
    std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
    return OperatorScore(op, float(np.mean(values)), len(values), std)


def score_operators(
    space: SupernetGraph,
    store: WeightStore,
    cfg: ShrinkConfig,
    rng: np.random.Generator,
    data: Optional[DataSplits] = None,
    table: Optional["GroundTruthTable"] = None,
) -> List[OperatorScore]:
    """
    Score every live operator. Each operator samples from its own stream spawned off
    ``rng``, so the result doesn't depend on ``cfg.workers``.
    """
    ops = space.live_operators()
    streams = np.random.SeedSequence(int(rng.integers(2**63))).spawn(len(ops))
    accept = cfg.acceptor()

    def score(index: int) -> OperatorScore:
        return score_operator(
            ops[index],
            space,
            store,
            cfg.samples_per_operator,
            np.random.default_rng(streams[index]),
            metric=cfg.metric,
            mode=cfg.vector_mode,
            data=data,
            table=table,
            accept=accept,
            max_paths=cfg.max_paths,
        )

    if cfg.workers > 1 and len(ops) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as executor:
            return list(executor.map(score, range(len(ops))))
    return [score(index) for index in range(len(ops))]


def removable_operators(space: SupernetGraph) -> List[OperatorId]:
    return [op for op in space.live_operators() if len(space.edges[op.edge].candidates) > 1]


def select_removals(
    space: SupernetGraph, scores: Sequence[OperatorScore], k: int
) -> Tuple[List[OperatorId], int]:
    """
    Pick up to ``k`` operators to remove, lowest score first with ties going to the smaller
    operator id. A candidate is skipped, and the next-lowest taken instead, when removing
    it would empty its edge or leave no root-to-leaf path of non-none operators. The same
    goes for cutting the last path whose edges all keep a live parametric operator.

    Returns the removals in selection order and the shortfall against ``k``.
    """
    removed: List[OperatorId] = []
    current = space
    keep_parametric = space.has_parametric_path()
    for entry in sorted(scores, key=lambda s: (s.score, s.op)):
        if len(removed) == k:
            break
        if len(current.edges[entry.op.edge].candidates) < 2:
            continue
        candidate = current.without([entry.op])
        if not candidate.connected_without_none():
            continue
        if keep_parametric and not candidate.has_parametric_path():
            continue
        removed.append(entry.op)
        current = candidate
    return removed, k - len(removed)


def shrink_step(
    state: ShrinkState,
    store: WeightStore,
    cfg: ShrinkConfig,
    data: DataSplits,
    rng: np.random.Generator,
    table: Optional["GroundTruthTable"] = None,
) -> ShrinkState:
    """
    One shrinking iteration: train the supernet for the stage, score every live operator
    and remove the lowest-scoring ones.

    :raises NoRemovableOperator: If no live operator can be removed.
    """
    space = state.space
    if not removable_operators(space):
        raise NoRemovableOperator(f"Every edge of space '{space.name}' is down to its last operator")
    k = cfg.drop_per_iteration
    if cfg.max_removals is not None:
        k = min(k, cfg.max_removals - len(state.removed))

    losses: List[float] = []
    if cfg.metric != ScoreMetric.ground_truth:
        epochs = cfg.train.later_stage_epochs if state.records else cfg.train.first_stage_epochs
        log = train_stage(store, space, data.train, cfg.train, epochs, rng, accept=cfg.acceptor())
        losses = [entry.loss_mean for entry in log]

    scores = score_operators(space, store, cfg, rng, data=data, table=table)
    for score in scores:
        logger.debug("operator %s: score=%.6f (n=%d, std=%.6f)", score.op, score.score, score.count, score.std)
    removed, shortfall = select_removals(space, scores, k)
    if not removed:
        raise NoRemovableOperator(f"Every remaining removal would disconnect space '{space.name}'")

    shrunk = space.without(removed)
    state.removed_since_reset += len(removed)
    reset = state.removed_since_reset > cfg.reset_after
    if reset:
        reset_base_weights(store, removed)
        state.removed_since_reset = 0
    record = IterationRecord(
        iteration=len(state.records),
        scores=scores,
        removed=removed,
        shortfall=shortfall,
        size_before=space_size(space),
        size_after=space_size(shrunk),
        reset=reset,
        losses=losses,
    )
    logger.info(
        "Iteration %d removed %s, space size %d -> %d",
        record.iteration,
        ", ".join(str(op) for op in removed),
        record.size_before,
        record.size_after,
    )
    if shortfall:
        logger.warning("Iteration %d removed %d operator(s) fewer than asked", record.iteration, shortfall)
    state.records.append(record)
    state.space = shrunk
    return state


def run_abs(
    space: SupernetGraph,
    cfg: ShrinkConfig,
    data: DataSplits,
    seed: int,
    table: Optional["GroundTruthTable"] = None,
    store: Optional[WeightStore] = None,
) -> ShrinkState:
    """
    Shrink ``space`` until its size is at most ``cfg.threshold``, ``cfg.max_removals``
    operators are gone, or nothing more can be removed.
    """
    rng = np.random.default_rng(seed)
    if store is None:
        store = init_supernet(
            space,
            cfg.train.init_policy,
            int(rng.integers(2**32)),
            input_dim=data.train.input_dim,
            num_classes=data.train.num_classes,
        )
    state = ShrinkState(initial_space=space, space=space, store=store, rng=rng)
    while True:
        if space_size(state.space) <= cfg.threshold:
            state.stop_reason = StopReason.threshold
            break
        if cfg.max_removals is not None and len(state.removed) >= cfg.max_removals:
            state.stop_reason = StopReason.max_removals
            break
        try:
            shrink_step(state, store, cfg, data, rng, table=table)
        except NoRemovableOperator as exc:
            logger.info("Stopping: %s", exc)
            state.stop_reason = StopReason.no_removable
            break
    state.terminated = True
    logger.info(
        "Shrinking finished after %d iteration(s) (%s), final size %d",
        len(state.records),
        state.stop_reason,
        space_size(state.space),
    )
    return state


def write_shrink_log(state: ShrinkState, path: PathOrStr, *, config_hash: str, seed: int):
    """
    One JSON header line followed by one line per iteration.
    """
    header = {
        "schema": constants.SHRINK_LOG_SCHEMA,
        "config_hash": config_hash,
        "seed": seed,
        "space_hash": state.initial_space.space_hash(),
        "final_space_hash": state.space.space_hash(),
        "stop_reason": None if state.stop_reason is None else str(state.stop_reason),
        "resets": [asdict(event) for event in state.store.reset_log] if state.store is not None else [],
    }
    path = Path(path)
    try:
        path.parent.mkdir(exist_ok=True, parents=True)
        with open(path, "w") as f:
            f.write(json.dumps(header, sort_keys=True) + "\n")
            for record in state.records:
                f.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
    except OSError as exc:
        raise IoFailure(f"Failed to write shrink log '{path}': {exc}")


def read_shrink_log(path: PathOrStr) -> Tuple[Dict[str, Any], List[IterationRecord]]:
    try:
        with open(path) as f:
            lines = [json.loads(line) for line in f if line.strip()]
    except OSError as exc:
        raise IoFailure(f"Failed to read shrink log '{path}': {exc}")
    except json.JSONDecodeError as exc:
        raise IoFailure(f"Malformed shrink log '{path}': {exc}")
    if not lines:
        raise IoFailure(f"Shrink log '{path}' is empty")
    check_schema(lines[0].get("schema"), constants.SHRINK_LOG_SCHEMA, source=path)
    return lines[0], [IterationRecord.from_dict(line) for line in lines[1:]]
