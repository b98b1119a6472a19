"""
Ranking statistics and the experiments that measure how well a metric ranks children.
"""

import itertools
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import constants
from .angle import Reference, VectorMode, angle_of_child
from .bench import GroundTruthTable, ground_truth_operator_score, iter_valid_children
from .data import DataSplits
from .exceptions import *
from .graph import ChildModel, OperatorId, SupernetGraph, sample_child
from .nnet import recalibrate_norm
from .shrink import ScoreMetric, ShrinkConfig, run_abs
from .supernet import TrainConfig, WeightStore, eval_child_accuracy, init_supernet, train_epoch
from .util import StrEnum

logger = logging.getLogger(__name__)


class RankMetric(StrEnum):
    angle = "angle"
    accuracy = "accuracy"
    """Validation accuracy with inherited weights after recalibrating normalization."""
    random = "random"


def tau_a(x: Sequence[float], y: Sequence[float]) -> float:
    """
    Kendall's tau-a of two paired samples: (concordant − discordant) / (n(n−1)/2).
    A pair tied in either sample counts as neither.

    :raises LengthMismatch: If the samples differ in length or have fewer than 2 items.
    """
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise LengthMismatch(f"Can't correlate samples of shapes {a.shape} and {b.shape}")
    n = len(a)
    if n < 2:
        raise LengthMismatch(f"Need at least 2 items to correlate, got {n}")
    upper = np.triu_indices(n, k=1)
    signs = np.sign(a[:, None] - a[None, :])[upper] * np.sign(b[:, None] - b[None, :])[upper]
    return float(signs.sum() / (n * (n - 1) / 2))


def kendalls_tau(a: Sequence[int], b: Sequence[int]) -> float:
    """
    Kendall's tau between two rankings of the same items, each given as the rank of
    every item.

    :raises LengthMismatch: If the rankings differ in length, have fewer than 2 items,
        or aren't permutations of the same ranks.
    """
    if len(a) != len(b):
        raise LengthMismatch(f"Rankings have different lengths ({len(a)} and {len(b)})")
    if len(set(a)) != len(a) or len(set(b)) != len(b) or sorted(a) != sorted(b):
        raise LengthMismatch("Both arguments must be rankings of the same items")
    return tau_a(a, b)


def rank_order(values: Sequence[float], keys: Sequence[Tuple[int, ...]]) -> List[int]:
    """
    Indices sorted by descending value; equal values keep ascending key order.
    """
    return sorted(range(len(values)), key=lambda i: (-values[i], keys[i]))


@dataclass
class RankingReport:
    metric: RankMetric
    children: List[str]
    values: List[float]
    ground_truth: List[float]
    tau: float
    seed: int
    epoch: int
    ties: int = 0
    """Number of child pairs whose metric values tie."""
    empty_vectors: int = 0
    """Children without weights, counted with angle 0."""

    @property
    def degenerate(self) -> bool:
        return len(set(self.values)) <= 1

    def ranking(self) -> List[str]:
        keys = [tuple(int(s) for s in c.split(".")) for c in self.children]
        return [self.children[i] for i in rank_order(self.values, keys)]


@dataclass
class StabilityReport:
    metric: str
    taus: List[float]
    mean: float
    std: float
    range: float

    @property
    def variance(self) -> float:
        return self.std**2


@dataclass
class TimingReport:
    metric: str
    seconds: List[float]
    repetitions: int
    num_children: int

    @property
    def mean(self) -> float:
        return float(np.mean(self.seconds))

    @property
    def std(self) -> float:
        return float(np.std(self.seconds, ddof=1)) if len(self.seconds) > 1 else 0.0


def _tie_pairs(values: Sequence[float]) -> int:
    _, counts = np.unique(np.asarray(values), return_counts=True)
    return int(sum(c * (c - 1) // 2 for c in counts))


def metric_values(
    children: Sequence[ChildModel],
    metric: RankMetric,
    store: WeightStore,
    data: Optional[DataSplits] = None,
    seed: int = 0,
    mode: VectorMode = VectorMode.full_graph,
) -> Tuple[List[float], int]:
    """
    Evaluate a metric on every child. Returns the values and how many children had an
    empty weight vector.
    """
    metric = RankMetric(metric)
    if metric == RankMetric.random:
        return list(np.random.default_rng(seed).random(len(children))), 0
    if metric == RankMetric.accuracy:
        if data is None:
            raise ConfigurationError("The accuracy metric needs the dataset")
        return [eval_child_accuracy(child, store, data, with_rebn=True) for child in children], 0
    values, empty = [], 0
    for child in children:
        try:
            values.append(angle_of_child(child, store, Reference.base, mode))
        except EmptyVector:
            values.append(0.0)
            empty += 1
    return values, empty


def rank_children_by_metric(
    children: Sequence[ChildModel],
    metric: RankMetric,
    store: WeightStore,
    table: GroundTruthTable,
    data: Optional[DataSplits] = None,
    seed: int = 0,
    mode: VectorMode = VectorMode.full_graph,
) -> RankingReport:
    """
    Evaluate ``metric`` on every child and correlate it with the ground-truth accuracies.
    """
    values, empty = metric_values(children, metric, store, data, seed, mode)
    truth = [table.accuracy(child) for child in children]
    report = RankingReport(
        metric=RankMetric(metric),
        children=[child.encode() for child in children],
        values=[float(v) for v in values],
        ground_truth=truth,
        tau=tau_a(values, truth),
        seed=seed,
        epoch=store.epoch,
        ties=_tie_pairs(values),
        empty_vectors=empty,
    )
    if report.degenerate:
        logger.warning("All %d children tie under the %s metric", len(children), report.metric)
    return report


def stability_report(metric: str, taus: Sequence[float]) -> StabilityReport:
    if not taus:
        raise LengthMismatch("Need at least one tau for a stability report")
    values = [float(t) for t in taus]
    return StabilityReport(
        metric=str(metric),
        taus=values,
        mean=float(np.mean(values)),
        std=float(np.std(values, ddof=1)) if len(values) > 1 else 0.0,
        range=max(values) - min(values),
    )


def ranking_children(space: SupernetGraph, cap: int = constants.DEFAULT_CHILD_CAP, seed: int = 0) -> List[ChildModel]:
    """
    Every valid child when there are at most ``cap``, otherwise a fixed uniform sample of
    ``cap`` distinct ones (in encoding order either way).
    """
    children = list(itertools.islice(iter_valid_children(space), cap + 1))
    if len(children) <= cap:
        return children
    rng = np.random.default_rng(seed)
    picked: Dict[Tuple[int, ...], ChildModel] = {}
    while len(picked) < cap:
        child = sample_child(space, rng)
        picked.setdefault(child.encoding, child)
    return [picked[key] for key in sorted(picked)]


@dataclass
class ConvergencePoint:
    epoch: int
    tau: float
    degenerate: bool


@dataclass
class ConvergenceCurves:
    seed: int
    curves: Dict[str, List[ConvergencePoint]] = field(default_factory=dict)


def convergence_curve(
    space: SupernetGraph,
    data: DataSplits,
    cfg: TrainConfig,
    table: GroundTruthTable,
    metrics: Sequence[RankMetric],
    probe_epochs: Sequence[int],
    seed: int,
    children: Optional[Sequence[ChildModel]] = None,
) -> ConvergenceCurves:
    """
    Train a supernet from scratch and, at every probe epoch, correlate each metric with
    the ground truth on a fixed set of children.
    """
    if list(probe_epochs) != sorted(probe_epochs) or any(e < 0 for e in probe_epochs):
        raise ConfigurationError("Probe epochs must be non-negative and sorted ascending")
    if children is None:
        children = ranking_children(space, seed=seed)
    rng = np.random.default_rng(seed)
    store = init_supernet(
        space,
        cfg.init_policy,
        int(rng.integers(2**32)),
        input_dim=data.train.input_dim,
        num_classes=data.train.num_classes,
    )
    total = max(probe_epochs, default=0)
    result = ConvergenceCurves(seed=seed, curves={str(RankMetric(m)): [] for m in metrics})
    for probe in probe_epochs:
        while store.epoch < probe:
            train_epoch(store, space, data.train, cfg, rng, lr=cfg.lr_at(store.epoch, total))
        for metric in metrics:
            report = rank_children_by_metric(children, metric, store, table, data, seed=seed)
            result.curves[str(RankMetric(metric))].append(ConvergencePoint(probe, report.tau, report.degenerate))
            logger.info("epoch %d: %s tau=%.4f", probe, metric, report.tau)
    return result


def timing_comparison(
    children: Sequence[ChildModel],
    store: WeightStore,
    data: DataSplits,
    repetitions: int = 3,
    mode: VectorMode = VectorMode.full_graph,
) -> Tuple[TimingReport, TimingReport]:
    """
    Wall-clock the angle metric and the re-BN accuracy metric over the same children.
    """
    if repetitions < 3:
        raise ConfigurationError(f"Timing needs at least 3 repetitions, got {repetitions}")
    if not children:
        raise ConfigurationError("Timing needs at least one child")
    angle_times, accuracy_times = [], []
    for _ in range(repetitions):
        start = time.perf_counter()
        metric_values(children, RankMetric.angle, store, mode=mode)
        angle_times.append(time.perf_counter() - start)
        start = time.perf_counter()
        for child in children:
            norms = recalibrate_norm(child, store.weights, data.train)
            eval_child_accuracy(child, store, data, norms=norms)
        accuracy_times.append(time.perf_counter() - start)
    return (
        TimingReport(str(RankMetric.angle), angle_times, repetitions, len(children)),
        TimingReport(str(RankMetric.accuracy), accuracy_times, repetitions, len(children)),
    )


@dataclass
class SelectionRun:
    metric: str
    seed: int
    removed: List[OperatorId]
    reserved: List[OperatorId]
    mean_reserved_rank: float
    """Mean ground-truth rank (0 = best) of the reserved operators."""
    top_overlap: int
    """How many reserved operators are among the equally many best ground-truth operators."""


@dataclass
class SelectionReport:
    drop_count: int
    ground_truth: Dict[str, float]
    gt_rank: Dict[str, int]
    runs: List[SelectionRun]


def operator_selection_report(
    space: SupernetGraph,
    table: GroundTruthTable,
    data: DataSplits,
    cfg: ShrinkConfig,
    drop_count: int,
    seeds: Sequence[int],
    metrics: Sequence[ScoreMetric] = (ScoreMetric.angle, ScoreMetric.accuracy, ScoreMetric.ground_truth),
) -> SelectionReport:
    """
    Shrink with each metric until ``drop_count`` operators are gone and compare the
    reserved operators with the ground-truth operator ranking.
    """
    ops = space.live_operators()
    scores = {op: ground_truth_operator_score(table, op) for op in ops}
    ordered = sorted(ops, key=lambda op: (-scores[op], op))
    gt_rank = {op: rank for rank, op in enumerate(ordered)}
    runs = []
    for metric in metrics:
        run_cfg = replace(cfg, metric=ScoreMetric(metric), max_removals=drop_count, threshold=1)
        for seed in seeds:
            state = run_abs(space, run_cfg, data, seed, table=table)
            reserved = state.space.live_operators()
            top = set(ordered[: len(reserved)])
            runs.append(
                SelectionRun(
                    metric=str(ScoreMetric(metric)),
                    seed=seed,
                    removed=state.removed,
                    reserved=reserved,
                    mean_reserved_rank=float(np.mean([gt_rank[op] for op in reserved])),
                    top_overlap=len(top.intersection(reserved)),
                )
            )
    return SelectionReport(
        drop_count=drop_count,
        ground_truth={str(op): scores[op] for op in ordered},
        gt_rank={str(op): gt_rank[op] for op in ordered},
        runs=runs,
    )


def standalone_correlation(table: GroundTruthTable) -> float:
    """
    Tau between each child's standalone angle and its standalone accuracy.
    """
    records = list(table.records.values())
    return tau_a([r.angle for r in records], [r.accuracy for r in records])
