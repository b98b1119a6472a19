"""
Brute-force ground truth for toy search spaces: every valid child trained standalone.
"""

import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import constants
from .aliases import PathOrStr
from .data import DataSplits
from .exceptions import *
from .graph import ChildModel, OperatorId, SupernetGraph
from .supernet import TrainConfig, train_standalone
from .util import check_schema, read_json, write_json

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BenchRecord:
    encoding: Tuple[int, ...]
    accuracy: float
    seed: int
    angle: float
    """Angle of the trained child against its own initialization."""

    @property
    def child_id(self) -> str:
        return ".".join(str(slot) for slot in self.encoding)


@dataclass
class GroundTruthTable:
    space: SupernetGraph
    records: Dict[Tuple[int, ...], BenchRecord]
    train: TrainConfig
    seed: int
    data: Dict[str, Any] = field(default_factory=dict)
    config_hash: Optional[str] = None

    def __post_init__(self):
        for record in self.records.values():
            if not 0.0 <= record.accuracy <= 1.0:
                raise SchemaError(f"Accuracy of child {record.child_id} is outside [0, 1]")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def space_hash(self) -> str:
        return self.space.space_hash()

    def child(self, encoding: Sequence[int]) -> ChildModel:
        return ChildModel(self.space, tuple(encoding))

    def accuracy(self, child: ChildModel) -> float:
        try:
            return self.records[child.encoding].accuracy
        except KeyError:
            raise InvalidChild(f"Child {child.encode()} isn't in the benchmark table")

    def records_within(self, space: Optional[SupernetGraph] = None) -> List[BenchRecord]:
        """
        Records of the children lying in ``space`` (a subspace of the table's space), in
        encoding order.
        """
        if space is None:
            return list(self.records.values())
        if not space.is_subspace_of(self.space):
            raise SpaceMismatch(f"Space '{space.name}' isn't a subspace of the benchmark's space")
        live = [set(edge.candidates) for edge in space.edges]
        return [
            record
            for record in self.records.values()
            if all(slot in allowed for slot, allowed in zip(record.encoding, live))
        ]

    def operator_accuracies(self, op: OperatorId) -> np.ndarray:
        """
        Accuracies of every child in the table containing ``op``.

        :raises EmptySubspace: If no valid child contains ``op``.
        """
        self.space.operator(op)
        values = [r.accuracy for r in self.records.values() if r.encoding[op.edge] == op.slot]
        if not values:
            raise EmptySubspace(f"No valid child contains operator {op}")
        return np.asarray(values)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema": constants.BENCH_SCHEMA,
            "space": self.space.to_dict(),
            "space_hash": self.space_hash,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "train": self.train.to_dict(),
            "data": self.data,
            "records": [
                {"child": r.child_id, "accuracy": r.accuracy, "seed": r.seed, "angle": r.angle}
                for r in self.records.values()
            ],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], source: PathOrStr = "<table>") -> "GroundTruthTable":
        check_schema(data.get("schema"), constants.BENCH_SCHEMA, source=source)
        space = SupernetGraph.from_dict(data["space"])
        if space.space_hash() != data["space_hash"]:
            raise SchemaError(f"Benchmark table '{source}' has an inconsistent space hash")
        records = {}
        for raw in data["records"]:
            encoding = tuple(int(slot) for slot in raw["child"].split("."))
            records[encoding] = BenchRecord(encoding, float(raw["accuracy"]), int(raw["seed"]), float(raw["angle"]))
        return cls(
            space,
            records,
            TrainConfig.from_dict(data["train"]),
            int(data["seed"]),
            data.get("data") or {},
            data.get("config_hash"),
        )


def save_table(table: GroundTruthTable, path: PathOrStr):
    write_json(path, table.to_dict())


def load_table(path: PathOrStr, space: Optional[SupernetGraph] = None) -> GroundTruthTable:
    """
    :raises MissingBenchmark: If there's no table at ``path``.
    :raises SpaceMismatch: If the table was generated for a different space than ``space``.
    """
    try:
        data = read_json(path)
    except IoFailure as exc:
        raise MissingBenchmark(f"Can't load benchmark table: {exc}")
    table = GroundTruthTable.from_dict(data, source=path)
    if space is not None and space.space_hash() != table.space_hash:
        raise SpaceMismatch(
            f"Benchmark table '{path}' was generated for space {table.space_hash}, "
            f"not for '{space.name}' ({space.space_hash()})"
        )
    return table


def child_seed(seed: int, encoding: Sequence[int]) -> int:
    return int(np.random.SeedSequence([seed, *encoding]).generate_state(1)[0])


def iter_valid_children(space: SupernetGraph) -> Iterator[ChildModel]:
    for choices in itertools.product(*(edge.candidates for edge in space.edges)):
        child = ChildModel(space, choices)
        if child.is_valid:
            yield child


def _train_one(args: Tuple[ChildModel, DataSplits, TrainConfig, int]) -> Tuple[float, float]:
    child, data, cfg, seed = args
    result = train_standalone(child, data, cfg, seed)
    return result.accuracy, result.angle


def generate_benchmark(
    space: SupernetGraph,
    data: DataSplits,
    cfg: TrainConfig,
    seed: int,
    *,
    cap: int = constants.DEFAULT_CHILD_CAP,
    workers: int = 1,
    data_config: Optional[Dict[str, Any]] = None,
    config_hash: Optional[str] = None,
    progress: Optional[Callable[[int, int], None]] = None,
) -> GroundTruthTable:
    """
    Train every valid child of ``space`` standalone and record its validation accuracy.

    Each child's training seed derives from ``seed`` and its encoding, so results don't
    depend on ``workers``.

    :raises CapExceeded: If the space has more than ``cap`` valid children.
    """
    children = list(itertools.islice(iter_valid_children(space), cap + 1))
    if len(children) > cap:
        raise CapExceeded(f"Space '{space.name}' has more than {cap} valid children")
    seeds = [child_seed(seed, child.encoding) for child in children]
    jobs = [(child, data, cfg, s) for child, s in zip(children, seeds)]
    logger.info("Training %d children of space '%s' with %d worker(s)", len(jobs), space.name, workers)

    results: List[Tuple[float, float]] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            for result in executor.map(_train_one, jobs, chunksize=8):
                results.append(result)
                if progress is not None:
                    progress(len(results), len(jobs))
    else:
        for job in jobs:
            results.append(_train_one(job))
            if progress is not None:
                progress(len(results), len(jobs))

    records = {
        child.encoding: BenchRecord(child.encoding, acc, s, angle)
        for child, s, (acc, angle) in zip(children, seeds, results)
    }
    return GroundTruthTable(space, records, cfg, seed, data_config or {}, config_hash)


def ground_truth_operator_score(table: GroundTruthTable, op: OperatorId) -> float:
    """
    Mean ground-truth accuracy of every valid child containing ``op``.
    """
    return float(np.mean(table.operator_accuracies(op)))


def best_in_space(table: GroundTruthTable, subspace: Optional[SupernetGraph] = None) -> Tuple[ChildModel, float]:
    """
    The most accurate child within ``subspace``; ties go to the smaller encoding.

    :raises EmptySubspace: If the subspace contains no child of the table.
    """
    best: Optional[BenchRecord] = None
    for record in table.records_within(subspace):
        if best is None or (record.accuracy, _neg(record.encoding)) > (best.accuracy, _neg(best.encoding)):
            best = record
    if best is None:
        raise EmptySubspace(f"No benchmarked child lies in space '{subspace.name if subspace else table.space.name}'")
    return ChildModel(subspace or table.space, best.encoding), best.accuracy


def _neg(encoding: Tuple[int, ...]) -> Tuple[int, ...]:
    return tuple(-slot for slot in encoding)


@dataclass
class ShrunkSpaceCatalog:
    parent: SupernetGraph
    spaces: List[SupernetGraph]

    def __iter__(self):
        return iter(self.spaces)

    def __len__(self) -> int:
        return len(self.spaces)

    def names(self) -> List[str]:
        return [space.name for space in self.spaces]


def shrunk_space_catalog(parent: SupernetGraph) -> ShrunkSpaceCatalog:
    """
    The parent space, one space per operator label with that label dropped everywhere,
    and the parametric-only and non-parametric-only spaces. Spaces that would empty an
    edge or lose every root-to-leaf path are skipped, as are duplicates.
    """
    live = parent.live_operators()
    labels = sorted({parent.operator(op).label for op in live})
    variants: List[Tuple[str, List[OperatorId]]] = [
        (f"without-{label}", [op for op in live if parent.operator(op).label == label]) for label in labels
    ]
    variants.append(("parametric-only", [op for op in live if not parent.operator(op).is_parametric]))
    variants.append(("non-parametric-only", [op for op in live if parent.operator(op).is_parametric]))

    spaces = [parent]
    seen = {parent.space_hash()}
    for name, drop in variants:
        remaining = [
            [slot for slot in edge.candidates if OperatorId(e, slot) not in drop]
            for e, edge in enumerate(parent.edges)
        ]
        if not drop or not all(remaining):
            continue
        space = parent.restrict(remaining, name=name)
        if not space.connected_without_none() or space.space_hash() in seen:
            continue
        seen.add(space.space_hash())
        spaces.append(space)
    return ShrunkSpaceCatalog(parent, spaces)
