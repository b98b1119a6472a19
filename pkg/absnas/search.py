"""
Budgeted searchers over a ground-truth table, used to compare search spaces.
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, List, Optional, Sequence

import numpy as np

from .bench import BenchRecord, GroundTruthTable, best_in_space
from .exceptions import *
from .graph import SupernetGraph

logger = logging.getLogger(__name__)


@dataclass
class SearchResult:
    best: str
    accuracy: float
    evaluations: int
    trend: List[float] = field(default_factory=list)
    """Best accuracy found after each evaluation."""


def _better(a: BenchRecord, b: Optional[BenchRecord]) -> bool:
    if b is None:
        return True
    return a.accuracy > b.accuracy or (a.accuracy == b.accuracy and a.encoding < b.encoding)


def _candidates(table: GroundTruthTable, space: SupernetGraph) -> List[BenchRecord]:
    records = table.records_within(space)
    if not records:
        raise EmptySubspace(f"No benchmarked child lies in space '{space.name}'")
    return records


def exhaustive_best(table: GroundTruthTable, space: SupernetGraph) -> SearchResult:
    child, acc = best_in_space(table, space)
    n = len(table.records_within(space))
    return SearchResult(child.encode(), acc, n)


def random_search(
    table: GroundTruthTable, space: SupernetGraph, budget: int, rng: np.random.Generator
) -> SearchResult:
    """
    Look up ``budget`` distinct children drawn uniformly from the space and keep the best.
    """
    if budget < 1:
        raise ConfigurationError(f"Search budget must be >= 1, got {budget}")
    records = _candidates(table, space)
    picks = rng.choice(len(records), size=min(budget, len(records)), replace=False)
    best: Optional[BenchRecord] = None
    trend = []
    for index in picks:
        if _better(records[index], best):
            best = records[index]
        assert best is not None
        trend.append(best.accuracy)
    assert best is not None
    return SearchResult(best.child_id, best.accuracy, len(picks), trend)


def evolutionary_search(
    table: GroundTruthTable,
    space: SupernetGraph,
    budget: int,
    rng: np.random.Generator,
    population: int = 10,
    tournament: int = 3,
) -> SearchResult:
    """
    Regularized evolution: each step the best of ``tournament`` random members of the
    population is mutated on one edge, the offspring joins and the oldest member leaves.
    """
    if budget < 1:
        raise ConfigurationError(f"Search budget must be >= 1, got {budget}")
    if population < 1 or not 1 <= tournament <= population:
        raise ConfigurationError("Need population >= 1 and 1 <= tournament <= population")
    records = _candidates(table, space)
    by_encoding = {r.encoding: r for r in records}
    mutable = [e for e, edge in enumerate(space.edges) if len(edge.candidates) > 1]

    best: Optional[BenchRecord] = None
    trend: List[float] = []

    def evaluate(record: BenchRecord):
        nonlocal best
        if _better(record, best):
            best = record
        assert best is not None
        trend.append(best.accuracy)

    members: Deque[BenchRecord] = deque()
    for index in rng.choice(len(records), size=min(population, len(records), budget), replace=False):
        members.append(records[index])
        evaluate(records[index])

    while len(trend) < budget and mutable:
        contenders = rng.choice(len(members), size=min(tournament, len(members)), replace=False)
        parent = max((members[i] for i in contenders), key=lambda r: (r.accuracy, tuple(-s for s in r.encoding)))
        offspring = None
        for _ in range(100):
            edge = mutable[int(rng.integers(len(mutable)))]
            options = [s for s in space.edges[edge].candidates if s != parent.encoding[edge]]
            encoding = list(parent.encoding)
            encoding[edge] = options[int(rng.integers(len(options)))]
            offspring = by_encoding.get(tuple(encoding))
            if offspring is not None:
                break
        if offspring is None:
            logger.debug("No valid mutation of %s found, stopping early", parent.child_id)
            break
        members.append(offspring)
        if len(members) > population:
            members.popleft()
        evaluate(offspring)

    assert best is not None
    return SearchResult(best.child_id, best.accuracy, len(trend), trend)


@dataclass
class SearchStudyRow:
    space: str
    size: int
    exhaustive: float
    random_mean: float
    random_std: float
    evolution_mean: float
    evolution_std: float


def search_study(
    table: GroundTruthTable,
    spaces: Sequence[SupernetGraph],
    budget: int,
    trials: int,
    seed: int,
    population: int = 10,
    tournament: int = 3,
) -> List[SearchStudyRow]:
    """
    Mean and standard deviation of the best accuracy the budgeted searchers find in each
    space over ``trials`` runs, next to the exhaustive best. Every space sees the same
    trial seeds.
    """
    if trials < 1:
        raise ConfigurationError(f"Need at least one search trial, got {trials}")
    streams = np.random.SeedSequence(seed).spawn(trials)
    rows = []
    for space in spaces:
        random_best = [random_search(table, space, budget, np.random.default_rng(s)).accuracy for s in streams]
        evolution_best = [
            evolutionary_search(table, space, budget, np.random.default_rng(s), population, tournament).accuracy
            for s in streams
        ]
        rows.append(
            SearchStudyRow(
                space=space.name,
                size=len(table.records_within(space)),
                exhaustive=exhaustive_best(table, space).accuracy,
                random_mean=float(np.mean(random_best)),
                random_std=float(np.std(random_best, ddof=1)) if trials > 1 else 0.0,
                evolution_mean=float(np.mean(evolution_best)),
                evolution_std=float(np.std(evolution_best, ddof=1)) if trials > 1 else 0.0,
            )
        )
    return rows
