import numpy as np
import pytest

from absnas.bench import (
    BenchRecord,
    GroundTruthTable,
    best_in_space,
    child_seed,
    generate_benchmark,
    ground_truth_operator_score,
    load_table,
    save_table,
    shrunk_space_catalog,
)
from absnas.exceptions import CapExceeded, EmptySubspace, InvalidChild, MissingBenchmark, SchemaError, SpaceMismatch
from absnas.graph import ChildModel, OperatorId, SupernetGraph, enumerate_children
from absnas.supernet import TrainConfig, train_standalone


@pytest.fixture
def chain_24() -> SupernetGraph:
    return SupernetGraph.from_dict(
        {
            "schema": "absnas.space/1.0",
            "name": "chain-24",
            "width": 4,
            "nodes": ["a", "b", "c", "d"],
            "edges": [
                {"src": "a", "dst": "b", "operators": ["linear", "identity"]},
                {"src": "b", "dst": "c", "operators": ["linear", "identity", "mlp4"]},
                {"src": "c", "dst": "d", "operators": ["linear", "mlp2", "mlp4", "mlp8"]},
            ],
        }
    )


def test_generate_single_child(tiny_space, small_data, quick_train):
    space = tiny_space.restrict([[0], [1]])
    table = generate_benchmark(space, small_data, quick_train, seed=0)
    assert len(table) == 1
    record = table.records[(0, 1)]
    assert 0.0 <= record.accuracy <= 1.0
    assert record.seed == child_seed(0, (0, 1))
    assert table.accuracy(ChildModel(space, (0, 1))) == record.accuracy


def test_generate_benchmark(tiny_space, small_data, quick_train):
    calls = []
    table = generate_benchmark(tiny_space, small_data, quick_train, seed=4, progress=lambda i, n: calls.append((i, n)))
    assert sorted(table.records) == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert calls == [(1, 4), (2, 4), (3, 4), (4, 4)]
    again = generate_benchmark(tiny_space, small_data, quick_train, seed=4)
    assert again.records == table.records

    # Any single entry can be reproduced on its own.
    child = ChildModel(tiny_space, (1, 0))
    result = train_standalone(child, small_data, quick_train, child_seed(4, (1, 0)))
    assert result.accuracy == table.records[(1, 0)].accuracy
    assert result.angle == table.records[(1, 0)].angle


def test_generate_benchmark_cap(tiny_space, small_data, quick_train):
    with pytest.raises(CapExceeded):
        generate_benchmark(tiny_space, small_data, quick_train, seed=0, cap=3)


def test_child_seed():
    assert child_seed(0, (1, 2)) == child_seed(0, (1, 2))
    assert child_seed(0, (1, 2)) != child_seed(0, (2, 1))
    assert child_seed(0, (1, 2)) != child_seed(1, (1, 2))


@pytest.mark.slow
def test_generate_benchmark_independent_of_workers(toy_space, small_data, quick_train):
    space = toy_space.restrict([[0, 1], [1], [1], [0, 1], [1], [1, 2]])
    serial = generate_benchmark(space, small_data, quick_train, seed=2)
    parallel = generate_benchmark(space, small_data, quick_train, seed=2, workers=3)
    assert serial.records == parallel.records


def test_save_and_load_table(tmp_path, toy_space, table_factory):
    table = table_factory(toy_space)
    path = tmp_path / "bench" / "table.json"
    save_table(table, path)
    loaded = load_table(path, toy_space)
    assert loaded.records == table.records
    assert loaded.space == toy_space
    assert loaded.train == table.train
    assert loaded.config_hash is None

    table.config_hash = "0123456789ab"
    save_table(table, tmp_path / "labelled.json")
    assert load_table(tmp_path / "labelled.json").config_hash == "0123456789ab"


def test_load_table_errors(tmp_path, toy_space, tiny_space, table_factory):
    with pytest.raises(MissingBenchmark):
        load_table(tmp_path / "missing.json")
    path = tmp_path / "table.json"
    save_table(table_factory(toy_space), path)
    with pytest.raises(SpaceMismatch):
        load_table(path, tiny_space)
    with pytest.raises(SpaceMismatch):
        load_table(path, toy_space.without([OperatorId(0, 0)]))


def test_table_rejects_bad_accuracy(tiny_space):
    with pytest.raises(SchemaError):
        GroundTruthTable(tiny_space, {(0, 0): BenchRecord((0, 0), 1.5, 0, 0.0)}, TrainConfig(), 0)


def test_table_lookups(tiny_space, toy_space, table_factory):
    table = table_factory(tiny_space)
    with pytest.raises(InvalidChild):
        table.accuracy(ChildModel(toy_space, (0,) * 6))
    with pytest.raises(SpaceMismatch):
        table.records_within(toy_space)
    shrunk = tiny_space.without([OperatorId(0, 1)])
    assert [r.encoding for r in table.records_within(shrunk)] == [(0, 0), (0, 1)]


def test_ground_truth_operator_score(toy_space, table_factory):
    table = table_factory(toy_space)
    op = OperatorId(4, 2)
    expected = np.mean([r.accuracy for r in table.records.values() if r.encoding[4] == 2])
    assert ground_truth_operator_score(table, op) == pytest.approx(expected)
    assert len(table.operator_accuracies(op)) == 243


def test_operator_accuracies_empty(shortcut_space, table_factory):
    table = table_factory(shortcut_space)
    table.records = {enc: r for enc, r in table.records.items() if r.encoding[0] != 1}
    with pytest.raises(EmptySubspace):
        table.operator_accuracies(OperatorId(0, 1))


def test_best_in_space(chain_24, table_factory):
    table = table_factory(chain_24)
    child, acc = best_in_space(table)
    assert child.choices == (1, 2, 3)
    assert acc == max(r.accuracy for r in table.records.values())


def test_best_in_space_matches_brute_force(chain_24, table_factory, rng):
    table = table_factory(chain_24)
    _, parent_best = best_in_space(table)
    for _ in range(50):
        candidates = []
        for edge in chain_24.edges:
            picked = rng.choice(len(edge.operators), size=rng.integers(1, len(edge.operators) + 1), replace=False)
            candidates.append(sorted(int(slot) for slot in picked))
        subspace = chain_24.restrict(candidates)
        child, acc = best_in_space(table, subspace)
        expected = max(enumerate_children(subspace), key=lambda c: table.accuracy(c))
        assert child.choices == expected.choices
        assert acc <= parent_best


def test_best_in_space_ties(tiny_space):
    records = {child.encoding: BenchRecord(child.encoding, 0.5, 0, 0.0) for child in enumerate_children(tiny_space)}
    table = GroundTruthTable(tiny_space, records, TrainConfig(), 0)
    assert best_in_space(table)[0].choices == (0, 0)


def test_best_in_space_empty(shortcut_space, table_factory):
    table = table_factory(shortcut_space)
    with pytest.raises(EmptySubspace):
        best_in_space(table, shortcut_space.restrict([[2], [0], [0], [0]]))


def test_shrunk_space_catalog(toy_space, tiny_space, shortcut_space):
    catalog = shrunk_space_catalog(toy_space)
    # 'parametric-only' equals 'without-identity' and is dropped.
    assert catalog.names() == ["toy-cell", "without-identity", "without-linear", "without-mlp32", "non-parametric-only"]
    assert all(space.is_subspace_of(toy_space) for space in catalog)

    assert shrunk_space_catalog(tiny_space).names() == ["tiny-chain", "without-identity", "without-linear"]

    # Without 'linear' every edge keeps pool3 and none, so the non-parametric space is a duplicate.
    names = shrunk_space_catalog(shortcut_space).names()
    assert names == ["shortcut", "without-linear", "without-none", "without-pool3", "parametric-only"]
    for space in shrunk_space_catalog(shortcut_space):
        assert space.connected_without_none()
