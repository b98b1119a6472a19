import itertools
import json
from collections import Counter

import networkx as nx
import numpy as np
import pytest

from absnas.exceptions import (
    InvalidChild,
    InvalidOperator,
    SamplingExhausted,
    SchemaError,
    SpaceDefinitionError,
)
from absnas.graph import (
    ChildModel,
    OperatorId,
    OperatorKind,
    OperatorSpec,
    SupernetGraph,
    cell_space,
    enumerate_children,
    enumerate_paths,
    load_space,
    sample_child,
    save_space,
    space_size,
)


def chain_space(*operator_lists, width=4, name="chain") -> SupernetGraph:
    nodes = [f"n{i}" for i in range(len(operator_lists) + 1)]
    return SupernetGraph.from_dict(
        {
            "schema": "absnas.space/1.0",
            "name": name,
            "width": width,
            "nodes": nodes,
            "edges": [
                {"src": nodes[i], "dst": nodes[i + 1], "operators": list(ops)}
                for i, ops in enumerate(operator_lists)
            ],
        }
    )


def test_operator_spec_parse():
    assert OperatorSpec.parse("linear") == OperatorSpec(OperatorKind.parametric)
    assert OperatorSpec.parse("mlp32").hidden == 32
    assert OperatorSpec.parse("pool3").pool_size == 3
    assert OperatorSpec.parse("none").kind == OperatorKind.none
    for label in ("linear", "mlp32", "pool5", "identity", "none"):
        assert OperatorSpec.parse(label).label == label


@pytest.mark.parametrize("label", ["conv3", "pool2", "mlp", ""])
def test_operator_spec_parse_invalid(label: str):
    with pytest.raises(SpaceDefinitionError):
        OperatorSpec.parse(label)


def test_operator_vector_size():
    assert OperatorSpec.parse("linear").vector_size(16) == 256
    assert OperatorSpec.parse("mlp32").vector_size(16) == 2 * 16 * 32
    assert OperatorSpec.parse("pool3").vector_size(9) == 9
    assert OperatorSpec.parse("identity").vector_size(16) == 0


def test_operator_id_parse():
    assert OperatorId.parse("3.1") == OperatorId(3, 1)
    assert OperatorId.parse([2, 0]) == OperatorId(2, 0)
    assert str(OperatorId(4, 2)) == "4.2"
    with pytest.raises(InvalidOperator):
        OperatorId.parse("x")


def test_toy_space(toy_space: SupernetGraph):
    assert len(toy_space.edges) == 6
    assert space_size(toy_space) == 729
    assert toy_space.block_bounds == ((0, 3),)
    assert len(enumerate_children(toy_space)) == 729


def test_space_size_is_a_product():
    assert space_size(chain_space(["linear"])) == 1
    assert space_size(chain_space(["linear", "identity"], ["linear", "identity", "mlp4"], ["linear", "mlp2", "mlp4", "mlp8"])) == 24
    assert space_size(cell_space(["identity", "linear", "mlp8", "none", "pool1"], width=4)) == 15625


def test_space_size_counts_invalid_children(shortcut_space: SupernetGraph):
    assert space_size(shortcut_space) == 81
    # Valid children need a non-none first edge and either the shortcut or both chain edges.
    assert len(enumerate_children(shortcut_space)) == 2 * (2 * 9 + 4)


def test_space_size_decreases_on_removal(toy_space: SupernetGraph):
    size = space_size(toy_space)
    for op in toy_space.live_operators():
        assert space_size(toy_space.without([op])) < size


def test_cycle_rejected():
    with pytest.raises(SpaceDefinitionError, match="cycle"):
        SupernetGraph.from_dict(
            {
                "schema": "absnas.space/1.0",
                "width": 4,
                "nodes": ["a", "b", "c", "d"],
                "edges": [
                    {"src": "a", "dst": "b", "operators": ["linear"]},
                    {"src": "b", "dst": "c", "operators": ["linear"]},
                    {"src": "c", "dst": "b", "operators": ["linear"]},
                    {"src": "c", "dst": "d", "operators": ["linear"]},
                ],
            }
        )


def test_dangling_node_rejected():
    with pytest.raises(SpaceDefinitionError, match="no outputs"):
        SupernetGraph.from_dict(
            {
                "schema": "absnas.space/1.0",
                "width": 4,
                "nodes": ["a", "b", "c"],
                "edges": [
                    {"src": "a", "dst": "c", "operators": ["linear"]},
                    {"src": "a", "dst": "b", "operators": ["linear"]},
                ],
            }
        )


def test_pooling_needs_square_width():
    with pytest.raises(SpaceDefinitionError, match="perfect square"):
        chain_space(["pool3"], width=8)


def test_unknown_node_reference():
    with pytest.raises(SpaceDefinitionError):
        SupernetGraph.from_dict(
            {
                "schema": "absnas.space/1.0",
                "width": 4,
                "nodes": ["a", "b"],
                "edges": [{"src": "a", "dst": "z", "operators": ["linear"]}],
            }
        )


def test_schema_mismatch():
    with pytest.raises(SchemaError):
        SupernetGraph.from_dict({"schema": "absnas.space/2.0", "width": 4, "nodes": [], "edges": []})


def test_without_and_subspaces(toy_space: SupernetGraph):
    shrunk = toy_space.without([OperatorId(0, 0)])
    assert shrunk.edges[0].candidates == (1, 2)
    assert space_size(shrunk) == 486
    assert shrunk.is_subspace_of(toy_space)
    assert not toy_space.is_subspace_of(shrunk)
    assert shrunk.structure_hash() == toy_space.structure_hash()
    assert shrunk.space_hash() != toy_space.space_hash()
    with pytest.raises(InvalidOperator):
        shrunk.without([OperatorId(0, 0)])


def test_connected_without_none(shortcut_space: SupernetGraph):
    assert shortcut_space.connected_without_none()
    only_none = shortcut_space.restrict([[2], [2], [2], [2]])
    assert not only_none.connected_without_none()
    # The chain through b is cut, but the shortcut keeps the leaf reachable.
    assert shortcut_space.restrict([[0], [2], [2], [1]]).connected_without_none()


def test_has_parametric_path(shortcut_space: SupernetGraph, tiny_space: SupernetGraph):
    assert shortcut_space.has_parametric_path()
    # Pooling on the shortcut keeps the leaf reachable, but not through weights.
    assert not shortcut_space.restrict([[0], [2], [2], [1]]).has_parametric_path()
    assert shortcut_space.restrict([[0], [2], [2], [0]]).has_parametric_path()
    assert tiny_space.restrict([[0, 1], [1]]).connected_without_none()
    assert not tiny_space.restrict([[0, 1], [1]]).has_parametric_path()


def test_save_and_load_space(tmp_path, toy_space: SupernetGraph):
    path = tmp_path / "space.json"
    save_space(toy_space.without([OperatorId(3, 1)]), path)
    loaded = load_space(path)
    assert loaded == toy_space.without([OperatorId(3, 1)])
    assert loaded.name == toy_space.name

    save_space(toy_space, path, config_hash="0123456789ab", seed=3)
    raw = json.loads(path.read_text())
    assert (raw["config_hash"], raw["seed"]) == ("0123456789ab", 3)
    assert load_space(path) == toy_space


def test_cell_space_blocks():
    space = cell_space(["identity", "linear"], num_cells=2, width=4)
    assert len(space.nodes) == 7
    assert len(space.edges) == 12
    assert space.block_bounds == ((0, 3), (3, 6))


def test_child_encode_decode(toy_space: SupernetGraph):
    child = ChildModel.decode(toy_space, "0.1.2.0.1.2")
    assert child.choices == (0, 1, 2, 0, 1, 2)
    assert child.encode() == "0.1.2.0.1.2"
    with pytest.raises(InvalidChild):
        ChildModel.decode(toy_space, "a.b")
    with pytest.raises(InvalidChild):
        ChildModel.decode(toy_space, "0.1")
    with pytest.raises(InvalidChild):
        ChildModel.decode(toy_space, "0.1.2.0.1.3")


def test_child_edges(shortcut_space: SupernetGraph):
    # Edges: 0 in->a, 1 a->b, 2 b->out, 3 a->out.
    child = ChildModel(shortcut_space, (0, 0, 2, 0))
    assert child.edges == (0, 1, 3)
    assert child.active_edges == (0, 3)
    assert child.is_valid
    assert enumerate_paths(child) == [(0, 3)]

    invalid = ChildModel(shortcut_space, (2, 0, 0, 0))
    assert not invalid.is_valid
    with pytest.raises(InvalidChild):
        enumerate_paths(invalid)


def test_param_count(toy_space: SupernetGraph):
    assert ChildModel(toy_space, (1,) * 6).param_count() == 6 * 256
    assert ChildModel(toy_space, (0,) * 6).param_count() == 0
    assert ChildModel(toy_space, (2, 0, 0, 0, 0, 0)).param_count() == 2 * 16 * 32


def test_enumerate_paths_single_edge():
    child = ChildModel(chain_space(["linear"]), (0,))
    assert enumerate_paths(child) == [(0,)]


def test_enumerate_paths_diamond():
    space = SupernetGraph.from_dict(
        {
            "schema": "absnas.space/1.0",
            "width": 4,
            "nodes": ["o1", "o2", "o3", "o4"],
            "edges": [
                {"src": "o1", "dst": "o2", "operators": ["linear"]},
                {"src": "o1", "dst": "o3", "operators": ["linear"]},
                {"src": "o2", "dst": "o4", "operators": ["linear"]},
                {"src": "o3", "dst": "o4", "operators": ["linear"]},
            ],
        }
    )
    assert enumerate_paths(ChildModel(space, (0, 0, 0, 0))) == [(0, 2), (1, 3)]


def test_enumerate_paths_complete_cell(toy_space: SupernetGraph):
    # Edge order of a cell: 0->1, 0->2, 1->2, 0->3, 1->3, 2->3.
    child = ChildModel(toy_space, (1,) * 6)
    assert enumerate_paths(child) == [(0, 2, 5), (0, 4), (1, 5), (3,)]


def _random_dag(rng: np.random.Generator, num_nodes: int) -> SupernetGraph:
    nodes = [f"v{i}" for i in range(num_nodes)]
    edges = [(i, i + 1) for i in range(num_nodes - 1)]
    for src, dst in itertools.combinations(range(num_nodes), 2):
        if dst > src + 1 and rng.random() < 0.4:
            edges.append((src, dst))
    return SupernetGraph.from_dict(
        {
            "schema": "absnas.space/1.0",
            "width": 4,
            "nodes": nodes,
            "edges": [{"src": nodes[s], "dst": nodes[d], "operators": ["linear"]} for s, d in edges],
        }
    )


def test_enumerate_paths_matches_networkx():
    rng = np.random.default_rng(7)
    for _ in range(200):
        space = _random_dag(rng, int(rng.integers(2, 9)))
        child = ChildModel(space, (0,) * len(space.edges))
        paths = enumerate_paths(child)

        node_paths = [[space.edges[path[0]].src] + [space.edges[e].dst for e in path] for path in paths]
        expected = sorted(nx.all_simple_paths(space.nx_graph, space.root, space.leaf))
        assert node_paths == expected


def test_sample_child_deterministic(toy_space: SupernetGraph):
    first = [sample_child(toy_space, np.random.default_rng(3)) for _ in range(3)]
    second = [sample_child(toy_space, np.random.default_rng(3)) for _ in range(3)]
    assert [c.choices for c in first] == [c.choices for c in second]


def test_sample_child_containing(toy_space: SupernetGraph, rng: np.random.Generator):
    for _ in range(50):
        assert sample_child(toy_space, rng, containing=OperatorId(2, 0)).choices[2] == 0
    with pytest.raises(InvalidOperator):
        sample_child(toy_space.without([OperatorId(2, 0)]), rng, containing=OperatorId(2, 0))


def test_sample_child_unique_child(rng: np.random.Generator):
    space = chain_space(["linear"], ["mlp4"])
    assert sample_child(space, rng).choices == (0, 0)
    state = rng.bit_generator.state
    sample_child(space, rng)
    assert rng.bit_generator.state == state


def test_sample_child_only_valid(shortcut_space: SupernetGraph, rng: np.random.Generator):
    for _ in range(100):
        assert sample_child(shortcut_space, rng).is_valid


def test_sample_child_exhausted(shortcut_space: SupernetGraph, rng: np.random.Generator):
    dead = shortcut_space.restrict([[2], [0, 1, 2], [0, 1, 2], [0, 1, 2]])
    with pytest.raises(SamplingExhausted):
        sample_child(dead, rng, max_retries=5)


def test_sample_child_uniform(rng: np.random.Generator):
    space = chain_space(["linear", "mlp4", "identity"], ["linear", "mlp4", "identity"])
    n = 10_000
    counts = Counter(sample_child(space, rng).choices for _ in range(n))
    assert len(counts) == 9
    for count in counts.values():
        assert abs(count / n - 1 / 9) <= 0.02
