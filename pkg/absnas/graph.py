"""
Search spaces as directed acyclic graphs with alternative operators on every edge.
"""

import itertools
import logging
import math
import re
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import (
    Any,
    Callable,
    Dict,
    Iterable,
    List,
    NamedTuple,
    Optional,
    Sequence,
    Set,
    Tuple,
    Union,
)

import networkx as nx
import numpy as np

from . import constants
from .aliases import PathOrStr
from .exceptions import *
from .util import StrEnum, check_schema, read_json, short_hash, write_json

logger = logging.getLogger(__name__)

EdgePath = Tuple[int, ...]
"""A root-to-leaf path as an ordered sequence of edge indices."""


class OperatorKind(StrEnum):
    parametric = "parametric"
    identity = "identity"
    pooling = "pooling"
    none = "none"


class OperatorId(NamedTuple):
    edge: int
    slot: int

    def __str__(self) -> str:
        return f"{self.edge}.{self.slot}"

    @classmethod
    def parse(cls, value: Union[str, Sequence[int]]) -> "OperatorId":
        try:
            if isinstance(value, str):
                edge, slot = value.split(".")
                return cls(int(edge), int(slot))
            edge, slot = value
            return cls(int(edge), int(slot))
        except (TypeError, ValueError):
            raise InvalidOperator(f"Can't parse operator id from '{value}'")


_LABEL_RE = re.compile(r"^(linear|identity|none|mlp(\d+)|pool(\d+))$")


@dataclass(frozen=True)
class OperatorSpec:
    """
    One candidate operator of an edge.

    A parametric operator is a single dense layer when ``hidden`` is ``None`` and two dense
    layers through ``hidden`` features otherwise. Pooling averages a ``pool_size`` square
    window over the node's features viewed as a square grid.
    """

    kind: OperatorKind
    hidden: Optional[int] = None
    pool_size: Optional[int] = None

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", OperatorKind(self.kind))
        except ValueError:
            raise SpaceDefinitionError(f"Unknown operator kind '{self.kind}'")
        if self.hidden is not None and (self.kind != OperatorKind.parametric or self.hidden < 1):
            raise SpaceDefinitionError(f"'hidden' is only valid (and >= 1) for parametric operators: {self}")
        if self.kind == OperatorKind.pooling:
            if self.pool_size is None or self.pool_size < 1 or self.pool_size % 2 == 0:
                raise SpaceDefinitionError(f"Pooling needs an odd, positive 'pool_size': {self}")
        elif self.pool_size is not None:
            raise SpaceDefinitionError(f"'pool_size' is only valid for pooling operators: {self}")

    @classmethod
    def parse(cls, label: str) -> "OperatorSpec":
        """
        Parse a label such as ``linear``, ``mlp32``, ``pool3``, ``identity`` or ``none``.
        """
        match = _LABEL_RE.match(label)
        if match is None:
            raise SpaceDefinitionError(f"Unknown operator label '{label}'")
        if match.group(2) is not None:
            return cls(OperatorKind.parametric, hidden=int(match.group(2)))
        if match.group(3) is not None:
            return cls(OperatorKind.pooling, pool_size=int(match.group(3)))
        if label == "linear":
            return cls(OperatorKind.parametric)
        return cls(OperatorKind(label))

    @property
    def label(self) -> str:
        if self.kind == OperatorKind.parametric:
            return "linear" if self.hidden is None else f"mlp{self.hidden}"
        if self.kind == OperatorKind.pooling:
            return f"pool{self.pool_size}"
        return str(self.kind)

    @property
    def is_parametric(self) -> bool:
        return self.kind == OperatorKind.parametric

    def layer_shapes(self, width: int) -> List[Tuple[int, int]]:
        if self.kind != OperatorKind.parametric:
            return []
        if self.hidden is None:
            return [(width, width)]
        return [(width, self.hidden), (self.hidden, width)]

    def vector_size(self, width: int) -> int:
        """
        Number of entries this operator contributes to a weight vector.
        """
        if self.kind == OperatorKind.pooling:
            assert self.pool_size is not None
            return self.pool_size * self.pool_size
        return sum(rows * cols for rows, cols in self.layer_shapes(width))


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    operators: Tuple[OperatorSpec, ...]
    candidates: Tuple[int, ...]


@dataclass(frozen=True)
class SupernetGraph:
    """
    A search space: a DAG holding alternative candidate operators on every edge.

    ``nodes[0]`` is the root and ``nodes[-1]`` the leaf. Every edge keeps its full
    operator list; ``candidates`` holds the slots still alive, so operator ids stay stable
    while the space shrinks.
    """

    nodes: Tuple[str, ...]
    edges: Tuple[Edge, ...]
    width: int
    blocks: Optional[Tuple[Tuple[int, ...], ...]] = None
    name: str = field(default="space", compare=False)

    def __post_init__(self):
        self._validate()

    def _validate(self):
        if len(self.nodes) < 2:
            raise SpaceDefinitionError(f"Space '{self.name}' needs at least a root and a leaf node")
        if len(set(self.nodes)) != len(self.nodes):
            raise SpaceDefinitionError(f"Space '{self.name}' has duplicate node identifiers")
        if self.width < 1:
            raise SpaceDefinitionError(f"Space '{self.name}' has a non-positive width")
        if not self.edges:
            raise SpaceDefinitionError(f"Space '{self.name}' has no edges")

        seen: Set[Tuple[int, int]] = set()
        for index, edge in enumerate(self.edges):
            where = f"edge {index} of space '{self.name}'"
            if not (0 <= edge.src < len(self.nodes) and 0 <= edge.dst < len(self.nodes)):
                raise SpaceDefinitionError(f"{where} references an unknown node")
            if edge.src == edge.dst:
                raise SpaceDefinitionError(f"{where} is a self loop")
            if (edge.src, edge.dst) in seen:
                raise SpaceDefinitionError(f"{where} duplicates an earlier edge")
            seen.add((edge.src, edge.dst))
            if not edge.operators:
                raise SpaceDefinitionError(f"{where} has no operators")
            if not edge.candidates:
                raise SpaceDefinitionError(f"{where} has no candidate operators left")
            if list(edge.candidates) != sorted(set(edge.candidates)) or not all(
                0 <= slot < len(edge.operators) for slot in edge.candidates
            ):
                raise SpaceDefinitionError(f"{where} has malformed candidates {edge.candidates}")
            for spec in edge.operators:
                if spec.kind == OperatorKind.pooling and math.isqrt(self.width) ** 2 != self.width:
                    raise SpaceDefinitionError(
                        f"{where} has a pooling operator but width {self.width} isn't a perfect square"
                    )

        graph = self.nx_graph
        if not nx.is_directed_acyclic_graph(graph):
            raise SpaceDefinitionError(f"Space '{self.name}' contains a cycle")
        for node in range(len(self.nodes)):
            if node != self.root and graph.in_degree(node) == 0:
                raise SpaceDefinitionError(
                    f"Node '{self.nodes[node]}' of space '{self.name}' has no inputs; only the root may"
                )
            if node != self.leaf and graph.out_degree(node) == 0:
                raise SpaceDefinitionError(
                    f"Node '{self.nodes[node]}' of space '{self.name}' has no outputs; only the leaf may"
                )
        if graph.in_degree(self.root) != 0:
            raise SpaceDefinitionError(f"Root node '{self.nodes[self.root]}' of space '{self.name}' has inputs")
        if graph.out_degree(self.leaf) != 0:
            raise SpaceDefinitionError(f"Leaf node '{self.nodes[self.leaf]}' of space '{self.name}' has outputs")

        if self.blocks is not None:
            flat = sorted(itertools.chain.from_iterable(self.blocks))
            if flat != list(range(len(self.edges))):
                raise SpaceDefinitionError(f"Blocks of space '{self.name}' don't partition its edges")
            # Touching the property validates every block's entry and exit.
            self.block_bounds

    @cached_property
    def nx_graph(self) -> nx.DiGraph:
        graph = nx.DiGraph()
        graph.add_nodes_from(range(len(self.nodes)))
        graph.add_edges_from((edge.src, edge.dst) for edge in self.edges)
        return graph

    @property
    def root(self) -> int:
        return 0

    @property
    def leaf(self) -> int:
        return len(self.nodes) - 1

    @cached_property
    def topo_order(self) -> Tuple[int, ...]:
        return tuple(nx.lexicographical_topological_sort(self.nx_graph))

    @cached_property
    def in_edges(self) -> Tuple[Tuple[int, ...], ...]:
        incoming: List[List[int]] = [[] for _ in self.nodes]
        for index, edge in enumerate(self.edges):
            incoming[edge.dst].append(index)
        return tuple(tuple(sorted(e, key=lambda i: (self.edges[i].src, i))) for e in incoming)

    @cached_property
    def out_edges(self) -> Tuple[Tuple[int, ...], ...]:
        outgoing: List[List[int]] = [[] for _ in self.nodes]
        for index, edge in enumerate(self.edges):
            outgoing[edge.src].append(index)
        return tuple(tuple(sorted(e, key=lambda i: (self.edges[i].dst, i))) for e in outgoing)

    @cached_property
    def block_bounds(self) -> Tuple[Tuple[int, int], ...]:
        """
        The (entry node, exit node) of every block.
        """
        if self.blocks is None:
            raise SpaceDefinitionError(f"Space '{self.name}' doesn't define blocks")
        bounds = []
        for number, block in enumerate(self.blocks):
            sources = {self.edges[i].src for i in block}
            targets = {self.edges[i].dst for i in block}
            entries = sorted(sources - targets)
            exits = sorted(targets - sources)
            if len(entries) != 1 or len(exits) != 1:
                raise SpaceDefinitionError(
                    f"Block {number} of space '{self.name}' needs exactly one entry and one exit node"
                )
            bounds.append((entries[0], exits[0]))
        return tuple(bounds)

    def operator(self, op: OperatorId) -> OperatorSpec:
        try:
            return self.edges[op.edge].operators[op.slot]
        except IndexError:
            raise InvalidOperator(f"Operator {op} doesn't exist in space '{self.name}'")

    def all_operators(self) -> List[OperatorId]:
        return [OperatorId(e, s) for e, edge in enumerate(self.edges) for s in range(len(edge.operators))]

    def live_operators(self) -> List[OperatorId]:
        return [OperatorId(e, s) for e, edge in enumerate(self.edges) for s in edge.candidates]

    def is_live(self, op: OperatorId) -> bool:
        return 0 <= op.edge < len(self.edges) and op.slot in self.edges[op.edge].candidates

    def restrict(self, candidates: Sequence[Sequence[int]], name: Optional[str] = None) -> "SupernetGraph":
        if len(candidates) != len(self.edges):
            raise SpaceDefinitionError("Need one candidate list per edge")
        edges = tuple(replace(edge, candidates=tuple(sorted(c))) for edge, c in zip(self.edges, candidates))
        return replace(self, edges=edges, name=name or self.name)

    def without(self, ops: Iterable[OperatorId], name: Optional[str] = None) -> "SupernetGraph":
        """
        The space with the given live operators removed.
        """
        remaining = [list(edge.candidates) for edge in self.edges]
        for op in ops:
            if not self.is_live(op):
                raise InvalidOperator(f"Operator {op} isn't live in space '{self.name}'")
            remaining[op.edge].remove(op.slot)
        return self.restrict(remaining, name=name)

    def is_subspace_of(self, parent: "SupernetGraph") -> bool:
        if (self.nodes, self.width, self.blocks) != (parent.nodes, parent.width, parent.blocks):
            return False
        if len(self.edges) != len(parent.edges):
            return False
        for mine, theirs in zip(self.edges, parent.edges):
            if (mine.src, mine.dst, mine.operators) != (theirs.src, theirs.dst, theirs.operators):
                return False
            if not set(mine.candidates) <= set(theirs.candidates):
                return False
        return True

    def connected_without_none(self) -> bool:
        """
        Whether some root-to-leaf path only uses edges holding a live non-none operator.
        """
        usable = nx.DiGraph()
        usable.add_nodes_from(range(len(self.nodes)))
        for edge in self.edges:
            if any(edge.operators[s].kind != OperatorKind.none for s in edge.candidates):
                usable.add_edge(edge.src, edge.dst)
        return nx.has_path(usable, self.root, self.leaf)

    def has_parametric_path(self) -> bool:
        """
        Whether some root-to-leaf path only uses edges that still hold a live parametric operator.
        """
        usable = nx.DiGraph()
        usable.add_nodes_from(range(len(self.nodes)))
        for edge in self.edges:
            if any(edge.operators[s].is_parametric for s in edge.candidates):
                usable.add_edge(edge.src, edge.dst)
        return nx.has_path(usable, self.root, self.leaf)

    def space_hash(self) -> str:
        data = self.to_dict()
        del data["name"]
        return short_hash(data, length=16)

    def structure_hash(self) -> str:
        """
        Like :meth:`space_hash` but blind to which candidates are live, so a space and
        every space shrunk from it share the value. Weight stores are keyed on it.
        """
        data = self.to_dict()
        del data["name"]
        for edge in data["edges"]:
            del edge["candidates"]
        return short_hash(data, length=16)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema": constants.SPACE_SCHEMA,
            "name": self.name,
            "width": self.width,
            "nodes": list(self.nodes),
            "edges": [
                {
                    "src": self.nodes[edge.src],
                    "dst": self.nodes[edge.dst],
                    "operators": [spec.label for spec in edge.operators],
                    "candidates": list(edge.candidates),
                }
                for edge in self.edges
            ],
            "blocks": None if self.blocks is None else [list(block) for block in self.blocks],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], name: Optional[str] = None) -> "SupernetGraph":
        check_schema(data.get("schema"), constants.SPACE_SCHEMA, source=name or "<space>")
        try:
            nodes = tuple(str(n) for n in data["nodes"])
            index = {node: i for i, node in enumerate(nodes)}
            edges = []
            for raw in data["edges"]:
                operators = tuple(
                    OperatorSpec.parse(op) if isinstance(op, str) else OperatorSpec(**op) for op in raw["operators"]
                )
                candidates = raw.get("candidates")
                edges.append(
                    Edge(
                        src=index[str(raw["src"])],
                        dst=index[str(raw["dst"])],
                        operators=operators,
                        candidates=tuple(range(len(operators))) if candidates is None else tuple(candidates),
                    )
                )
            blocks = data.get("blocks")
            return cls(
                nodes=nodes,
                edges=tuple(edges),
                width=int(data["width"]),
                blocks=None if blocks is None else tuple(tuple(int(i) for i in b) for b in blocks),
                name=str(data.get("name") or name or "space"),
            )
        except KeyError as exc:
            raise SpaceDefinitionError(f"Space definition '{name}' is missing or references unknown key {exc}")
        except TypeError as exc:
            raise SpaceDefinitionError(f"Malformed space definition '{name}': {exc}")


def load_space(path: PathOrStr) -> SupernetGraph:
    """
    :raises IoFailure: If the file can't be read.
    :raises SpaceDefinitionError: If the definition is malformed.
    """
    return SupernetGraph.from_dict(read_json(path), name=Path(path).stem)


def save_space(
    space: SupernetGraph, path: PathOrStr, *, config_hash: Optional[str] = None, seed: Optional[int] = None
):
    """
    Write the space definition. A space produced by a run also records the run's config
    hash and seed; loading ignores both.
    """
    data = space.to_dict()
    if config_hash is not None:
        data["config_hash"] = config_hash
    if seed is not None:
        data["seed"] = seed
    write_json(path, data)


def cell_space(
    operators: Sequence[Union[str, OperatorSpec]],
    *,
    num_cells: int = 1,
    width: int = 16,
    name: str = "cell",
) -> SupernetGraph:
    """
    Chain ``num_cells`` complete 4-node cells (the NAS-Bench-201 cell topology), each cell
    being one block with the same candidate operators on all six edges.
    """
    specs = tuple(OperatorSpec.parse(op) if isinstance(op, str) else op for op in operators)
    nodes = tuple(f"n{i}" for i in range(3 * num_cells + 1))
    edges: List[Edge] = []
    blocks: List[Tuple[int, ...]] = []
    for cell in range(num_cells):
        base = 3 * cell
        block = []
        for dst in range(1, 4):
            for src in range(dst):
                block.append(len(edges))
                edges.append(Edge(base + src, base + dst, specs, tuple(range(len(specs)))))
        blocks.append(tuple(block))
    return SupernetGraph(nodes=nodes, edges=tuple(edges), width=width, blocks=tuple(blocks), name=name)


@dataclass(frozen=True)
class ChildModel:
    """
    A child model choosing one operator slot on every edge.

    Edges whose chosen operator is ``none`` are absent from the child.
    """

    space: SupernetGraph = field(compare=False, repr=False)
    choices: Tuple[int, ...]

    def __post_init__(self):
        if len(self.choices) != len(self.space.edges):
            raise InvalidChild(f"Child has {len(self.choices)} choices for {len(self.space.edges)} edges")
        for index, (edge, slot) in enumerate(zip(self.space.edges, self.choices)):
            if not 0 <= slot < len(edge.operators):
                raise InvalidChild(f"Child chooses unknown slot {slot} on edge {index}")

    @property
    def encoding(self) -> Tuple[int, ...]:
        return self.choices

    def encode(self) -> str:
        return ".".join(str(slot) for slot in self.choices)

    @classmethod
    def decode(cls, space: SupernetGraph, value: str) -> "ChildModel":
        try:
            return cls(space, tuple(int(slot) for slot in value.split(".")))
        except ValueError:
            raise InvalidChild(f"Can't decode child '{value}'")

    def spec(self, edge: int) -> OperatorSpec:
        return self.space.edges[edge].operators[self.choices[edge]]

    def operator_ids(self) -> Tuple[OperatorId, ...]:
        return tuple(OperatorId(e, s) for e, s in enumerate(self.choices))

    def contains(self, op: OperatorId) -> bool:
        return self.choices[op.edge] == op.slot

    def is_within(self, space: SupernetGraph) -> bool:
        return all(slot in edge.candidates for edge, slot in zip(space.edges, self.choices))

    @cached_property
    def edges(self) -> Tuple[int, ...]:
        """
        Indices of edges whose chosen operator isn't ``none``.
        """
        return tuple(e for e in range(len(self.choices)) if self.spec(e).kind != OperatorKind.none)

    @cached_property
    def _reach(self) -> Tuple[Set[int], Set[int]]:
        chosen = set(self.edges)
        forward = {self.space.root}
        for node in self.space.topo_order:
            if node in forward:
                forward.update(self.space.edges[e].dst for e in self.space.out_edges[node] if e in chosen)
        backward = {self.space.leaf}
        for node in reversed(self.space.topo_order):
            if node in backward:
                backward.update(self.space.edges[e].src for e in self.space.in_edges[node] if e in chosen)
        return forward, backward

    @cached_property
    def active_edges(self) -> Tuple[int, ...]:
        """
        Chosen edges lying on at least one root-to-leaf path, the only ones that compute.
        """
        forward, backward = self._reach
        return tuple(
            e for e in self.edges if self.space.edges[e].src in forward and self.space.edges[e].dst in backward
        )

    @property
    def is_valid(self) -> bool:
        return self.space.leaf in self._reach[0]

    def param_count(self) -> int:
        width = self.space.width
        return sum(sum(r * c for r, c in self.spec(e).layer_shapes(width)) for e in self.active_edges)


def paths_between(child: ChildModel, source: int, target: int, edges: Optional[Iterable[int]] = None) -> List[EdgePath]:
    """
    Every path from ``source`` to ``target`` over the child's chosen edges (optionally
    restricted to ``edges``), in lexicographic order of the visited node indices.
    """
    allowed = set(child.edges) if edges is None else set(edges) & set(child.edges)
    out_edges = child.space.out_edges
    paths: List[EdgePath] = []
    stack: List[int] = []

    def visit(node: int):
        if node == target:
            paths.append(tuple(stack))
            return
        for e in out_edges[node]:
            if e in allowed:
                stack.append(e)
                visit(child.space.edges[e].dst)
                stack.pop()

    visit(source)
    return paths


def enumerate_paths(child: ChildModel) -> List[EdgePath]:
    """
    Every simple path from the root to the leaf of a child, as ordered edge sequences.

    :raises InvalidChild: If the child has no root-to-leaf path.
    """
    paths = paths_between(child, child.space.root, child.space.leaf)
    if not paths:
        raise InvalidChild(f"Child {child.encode()} has no path from root to leaf")
    return paths


def _draw_slot(candidates: Sequence[int], rng: np.random.Generator) -> int:
    # A single candidate draws nothing from rng.
    if len(candidates) == 1:
        return candidates[0]
    return candidates[int(rng.integers(len(candidates)))]


def sample_child(
    space: SupernetGraph,
    rng: np.random.Generator,
    containing: Optional[OperatorId] = None,
    accept: Optional[Callable[[ChildModel], bool]] = None,
    max_retries: int = constants.DEFAULT_SAMPLE_RETRIES,
) -> ChildModel:
    """
    Sample a valid child uniformly over every edge's live candidates, optionally forcing
    the operator ``containing`` and rejecting children ``accept`` says no to.

    :raises InvalidOperator: If ``containing`` isn't live in the space.
    :raises SamplingExhausted: If no acceptable child was found within ``max_retries`` draws.
    """
    if containing is not None and not space.is_live(containing):
        raise InvalidOperator(f"Operator {containing} isn't live in space '{space.name}'")
    for _ in range(max_retries):
        choices = [_draw_slot(edge.candidates, rng) for edge in space.edges]
        if containing is not None:
            choices[containing.edge] = containing.slot
        child = ChildModel(space, tuple(choices))
        if child.is_valid and (accept is None or accept(child)):
            return child
    raise SamplingExhausted(
        f"No valid child{'' if containing is None else f' containing {containing}'} "
        f"found in {max_retries} draws from space '{space.name}'"
    )


def space_size(space: SupernetGraph) -> int:
    """
    Product over edges of the number of live candidates; invalid children are counted too.
    """
    return math.prod(len(edge.candidates) for edge in space.edges)


def enumerate_children(space: SupernetGraph) -> List[ChildModel]:
    """
    Every valid child of the space, in encoding order.
    """
    children = (ChildModel(space, choices) for choices in itertools.product(*(e.candidates for e in space.edges)))
    return [child for child in children if child.is_valid]
