"""
Weight vectors of child models and the angle-based metric.

A child's weight vector concatenates, for every root-to-leaf path, the flattened weights
of the operators along that path. Identity adds nothing, pooling adds its constant
kernel, and ``none`` edges are absent, so children built from the same learnable
weights but wired differently still get different vectors.
"""

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, List, Tuple

import numpy as np

from . import constants
from .exceptions import *
from .graph import ChildModel, OperatorId, enumerate_paths, paths_between
from .util import StrEnum

if TYPE_CHECKING:
    from .supernet import WeightStore

logger = logging.getLogger(__name__)


class VectorMode(StrEnum):
    full_graph = "full-graph"
    block = "block"


class Reference(StrEnum):
    init = "init"
    base = "base"


@dataclass(frozen=True)
class Segment:
    path: int
    op: OperatorId
    start: int
    stop: int

    def __len__(self) -> int:
        return self.stop - self.start


@dataclass(frozen=True)
class WeightLayout:
    """
    Where each operator's weights land in a child's weight vector.
    """

    child: ChildModel
    segments: Tuple[Segment, ...]

    @property
    def size(self) -> int:
        return self.segments[-1].stop if self.segments else 0

    def fill(self, store: "WeightStore", source: str) -> "WeightVector":
        cache = {}
        parts = []
        for segment in self.segments:
            if segment.op not in cache:
                spec = self.child.space.operator(segment.op)
                cache[segment.op] = store.operator_vector(segment.op, spec, source)
            parts.append(cache[segment.op])
        values = np.concatenate(parts) if parts else np.zeros(0)
        assert len(values) == self.size
        return WeightVector(values, self.segments)


@dataclass(frozen=True)
class WeightVector:
    values: np.ndarray
    provenance: Tuple[Segment, ...]

    def __len__(self) -> int:
        return len(self.values)


def _lay_out(child: ChildModel, paths: List[Tuple[int, ...]], first_path: int, offset: int) -> List[Segment]:
    width = child.space.width
    segments = []
    for number, path in enumerate(paths, start=first_path):
        for e in path:
            op = OperatorId(e, child.choices[e])
            size = child.spec(e).vector_size(width)
            segments.append(Segment(number, op, offset, offset + size))
            offset += size
    return segments


def weight_layout(
    child: ChildModel,
    mode: VectorMode = VectorMode.full_graph,
    max_paths: int = constants.DEFAULT_MAX_PATHS,
) -> WeightLayout:
    """
    :raises InvalidChild: If the child has no root-to-leaf path.
    :raises PathExplosion: If full-graph mode would enumerate more than ``max_paths`` paths.
    :raises EmptyVector: If every path consists of identities only.
    """
    mode = VectorMode(mode)
    space = child.space
    if mode == VectorMode.full_graph:
        paths = enumerate_paths(child)
        if len(paths) > max_paths:
            raise PathExplosion(
                f"Child {child.encode()} has {len(paths)} root-to-leaf paths (limit {max_paths}); "
                f"use block-wise weight vectors for this space"
            )
        segments = _lay_out(child, paths, 0, 0)
    else:
        if not child.is_valid:
            raise InvalidChild(f"Child {child.encode()} has no path from root to leaf")
        bounds = space.block_bounds
        assert space.blocks is not None
        segments = []
        path_count = 0
        for block, (entry, exit_) in zip(space.blocks, bounds):
            paths = paths_between(child, entry, exit_, edges=block)
            offset = segments[-1].stop if segments else 0
            segments.extend(_lay_out(child, paths, path_count, offset))
            path_count += len(paths)
    layout = WeightLayout(child, tuple(segments))
    if layout.size == 0:
        raise EmptyVector(f"Child {child.encode()} has no weights on any path")
    return layout


def build_weight_vector(
    child: ChildModel,
    store: "WeightStore",
    mode: VectorMode = VectorMode.full_graph,
    source: str = "current",
    max_paths: int = constants.DEFAULT_MAX_PATHS,
) -> WeightVector:
    return weight_layout(child, mode, max_paths).fill(store, source)


def vector_angle(reference: np.ndarray, current: np.ndarray) -> float:
    """
    Angle in radians between two vectors of equal length, in [0, π].

    :raises ZeroNormVector: If either vector is all zeros.
    """
    if reference.shape != current.shape:
        raise ShapeMismatch(f"Can't compare vectors of shapes {reference.shape} and {current.shape}")
    a = np.asarray(reference, dtype=np.longdouble)
    b = np.asarray(current, dtype=np.longdouble)
    norm_a = np.sqrt(np.dot(a, a))
    norm_b = np.sqrt(np.dot(b, b))
    if norm_a == 0 or norm_b == 0:
        raise ZeroNormVector("Angle is undefined for a zero-norm weight vector")
    if np.array_equal(a, b):
        return 0.0
    cosine = np.clip(np.dot(a, b) / (norm_a * norm_b), -1.0, 1.0)
    return float(np.arccos(cosine))


def angle_of_child(
    child: ChildModel,
    store: "WeightStore",
    reference: Reference = Reference.base,
    mode: VectorMode = VectorMode.full_graph,
    max_paths: int = constants.DEFAULT_MAX_PATHS,
) -> float:
    """
    The angle between a child's reference and current weight vectors, both laid out the
    same way.

    :raises ZeroNormVector: For children without weights (``EmptyVector``) or zero weights.
    """
    layout = weight_layout(child, mode, max_paths)
    before = layout.fill(store, str(Reference(reference)))
    after = layout.fill(store, "current")
    return vector_angle(before.values, after.values)
