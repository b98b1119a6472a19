from .graph import (
    ChildModel,
    OperatorId,
    OperatorKind,
    OperatorSpec,
    SupernetGraph,
    cell_space,
    enumerate_children,
    enumerate_paths,
    sample_child,
    space_size,
)
from .version import VERSION

__all__ = [
    "VERSION",
    "ChildModel",
    "OperatorId",
    "OperatorKind",
    "OperatorSpec",
    "SupernetGraph",
    "cell_space",
    "enumerate_children",
    "enumerate_paths",
    "sample_child",
    "space_size",
]
