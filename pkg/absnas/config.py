"""
Experiment configuration: one JSON file with a section per concern.
"""

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from . import constants
from .aliases import PathOrStr
from .angle import VectorMode
from .data import DataConfig
from .exceptions import *
from .graph import SupernetGraph, load_space
from .shrink import ShrinkConfig
from .supernet import TrainConfig
from .util import StrEnum, check_schema, read_json, short_hash


class Experiment(StrEnum):
    ranking = "ranking"
    stability = "stability"
    convergence = "convergence"
    timing = "timing"
    selection = "selection"
    search = "search"
    standalone = "standalone"


def parse_experiments(value: Optional[str]) -> List[Experiment]:
    """
    Parse a comma-separated experiment list. An empty string selects nothing.
    """
    if value is None:
        return list(Experiment)
    names = [name.strip() for name in value.split(",") if name.strip()]
    try:
        return [Experiment(name) for name in names]
    except ValueError:
        valid = ", ".join(str(e) for e in Experiment)
        raise ConfigurationError(f"Unknown experiment in '{value}' (choose from {valid})")


def _section(cls, name: str, data: Optional[Dict[str, Any]], **extra):
    data = dict(data or {})
    unknown = set(data) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigurationError(f"{name}: unknown keys {sorted(unknown)}")
    try:
        return cls(**{**extra, **data})
    except TypeError as exc:
        raise ConfigurationError(f"{name}: {exc}")


@dataclass
class BenchConfig:
    seed: int = 0
    cap: int = constants.DEFAULT_CHILD_CAP

    def __post_init__(self):
        if self.cap < 1:
            raise ConfigurationError("bench: 'cap' must be >= 1")


@dataclass
class EvaluateConfig:
    experiments: List[Experiment] = field(default_factory=lambda: list(Experiment))
    sample_cap: int = constants.DEFAULT_CHILD_CAP
    probe_epochs: List[int] = field(default_factory=lambda: [0, 1, 2, 5, 10, 20])
    timing_children: int = 100
    timing_repetitions: int = 3
    drop_count: int = 6
    search_budget: int = 50
    search_trials: int = 20
    population: int = 10
    tournament: int = 3
    vector_mode: VectorMode = VectorMode.full_graph

    def __post_init__(self):
        try:
            self.experiments = [Experiment(e) for e in self.experiments]
            self.vector_mode = VectorMode(self.vector_mode)
        except ValueError as exc:
            raise ConfigurationError(f"evaluate: {exc}")
        if list(self.probe_epochs) != sorted(self.probe_epochs) or any(e < 0 for e in self.probe_epochs):
            raise ConfigurationError("evaluate: 'probe_epochs' must be non-negative and ascending")
        if self.timing_repetitions < 3:
            raise ConfigurationError("evaluate: 'timing_repetitions' must be >= 3")
        for name in ("sample_cap", "timing_children", "search_budget", "search_trials", "population", "tournament"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"evaluate: '{name}' must be >= 1")
        if self.drop_count < 0:
            raise ConfigurationError("evaluate: 'drop_count' must be >= 0")


@dataclass
class ExperimentConfig:
    space: SupernetGraph
    space_path: Path
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    shrink: ShrinkConfig = field(default_factory=ShrinkConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    evaluate: EvaluateConfig = field(default_factory=EvaluateConfig)
    seeds: List[int] = field(default_factory=lambda: [0])
    output_dir: Optional[Path] = None
    workers: int = 1

    def __post_init__(self):
        if not self.seeds:
            raise ConfigurationError("'seeds' must not be empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError("'seeds' must not repeat")
        if self.workers < 1:
            raise ConfigurationError("'workers' must be >= 1")

    @classmethod
    def load(cls, path: PathOrStr) -> "ExperimentConfig":
        """
        :raises ConfigurationError: If a section is malformed.
        :raises IoFailure: If the config or the space it references can't be read.
        """
        path = Path(path)
        raw = read_json(path)
        check_schema(raw.get("schema"), constants.CONFIG_SCHEMA, source=path)
        known = {"schema", "space", "data", "train", "shrink", "bench", "evaluate", "seeds", "output_dir", "workers"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigurationError(f"Config '{path}' has unknown sections {sorted(unknown)}")
        if "space" not in raw:
            raise ConfigurationError(f"Config '{path}' doesn't name a 'space' file")
        space_path = (path.parent / raw["space"]).resolve()
        if not space_path.is_file():
            raise IoFailure(f"Space file '{space_path}' referenced by '{path}' not found")
        workers = int(raw.get("workers", 1))
        train = _section(TrainConfig, "train", raw.get("train"))
        shrink_raw = dict(raw.get("shrink") or {})
        shrink_train = shrink_raw.pop("train", None)
        shrink = _section(
            ShrinkConfig,
            "shrink",
            shrink_raw,
            train=train if shrink_train is None else _section(TrainConfig, "shrink.train", shrink_train),
            workers=workers,
        )
        output_dir = raw.get("output_dir")
        return cls(
            space=load_space(space_path),
            space_path=space_path,
            data=_section(DataConfig, "data", raw.get("data")),
            train=train,
            shrink=shrink,
            bench=_section(BenchConfig, "bench", raw.get("bench")),
            evaluate=_section(EvaluateConfig, "evaluate", raw.get("evaluate")),
            seeds=[int(s) for s in raw.get("seeds", [0])],
            output_dir=None if output_dir is None else (path.parent / output_dir),
            workers=workers,
        )

    def with_overrides(
        self,
        seeds: Sequence[int] = (),
        output_dir: Optional[PathOrStr] = None,
        workers: Optional[int] = None,
        experiments: Optional[str] = None,
    ) -> "ExperimentConfig":
        updated = self
        if seeds:
            updated = replace(updated, seeds=list(seeds))
        if output_dir is not None:
            updated = replace(updated, output_dir=Path(output_dir))
        if workers is not None:
            updated = replace(updated, workers=workers, shrink=replace(updated.shrink, workers=workers))
        if experiments is not None:
            updated = replace(updated, evaluate=replace(updated.evaluate, experiments=parse_experiments(experiments)))
        return updated

    def to_dict(self) -> Dict[str, Any]:
        """
        The resolved configuration, with the space inlined instead of referenced by path.
        """
        return {
            "schema": constants.CONFIG_SCHEMA,
            "space": self.space.to_dict(),
            "data": vars(self.data).copy(),
            "train": self.train.to_dict(),
            "shrink": {k: v for k, v in self.shrink.to_dict().items() if k != "workers"},
            "bench": vars(self.bench).copy(),
            "evaluate": {
                **vars(self.evaluate),
                "experiments": [str(e) for e in self.evaluate.experiments],
                "vector_mode": str(self.evaluate.vector_mode),
            },
            "seeds": list(self.seeds),
        }

    @property
    def config_hash(self) -> str:
        """
        Hash of everything that affects results; output location and worker count don't.
        """
        return short_hash(self.to_dict())
