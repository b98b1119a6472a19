import logging
import os
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import pytest

from absnas.bench import BenchRecord, GroundTruthTable
from absnas.commands.bench import cmd_bench
from absnas.config import ExperimentConfig
from absnas.data import DataConfig, DataSplits
from absnas.graph import SupernetGraph, enumerate_children, load_space
from absnas.nnet import InitPolicy
from absnas.supernet import TrainConfig, WeightStore, init_supernet

logger = logging.getLogger(__name__)

FIXTURES_DIR = Path(__file__).parent / "test_fixtures"


def pytest_addoption(parser):
    parser.addoption(
        "--record-golden",
        action="store_true",
        default=False,
        help="Rewrite the golden files under test_fixtures/golden/ instead of comparing against them.",
    )


def _synthetic_table(space: SupernetGraph, seed: int = 0, train: Optional[TrainConfig] = None) -> GroundTruthTable:
    """
    A ground-truth table without any training: higher slots are better on every edge and a
    small per-child offset keeps all accuracies distinct.
    """
    records = {}
    for index, child in enumerate(enumerate_children(space)):
        quality = sum((slot + 1) / len(edge.operators) for edge, slot in zip(space.edges, child.choices))
        accuracy = (quality + 1e-4 * index) / (len(space.edges) + 1)
        records[child.encoding] = BenchRecord(child.encoding, accuracy, seed, angle=2.0 * accuracy)
    return GroundTruthTable(space, records, train or TrainConfig(), seed)


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES_DIR


@pytest.fixture
def toy_space() -> SupernetGraph:
    """The 6-edge cell with identity, linear and mlp32 on every edge (729 children)."""
    return load_space(FIXTURES_DIR / "spaces" / "toy_cell.json")


@pytest.fixture
def shortcut_space() -> SupernetGraph:
    """A chain in -> a -> b -> out plus the shortcut a -> out, with linear, pool3 and none."""
    return load_space(FIXTURES_DIR / "spaces" / "shortcut.json")


@pytest.fixture
def tiny_space() -> SupernetGraph:
    """Two edges in a row, each with linear and identity (4 children)."""
    return load_space(FIXTURES_DIR / "spaces" / "tiny_chain.json")


@pytest.fixture
def tiny_config_path() -> Path:
    return FIXTURES_DIR / "configs" / "tiny.json"


@pytest.fixture
def small_data() -> DataSplits:
    return DataConfig(num_train=64, num_validation=32, seed=0).generate()


@pytest.fixture
def quick_train() -> TrainConfig:
    return TrainConfig(
        first_stage_epochs=1,
        later_stage_epochs=1,
        standalone_epochs=2,
        batch_size=16,
        learning_rate=0.05,
    )


@pytest.fixture
def tiny_store(tiny_space: SupernetGraph) -> WeightStore:
    return init_supernet(tiny_space, InitPolicy.kaiming_normal, 0, input_dim=2, num_classes=4)


@pytest.fixture
def table_factory() -> Callable[..., GroundTruthTable]:
    return _synthetic_table


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def record_golden(request) -> bool:
    return request.config.getoption("--record-golden")


@pytest.fixture(scope="session")
def toy_benchmark(tmp_path_factory) -> ExperimentConfig:
    """
    The toy config with its 729-child benchmark table already generated. Training every
    child takes minutes, so only slow tests should ask for it.
    """
    config = ExperimentConfig.load(FIXTURES_DIR / "configs" / "toy.json").with_overrides(
        output_dir=tmp_path_factory.mktemp("toy"), workers=os.cpu_count() or 1
    )
    logger.info("Generating the toy benchmark in %s", config.output_dir)
    cmd_bench(config)
    return config
