"""
Toy classification data: concentric rings in two dimensions.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterator, Optional, Tuple

import numpy as np

from . import constants
from .aliases import PathOrStr
from .exceptions import *
from .util import StrEnum, check_schema


class DatasetSplit(StrEnum):
    train = "train"
    validation = "validation"


@dataclass
class ToyDataset:
    inputs: np.ndarray
    labels: np.ndarray
    split: DatasetSplit
    num_classes: int
    seed: int = 0

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.split = DatasetSplit(self.split)
        if self.inputs.ndim != 2 or self.labels.ndim != 1 or len(self.inputs) != len(self.labels):
            raise ShapeMismatch(
                f"Inputs {self.inputs.shape} and labels {self.labels.shape} don't describe the same samples"
            )
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ShapeMismatch(f"Labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    def batches(
        self, batch_size: int, rng: Optional[np.random.Generator] = None
    ) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        """
        Iterate over mini-batches, shuffled when ``rng`` is given.

        A trailing batch with a single sample is dropped since it can't be batch-normalized.
        """
        order = rng.permutation(len(self)) if rng is not None else np.arange(len(self))
        for start in range(0, len(self), batch_size):
            index = order[start : start + batch_size]
            if len(index) < 2 and len(self) >= 2:
                continue
            yield self.inputs[index], self.labels[index]

    def subset(self, index: np.ndarray) -> "ToyDataset":
        return ToyDataset(self.inputs[index], self.labels[index], self.split, self.num_classes, self.seed)


@dataclass
class DataSplits:
    train: ToyDataset
    validation: ToyDataset


@dataclass
class DataConfig:
    num_train: int = 1000
    num_validation: int = 500
    num_classes: int = 4
    noise: float = 0.08
    seed: int = 0

    def __post_init__(self):
        if self.num_train < 2 or self.num_validation < 1:
            raise ConfigurationError("data: need at least 2 training and 1 validation sample")
        if self.num_classes < 2:
            raise ConfigurationError("data: 'num_classes' must be >= 2")
        if self.noise < 0:
            raise ConfigurationError("data: 'noise' must be >= 0")

    def generate(self) -> DataSplits:
        return make_rings(
            self.num_train,
            self.num_validation,
            num_classes=self.num_classes,
            noise=self.noise,
            seed=self.seed,
        )


def make_rings(
    num_train: int,
    num_validation: int,
    *,
    num_classes: int = 4,
    noise: float = 0.08,
    seed: int = 0,
) -> DataSplits:
    """
    Sample points on ``num_classes`` concentric rings, the class being the ring index,
    and split them into disjoint train and validation sets.
    """
    rng = np.random.default_rng(seed)
    total = num_train + num_validation
    labels = np.arange(total) % num_classes
    rng.shuffle(labels)
    theta = rng.uniform(0.0, 2.0 * np.pi, size=total)
    radius = (labels + 1) / num_classes + rng.normal(0.0, noise, size=total)
    inputs = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
    return DataSplits(
        train=ToyDataset(inputs[:num_train], labels[:num_train], DatasetSplit.train, num_classes, seed),
        validation=ToyDataset(
            inputs[num_train:], labels[num_train:], DatasetSplit.validation, num_classes, seed
        ),
    )


def save_dataset(dataset: ToyDataset, path: PathOrStr, *, config_hash: Optional[str] = None):
    """
    Write a one-line JSON header followed by little-endian float64 inputs and int64 labels.
    The header also names the config hash of the run that generated the data, if any.
    """
    header: Dict[str, Any] = {
        "schema": constants.DATASET_SCHEMA,
        "split": str(dataset.split),
        "num_classes": dataset.num_classes,
        "seed": dataset.seed,
        "shape": list(dataset.inputs.shape),
    }
    if config_hash is not None:
        header["config_hash"] = config_hash
    path = Path(path)
    try:
        path.parent.mkdir(exist_ok=True, parents=True)
        with open(path, "wb") as f:
            f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
            f.write(dataset.inputs.astype("<f8").tobytes())
            f.write(dataset.labels.astype("<i8").tobytes())
    except OSError as exc:
        raise IoFailure(f"Failed to write dataset '{path}': {exc}")


def load_dataset(path: PathOrStr) -> ToyDataset:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as exc:
        raise IoFailure(f"Failed to read dataset '{path}': {exc}")
    head, sep, body = raw.partition(b"\n")
    try:
        header = json.loads(head)
    except json.JSONDecodeError:
        raise IoFailure(f"'{path}' doesn't start with a dataset header")
    check_schema(header.get("schema"), constants.DATASET_SCHEMA, source=path)
    rows, cols = header["shape"]
    split = rows * cols * 8
    if not sep or len(body) != split + rows * 8:
        raise IoFailure(f"Dataset '{path}' is truncated")
    inputs = np.frombuffer(body[:split], dtype="<f8").reshape(rows, cols)
    labels = np.frombuffer(body[split:], dtype="<i8")
    return ToyDataset(inputs, labels, DatasetSplit(header["split"]), int(header["num_classes"]), int(header["seed"]))
