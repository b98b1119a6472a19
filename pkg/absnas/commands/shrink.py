import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Tuple

from rich import print
from rich.table import Table

from .. import constants, util
from ..bench import GroundTruthTable, load_table
from ..config import ExperimentConfig
from ..data import DataSplits
from ..exceptions import *
from ..graph import SupernetGraph, save_space, space_size
from ..shrink import ScoreMetric, ShrinkConfig, ShrinkState, run_abs, write_shrink_log
from ..supernet import save_checkpoint
from .main import (
    CLICK_COMMAND_DEFAULTS,
    config_option,
    load_config,
    main,
    out_option,
    prepare_data,
    seed_option,
    workers_option,
)

logger = logging.getLogger(__name__)


@main.command(**CLICK_COMMAND_DEFAULTS)
@config_option
@seed_option
@out_option
@workers_option
def shrink(
    config_path: Path,
    seeds: Tuple[int, ...] = (),
    out: Optional[Path] = None,
    workers: Optional[int] = None,
):
    """
    Shrink the configured search space once per seed.

    Each seed writes a shrink log, the shrunk space (usable as the space of a new config)
    and a supernet checkpoint under OUT/shrink/seed-N/.
    """
    config = load_config(config_path, seeds=seeds, out=out, workers=workers)
    results = cmd_shrink(config)

    table = Table(title="Shrunk spaces", show_lines=False)
    table.add_column("Seed", justify="right")
    table.add_column("Iterations", justify="right")
    table.add_column("Removed", justify="left")
    table.add_column("Size", justify="right")
    table.add_column("Stopped", justify="left")
    for seed, state in results:
        table.add_row(
            str(seed),
            str(len(state.records)),
            ", ".join(str(op) for op in state.removed) or "-",
            f"{space_size(state.initial_space)} \N{rightwards arrow} {space_size(state.space)}",
            str(state.stop_reason),
        )
    print(table)


def seed_dir(config: ExperimentConfig, seed: int) -> Path:
    assert config.output_dir is not None
    return config.output_dir / constants.SHRINK_DIR / f"seed-{seed}"


ShrinkJob = Tuple[SupernetGraph, ShrinkConfig, DataSplits, int, Optional[GroundTruthTable]]


def _shrink_one(args: ShrinkJob) -> ShrinkState:
    space, cfg, data, seed, table = args
    return run_abs(space, cfg, data, seed, table=table)


def cmd_shrink(config: ExperimentConfig) -> List[Tuple[int, ShrinkState]]:
    """
    Seeds run in a pool of at most ``config.workers`` processes. Every seed owns its
    generator, so the outputs don't depend on the pool size.

    :raises OutputExistsError: If a seed's log already exists.
    :raises MissingBenchmark: If ground-truth shrinking is configured without a benchmark table.
    """
    assert config.output_dir is not None
    for seed in config.seeds:
        util.ensure_absent(seed_dir(config, seed) / constants.SHRINK_LOG_FILE)
    data = prepare_data(config)
    table = None
    if config.shrink.metric == ScoreMetric.ground_truth:
        table_path = config.output_dir / constants.BENCH_DIR / constants.TABLE_FILE
        table = load_table(table_path, config.space)

    workers = min(config.workers, len(config.seeds))
    cfg = config.shrink
    if workers > 1:
        # Parallel seeds score their operators serially.
        cfg = replace(cfg, workers=1)
    jobs = [(config.space, cfg, data, seed, table) for seed in config.seeds]
    logger.info(
        "Shrinking space '%s' for %d seed(s) with %d worker(s)", config.space.name, len(jobs), workers
    )

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            states = list(executor.map(_shrink_one, jobs))
    else:
        states = [_shrink_one(job) for job in jobs]
    for seed, state in zip(config.seeds, states):
        write_outputs(config, seed, state)
    return list(zip(config.seeds, states))


def write_outputs(config: ExperimentConfig, seed: int, state: ShrinkState):
    directory = seed_dir(config, seed)
    config_hash = config.config_hash
    write_shrink_log(
        state, directory / constants.SHRINK_LOG_FILE, config_hash=config_hash, seed=seed
    )
    shrunk = replace(state.space, name=f"{config.space.name}-shrunk-{seed}")
    save_space(shrunk, directory / constants.SHRUNK_SPACE_FILE, config_hash=config_hash, seed=seed)
    assert state.store is not None
    save_checkpoint(
        state.store,
        directory / constants.CHECKPOINT_FILE,
        state.rng,
        config_hash=config_hash,
        seed=seed,
    )
