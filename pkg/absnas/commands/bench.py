import time
from datetime import timedelta
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from rich import print
from rich.progress import Progress

from .. import constants, util
from ..bench import GroundTruthTable, generate_benchmark, save_table
from ..config import ExperimentConfig
from ..exceptions import *
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


@main.command(**CLICK_COMMAND_DEFAULTS)
@config_option
@seed_option
@out_option
@workers_option
def bench(
    config_path: Path,
    seeds: Tuple[int, ...] = (),
    out: Optional[Path] = None,
    workers: Optional[int] = None,
):
    """
    Train every child of the configured space standalone and write the ground-truth table.

    The first --seed, if given, replaces the config's bench seed. Existing tables are never
    overwritten.
    """
    config = load_config(config_path, out=out, workers=workers)
    if seeds:
        config.bench.seed = seeds[0]
    table_path = cmd_bench(config)
    print(f"[green]\N{check mark} Wrote benchmark table to[/] [b]{table_path}[/]")


def cmd_bench(config: ExperimentConfig) -> Path:
    """
    :raises OutputExistsError: If the table already exists.
    :raises CapExceeded: If the space has too many children.
    """
    assert config.output_dir is not None
    bench_dir = config.output_dir / constants.BENCH_DIR
    table_path = bench_dir / constants.TABLE_FILE
    util.ensure_absent(table_path)
    data = prepare_data(config)

    start = time.monotonic()
    with Progress(transient=True) as progress:
        task = progress.add_task("Training children:", total=None)

        def advance(done: int, total: int):
            progress.update(task, completed=done, total=total)

        table = generate_benchmark(
            config.space,
            data,
            config.train,
            config.bench.seed,
            cap=config.bench.cap,
            workers=config.workers,
            data_config=vars(config.data).copy(),
            config_hash=config.config_hash,
            progress=advance,
        )
    elapsed = timedelta(seconds=time.monotonic() - start)

    save_table(table, table_path)
    (bench_dir / "summary.txt").write_text(summarize(table, config, elapsed))
    return table_path


def summarize(table: GroundTruthTable, config: ExperimentConfig, elapsed: timedelta) -> str:
    accuracies = np.array([r.accuracy for r in table.records.values()])
    best = max(table.records.values(), key=lambda r: (r.accuracy, tuple(-s for s in r.encoding)))
    lines = [
        f"space: {table.space.name} ({table.space_hash})",
        f"config hash: {config.config_hash}",
        f"seed: {table.seed}",
        f"children: {len(table)}",
        f"accuracy: mean {accuracies.mean():.4f}, std {accuracies.std():.4f}, "
        f"min {accuracies.min():.4f}, max {accuracies.max():.4f}",
        f"best child: {best.child_id} ({best.accuracy:.4f})",
        f"generation time: {util.format_timedelta(elapsed)}",
    ]
    return "\n".join(lines) + "\n"
