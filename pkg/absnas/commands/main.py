import logging
import os
import signal
import sys
from pathlib import Path
from typing import Optional, Sequence

import click
import rich
from click_help_colors import HelpColorsCommand, HelpColorsGroup
from rich import pretty, traceback
from rich.logging import RichHandler

from .. import constants, util
from ..config import ExperimentConfig
from ..data import DataSplits, load_dataset, save_dataset
from ..exceptions import *
from ..util import print_stderr, stderr_console
from ..version import VERSION

CLICK_GROUP_DEFAULTS = {
    "cls": HelpColorsGroup,
    "help_options_color": "green",
    "help_headers_color": "yellow",
    "context_settings": {"max_content_width": 115},
}

CLICK_COMMAND_DEFAULTS = {
    "cls": HelpColorsCommand,
    "help_options_color": "green",
    "help_headers_color": "yellow",
    "context_settings": {"max_content_width": 115},
}


def excepthook(exctype, value, tb):
    """
    Used to patch `sys.excepthook` in order to customize handling of uncaught exceptions.
    """
    # No traceback for our own errors.
    if issubclass(exctype, (AbsNasError,)):
        print_stderr(f"[red][bold]{exctype.__name__}:[/] [i]{value}[/][/]")
    # For interruptions, call the original exception handler.
    elif issubclass(exctype, (KeyboardInterrupt, TermInterrupt)):
        sys.__excepthook__(exctype, value, tb)
    else:
        print_stderr(traceback.Traceback.from_exception(exctype, value, tb, suppress=[click]))


sys.excepthook = excepthook


def handle_sigterm(sig, frame):
    del sig, frame
    raise TermInterrupt


@click.group(**CLICK_GROUP_DEFAULTS)  # type: ignore[call-overload]
@click.version_option(version=VERSION)
@click.option(
    "--quiet",
    is_flag=True,
    help="Only log warnings and errors.",
)
@click.option(
    "--log-level",
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
    default="INFO",
    show_default=True,
    help="Verbosity of the log messages written to stderr.",
)
def main(quiet: bool = False, log_level: str = "INFO"):
    # Configure rich.
    if os.environ.get("ABSNAS_GITHUB_TESTING"):
        # Force a broader terminal when running tests in GitHub Actions.
        rich.reconfigure(width=180, force_terminal=True, force_interactive=False)
    pretty.install()

    # Handle SIGTERM just like KeyboardInterrupt
    signal.signal(signal.SIGTERM, handle_sigterm)

    logging.basicConfig(
        level="WARNING" if quiet else log_level.upper(),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=stderr_console(), show_path=False, rich_tracebacks=False)],
        force=True,
    )


config_option = click.option(
    "-c",
    "--config",
    "config_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    required=True,
    help="Path to the experiment configuration (JSON).",
)

seed_option = click.option(
    "-s",
    "--seed",
    "seeds",
    type=int,
    multiple=True,
    help="Seed to run with. Repeat to run several seeds; replaces the config's seed list.",
)

out_option = click.option(
    "-o",
    "--out",
    type=click.Path(file_okay=False, path_type=Path),
    help=f"""Output directory. Defaults to the config's 'output_dir', or a fresh
    directory under '{constants.DEFAULT_RUNS_DIR}/'.""",
)

workers_option = click.option(
    "-w",
    "--workers",
    type=click.IntRange(min=1),
    help="Number of worker processes/threads. Overrides the config.",
)


def load_config(
    config_path: Path,
    seeds: Sequence[int] = (),
    out: Optional[Path] = None,
    workers: Optional[int] = None,
    experiments: Optional[str] = None,
) -> ExperimentConfig:
    config = ExperimentConfig.load(config_path).with_overrides(
        seeds=seeds, output_dir=out, workers=workers, experiments=experiments
    )
    if config.output_dir is None:
        config = config.with_overrides(output_dir=Path(constants.DEFAULT_RUNS_DIR) / util.unique_name())
        print_stderr(f"Writing outputs to [b cyan]{config.output_dir}[/]")
    return config


def prepare_data(config: ExperimentConfig) -> DataSplits:
    """
    Load the datasets from the output directory, generating and saving them first if needed.
    """
    assert config.output_dir is not None
    data_dir = config.output_dir / constants.DATA_DIR
    train_path, validation_path = data_dir / "train.bin", data_dir / "validation.bin"
    if train_path.is_file() and validation_path.is_file():
        splits = DataSplits(load_dataset(train_path), load_dataset(validation_path))
        if splits.train.seed != config.data.seed or len(splits.train) != config.data.num_train:
            raise ConfigurationError(
                f"Datasets in '{data_dir}' were generated with a different data config; use another --out"
            )
        return splits
    splits = config.data.generate()
    save_dataset(splits.train, train_path, config_hash=config.config_hash)
    save_dataset(splits.validation, validation_path, config_hash=config.config_hash)
    return splits
