from pathlib import Path

import click
from rich import print

from ..exceptions import *
from ..reports import load_reports
from .main import CLICK_COMMAND_DEFAULTS, main


@main.command(**CLICK_COMMAND_DEFAULTS)
@click.argument("out", type=click.Path(exists=True, file_okay=False, path_type=Path))
def report(out: Path):
    """
    Display every experiment report found under the output directory OUT.
    """
    reports = load_reports(out)
    if not reports:
        raise IoFailure(f"No reports found under '{out}'; run 'absnas evaluate' first")
    for item in reports:
        print(f"[b]{item.experiment}[/] [dim](config {item.config_hash}, seeds {', '.join(map(str, item.seeds))})[/]")
        print(item.table())
        for note in item.notes:
            print(f"[i]{note}[/]")
        print()
