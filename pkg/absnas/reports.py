"""
Experiment reports: a fixed-width text table for people and a JSON twin for programs.
"""

import io
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple

from rich.console import Console
from rich.table import Table

from . import constants
from .aliases import PathOrStr
from .exceptions import *
from .util import check_schema, read_json, write_json


def format_cell(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return f"{value:.4f}"
    if isinstance(value, (list, tuple)):
        return ", ".join(format_cell(v) for v in value)
    return str(value)


@dataclass
class Report:
    experiment: str
    title: str
    config_hash: str
    seeds: List[int]
    columns: List[str]
    rows: List[List[Any]]
    notes: List[str] = field(default_factory=list)
    details: Dict[str, Any] = field(default_factory=dict)
    """Full machine-readable results, only written to the JSON file."""

    def __post_init__(self):
        for row in self.rows:
            if len(row) != len(self.columns):
                raise ConfigurationError(
                    f"Report '{self.experiment}' has a row of {len(row)} cells for {len(self.columns)} columns"
                )

    def table(self) -> Table:
        table = Table(title=self.title, show_lines=False)
        for index, column in enumerate(self.columns):
            table.add_column(column, justify="left" if index == 0 else "right", no_wrap=True)
        for row in self.rows:
            table.add_row(*(format_cell(cell) for cell in row))
        return table

    def render_text(self) -> str:
        """
        Plain text rendering; equal reports always render to identical text.
        """
        console = Console(
            file=io.StringIO(),
            record=True,
            width=constants.REPORT_WIDTH,
            color_system=None,
            force_terminal=False,
            highlight=False,
        )
        console.print(f"experiment: {self.experiment}")
        console.print(f"config hash: {self.config_hash}")
        console.print(f"seeds: {', '.join(str(s) for s in self.seeds)}")
        console.print(self.table())
        for note in self.notes:
            console.print(f"note: {note}", soft_wrap=True)
        return console.export_text()

    def to_dict(self) -> Dict[str, Any]:
        return {"schema": constants.REPORT_SCHEMA, **asdict(self)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any], source: PathOrStr = "<report>") -> "Report":
        check_schema(data.get("schema"), constants.REPORT_SCHEMA, source=source)
        fields = {k: v for k, v in data.items() if k != "schema"}
        try:
            return cls(**fields)
        except TypeError as exc:
            raise SchemaError(f"Malformed report '{source}': {exc}")

    def write(self, directory: PathOrStr) -> Tuple[Path, Path]:
        directory = Path(directory)
        text_path = directory / f"{self.experiment}.txt"
        json_path = directory / f"{self.experiment}.json"
        try:
            directory.mkdir(parents=True, exist_ok=True)
            text_path.write_text(self.render_text())
        except OSError as exc:
            raise IoFailure(f"Failed to write report '{text_path}': {exc}")
        write_json(json_path, self.to_dict())
        return text_path, json_path


def load_report(path: PathOrStr) -> Report:
    return Report.from_dict(read_json(path), source=path)


def load_reports(directory: PathOrStr) -> List[Report]:
    """
    Every report found below ``directory``, sorted by path.
    """
    paths: Sequence[Path] = sorted(Path(directory).rglob("*.json"))
    reports = []
    for path in paths:
        data = read_json(path)
        if isinstance(data, dict) and str(data.get("schema", "")).startswith("absnas.report/"):
            reports.append(Report.from_dict(data, source=path))
    return reports
