from .bench import bench
from .completion import completion
from .evaluate import evaluate
from .main import main
from .report import report
from .shrink import shrink

__all__ = ["main", "bench", "shrink", "evaluate", "report", "completion"]
