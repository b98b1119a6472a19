SPACE_SCHEMA = "absnas.space/1.0"

CONFIG_SCHEMA = "absnas.config/1.0"

DATASET_SCHEMA = "absnas.dataset/1.0"

CHECKPOINT_SCHEMA = "absnas.checkpoint/1.0"

BENCH_SCHEMA = "absnas.bench/1.0"

SHRINK_LOG_SCHEMA = "absnas.shrinklog/1.0"

REPORT_SCHEMA = "absnas.report/1.0"

DATA_DIR = "data"

BENCH_DIR = "bench"

SHRINK_DIR = "shrink"

EVALUATE_DIR = "evaluate"

TABLE_FILE = "table.json"

SHRINK_LOG_FILE = "log.jsonl"

SHRUNK_SPACE_FILE = "space.json"

CHECKPOINT_FILE = "checkpoint.npz"

DEFAULT_RUNS_DIR = "runs"

# Retries before a degenerate space is reported by the sampler.
DEFAULT_SAMPLE_RETRIES = 100

# Full-graph weight vectors refuse children with more root-to-leaf paths than this.
DEFAULT_MAX_PATHS = 64

DEFAULT_CHILD_CAP = 1000

NORM_MOMENTUM = 0.1

NORM_EPS = 1e-5

REPORT_WIDTH = 120
