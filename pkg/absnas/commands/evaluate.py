import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import click
import numpy as np
from rich import print

from .. import constants
from ..bench import GroundTruthTable, load_table, shrunk_space_catalog
from ..config import Experiment, ExperimentConfig
from ..data import DataSplits
from ..evalstats import (
    RankingReport,
    RankMetric,
    convergence_curve,
    operator_selection_report,
    rank_children_by_metric,
    ranking_children,
    stability_report,
    standalone_correlation,
    timing_comparison,
)
from ..exceptions import *
from ..graph import ChildModel, SupernetGraph, load_space
from ..reports import Report
from ..search import search_study
from ..supernet import WeightStore, train_supernet
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

RANK_METRICS = (RankMetric.angle, RankMetric.accuracy, RankMetric.random)


@main.command(**CLICK_COMMAND_DEFAULTS)
@config_option
@seed_option
@out_option
@workers_option
@click.option(
    "-e",
    "--experiments",
    type=str,
    help=f"""Comma-separated experiments to run, from: {', '.join(str(e) for e in Experiment)}.
    Defaults to the config's list. An empty string runs nothing.""",
)
def evaluate(
    config_path: Path,
    seeds: Tuple[int, ...] = (),
    out: Optional[Path] = None,
    workers: Optional[int] = None,
    experiments: Optional[str] = None,
):
    """
    Run the evaluation experiments against the benchmark table in OUT/bench/.
    """
    config = load_config(config_path, seeds=seeds, out=out, workers=workers, experiments=experiments)
    written = cmd_evaluate(config)
    if not written:
        print("[yellow]No experiments selected, nothing to do.[/]")
    for path in written:
        print(f"[green]\N{check mark} Wrote[/] [b]{path}[/]")


@dataclass
class EvaluationContext:
    config: ExperimentConfig
    data: DataSplits
    table: GroundTruthTable
    children: List[ChildModel] = field(default_factory=list)
    stores: Dict[int, WeightStore] = field(default_factory=dict)
    rankings: Dict[int, Dict[str, RankingReport]] = field(default_factory=dict)

    def store(self, seed: int) -> WeightStore:
        if seed not in self.stores:
            logger.info("Training supernet for seed %d", seed)
            self.stores[seed] = train_supernet(self.config.space, self.data, self.config.train, seed)
        return self.stores[seed]

    def ranking(self, seed: int) -> Dict[str, RankingReport]:
        if seed not in self.rankings:
            store = self.store(seed)
            self.rankings[seed] = {
                str(metric): rank_children_by_metric(
                    self.children,
                    metric,
                    store,
                    self.table,
                    self.data,
                    seed=seed,
                    mode=self.config.evaluate.vector_mode,
                )
                for metric in RANK_METRICS
            }
        return self.rankings[seed]

    def report(self, experiment: Experiment, title: str, columns: List[str], rows, **kwargs) -> Report:
        return Report(
            experiment=str(experiment),
            title=title,
            config_hash=self.config.config_hash,
            seeds=list(self.config.seeds),
            columns=columns,
            rows=rows,
            **kwargs,
        )


def ranking_experiment(ctx: EvaluationContext) -> Report:
    rows = []
    details: Dict[str, dict] = {"children": [c.encode() for c in ctx.children], "seeds": {}}
    for seed in ctx.config.seeds:
        reports = ctx.ranking(seed)
        angle = reports[str(RankMetric.angle)]
        rows.append(
            [
                seed,
                angle.epoch,
                angle.tau,
                reports[str(RankMetric.accuracy)].tau,
                reports[str(RankMetric.random)].tau,
                angle.ties,
                angle.empty_vectors,
                angle.degenerate,
            ]
        )
        details["seeds"][str(seed)] = {
            name: {"tau": r.tau, "ties": r.ties, "degenerate": r.degenerate, "values": r.values}
            for name, r in reports.items()
        }
    notes = [
        f"{len(ctx.children)} children ranked against the ground-truth table",
        "accuracy is measured with inherited weights after recalibrating normalization statistics",
    ]
    for metric in RANK_METRICS:
        taus = [ctx.ranking(seed)[str(metric)].tau for seed in ctx.config.seeds]
        std = float(np.std(taus, ddof=1)) if len(taus) > 1 else 0.0
        notes.append(f"{metric}: mean tau {np.mean(taus):.4f}, std {std:.4f}")
    return ctx.report(
        Experiment.ranking,
        "Ranking correlation with the ground truth",
        ["seed", "epoch", "angle tau", "accuracy tau", "random tau", "angle ties", "empty vectors", "degenerate"],
        rows,
        notes=notes,
        details=details,
    )


def stability_experiment(ctx: EvaluationContext) -> Report:
    rows = []
    details = {}
    for metric in RANK_METRICS:
        stats = stability_report(str(metric), [ctx.ranking(seed)[str(metric)].tau for seed in ctx.config.seeds])
        rows.append([stats.metric, len(stats.taus), stats.mean, stats.std, stats.range, min(stats.taus), max(stats.taus)])
        details[stats.metric] = asdict(stats)
    notes = []
    if len(ctx.config.seeds) < 2:
        notes.append("a single seed gives no spread; pass several --seed values")
    return ctx.report(
        Experiment.stability,
        "Ranking stability across seeds",
        ["metric", "seeds", "mean tau", "std", "range", "min", "max"],
        rows,
        notes=notes,
        details=details,
    )


def convergence_experiment(ctx: EvaluationContext) -> Report:
    cfg = ctx.config
    rows = []
    details = {}
    for seed in cfg.seeds:
        curves = convergence_curve(
            cfg.space, ctx.data, cfg.train, ctx.table, RANK_METRICS, cfg.evaluate.probe_epochs, seed, ctx.children
        )
        details[str(seed)] = {metric: [asdict(p) for p in points] for metric, points in curves.curves.items()}
        for index, epoch in enumerate(cfg.evaluate.probe_epochs):
            points = {metric: curves.curves[str(metric)][index] for metric in RANK_METRICS}
            tied = [str(metric) for metric, point in points.items() if point.degenerate]
            rows.append([seed, epoch, *(points[m].tau for m in RANK_METRICS), ", ".join(tied) or "-"])
    return ctx.report(
        Experiment.convergence,
        "Ranking correlation during supernet training",
        ["seed", "epoch", "angle tau", "accuracy tau", "random tau", "all tied"],
        rows,
        notes=["'all tied' lists metrics whose values were identical for every child (tau 0 by convention)"],
        details=details,
    )


def timing_experiment(ctx: EvaluationContext) -> Report:
    cfg = ctx.config
    seed = cfg.seeds[0]
    count = min(cfg.evaluate.timing_children, len(ctx.children))
    index = np.sort(np.random.default_rng(seed).choice(len(ctx.children), size=count, replace=False))
    children = [ctx.children[i] for i in index]
    angle, acc = timing_comparison(
        children, ctx.store(seed), ctx.data, cfg.evaluate.timing_repetitions, mode=cfg.evaluate.vector_mode
    )
    rows = [[t.metric, t.num_children, t.repetitions, t.mean, t.std] for t in (angle, acc)]
    return ctx.report(
        Experiment.timing,
        "Metric evaluation time",
        ["metric", "children", "repetitions", "mean seconds", "std seconds"],
        rows,
        notes=[
            f"accuracy / angle time ratio: {acc.mean / angle.mean:.1f}x",
            "timings are measured sequentially and vary between runs",
        ],
        details={"angle": asdict(angle), "accuracy": asdict(acc)},
    )


def selection_experiment(ctx: EvaluationContext) -> Report:
    cfg = ctx.config
    report = operator_selection_report(
        cfg.space, ctx.table, ctx.data, cfg.shrink, cfg.evaluate.drop_count, cfg.seeds
    )
    rows = [
        [
            run.metric,
            run.seed,
            ", ".join(str(op) for op in run.removed) or "-",
            len(run.reserved),
            run.mean_reserved_rank,
            run.top_overlap,
        ]
        for run in report.runs
    ]
    notes = [
        f"{report.drop_count} operator(s) dropped per run; ground-truth rank 0 is the best operator",
        "top overlap counts reserved operators among the equally many best ground-truth operators",
    ]
    if len(cfg.seeds) < 3:
        notes.append("fewer than 3 seeds were run")
    return ctx.report(
        Experiment.selection,
        "Operators kept by each shrinking metric",
        ["metric", "seed", "removed", "reserved", "mean gt rank", "top overlap"],
        rows,
        notes=notes,
        details={
            "ground_truth": report.ground_truth,
            "gt_rank": report.gt_rank,
            "runs": [
                {**asdict(run), "removed": [str(op) for op in run.removed], "reserved": [str(op) for op in run.reserved]}
                for run in report.runs
            ],
        },
    )


def shrunk_spaces(config: ExperimentConfig) -> List[SupernetGraph]:
    """
    Spaces written by earlier `shrink` runs into the same output directory.
    """
    assert config.output_dir is not None
    spaces = []
    for seed in config.seeds:
        path = config.output_dir / constants.SHRINK_DIR / f"seed-{seed}" / constants.SHRUNK_SPACE_FILE
        if path.is_file():
            space = load_space(path)
            if space.is_subspace_of(config.space):
                spaces.append(space)
            else:
                logger.warning("Ignoring '%s', it isn't a subspace of the configured space", path)
    return spaces


def search_experiment(ctx: EvaluationContext) -> Report:
    cfg = ctx.config
    spaces = list(shrunk_space_catalog(cfg.space)) + shrunk_spaces(cfg)
    rows_data = search_study(
        ctx.table,
        spaces,
        cfg.evaluate.search_budget,
        cfg.evaluate.search_trials,
        cfg.seeds[0],
        population=cfg.evaluate.population,
        tournament=cfg.evaluate.tournament,
    )
    rows = [
        [r.space, r.size, r.exhaustive, r.random_mean, r.random_std, r.evolution_mean, r.evolution_std]
        for r in rows_data
    ]
    return ctx.report(
        Experiment.search,
        "Budgeted search in the original and shrunk spaces",
        ["space", "children", "exhaustive best", "random mean", "random std", "evolution mean", "evolution std"],
        rows,
        notes=[
            f"budget {cfg.evaluate.search_budget} evaluations, {cfg.evaluate.search_trials} trials per searcher",
            "the exhaustive best of a subspace never exceeds that of its parent; "
            "only budgeted searchers can gain from shrinking",
        ],
        details={"rows": [asdict(r) for r in rows_data]},
    )


def standalone_experiment(ctx: EvaluationContext) -> Report:
    records = list(ctx.table.records.values())
    tau = standalone_correlation(ctx.table)
    angles = [r.angle for r in records]
    return ctx.report(
        Experiment.standalone,
        "Standalone angle against standalone accuracy",
        ["children", "tau", "mean angle", "min angle", "max angle"],
        [[len(records), tau, float(np.mean(angles)), min(angles), max(angles)]],
        notes=["each child's angle is measured against its own initialization after standalone training"],
    )


EXPERIMENTS: Dict[Experiment, Callable[[EvaluationContext], Report]] = {
    Experiment.ranking: ranking_experiment,
    Experiment.stability: stability_experiment,
    Experiment.convergence: convergence_experiment,
    Experiment.timing: timing_experiment,
    Experiment.selection: selection_experiment,
    Experiment.search: search_experiment,
    Experiment.standalone: standalone_experiment,
}


def cmd_evaluate(config: ExperimentConfig) -> List[Path]:
    """
    :raises MissingBenchmark: If the output directory has no benchmark table.
    """
    assert config.output_dir is not None
    experiments = config.evaluate.experiments
    if not experiments:
        logger.info("No experiments selected")
        return []
    table = load_table(config.output_dir / constants.BENCH_DIR / constants.TABLE_FILE, config.space)
    data = prepare_data(config)
    ctx = EvaluationContext(
        config=config,
        data=data,
        table=table,
        children=ranking_children(config.space, cap=config.evaluate.sample_cap, seed=0),
    )
    written = []
    for experiment in experiments:
        logger.info("Running experiment '%s'", experiment)
        report = EXPERIMENTS[experiment](ctx)
        text_path, _ = report.write(config.output_dir / constants.EVALUATE_DIR)
        written.append(text_path)
    return written
