"""
Experiment runner behind the `simulate` and `sweep` commands.

Trials run in a process pool when WORKERS > 1; results are always
collected and written in run-index order.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import ValidationError

from src.config.settings import settings
from src.core.exceptions import ConfigError
from src.models.schemas import ExperimentConfig
from src.services import simnet
from src.services.adversary import PrecisionReport, evaluate
from src.services.simnet import RunReport, Trace
from src.services.topology import Topology, generate_topology
from src.utils.file_utils import (
    OutputPaths,
    get_output_paths,
    write_csv,
    write_json,
    write_ndjson,
)
from src.utils.rng import Stream, stream

CSV_COLUMNS = [
    "run_id",
    "seed",
    "n",
    "k",
    "d_max",
    "adversary_frac",
    "mode",
    "phase1_msgs",
    "phase2_msgs",
    "phase3_msgs",
    "total_msgs",
    "reach",
    "ticks",
    "true_origin",
    "guess",
    "correct",
    "anonset",
    "entropy_bits",
]

AGGREGATED = [
    "phase1_msgs",
    "phase2_msgs",
    "phase3_msgs",
    "total_msgs",
    "reach",
    "ticks",
    "correct",
    "anonset",
    "entropy_bits",
]

SWEEPABLE = ("k", "d_max", "adversary_fraction", "n")

RunResult = Tuple[Trace, RunReport]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    runs: List[RunResult]
    precision: PrecisionReport
    table: pd.DataFrame

    @property
    def reports(self) -> List[RunReport]:
        return [report for _, report in self.runs]


def _trial(job: Tuple[ExperimentConfig, int, int, Optional[Topology]]) -> RunResult:
    config, seed, run_id, topology = job
    return simnet.run(config, seed, run_id=run_id, topology=topology)


def run_trials(config: ExperimentConfig, workers: Optional[int] = None) -> List[RunResult]:
    """`trials` independent runs seeded master seed + run index"""
    workers = workers or settings.WORKERS
    topology = generate_topology(config.topology, config.seed) if config.fixed_topology else None
    jobs = [(config, config.trial_seed(i), i, topology) for i in range(config.trials)]
    if workers > 1 and len(jobs) > 1:
        logger.info(f"Running {len(jobs)} trials on {workers} workers")
        with ProcessPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(_trial, jobs))
    return [_trial(job) for job in jobs]


def run_table(reports: Sequence[RunReport]) -> pd.DataFrame:
    """One row per run in the fixed CSV schema"""
    return pd.DataFrame([r.to_row() for r in reports], columns=CSV_COLUMNS).astype(object)


def aggregate_rows(table: pd.DataFrame) -> pd.DataFrame:
    """Mean and sample standard deviation rows over the per-run table"""
    rows = []
    for label in ("mean", "std"):
        row: Dict[str, Any] = {column: None for column in CSV_COLUMNS}
        row["run_id"] = label
        row["mode"] = table["mode"].iloc[0] if len(table) else None
        for column in AGGREGATED:
            values = pd.Series(
                [np.nan if v is None else float(v) for v in table[column]], dtype=float
            )
            stat = values.mean() if label == "mean" else values.std(ddof=1)
            row[column] = None if pd.isna(stat) else float(stat)
        rows.append(row)
    return pd.DataFrame(rows, columns=CSV_COLUMNS).astype(object)


def _write_traces(paths: OutputPaths, runs: Sequence[RunResult], prefix: str = "") -> None:
    for trace, report in runs:
        label = f"{prefix}run{report.run_id}"
        write_ndjson(trace.to_ndjson(), paths.trace(label))
        if trace.groups:
            write_json(trace.groups, paths.groups(label))


def _echo(config: ExperimentConfig, reports: Sequence[RunReport]) -> Dict[str, Any]:
    return {
        "config": config.model_dump(mode="json"),
        "resolved": {
            "seed": config.seed,
            "d_max": sorted({r.d_max for r in reports if r.d_max is not None}),
            "n": sorted({r.n for r in reports}),
        },
    }


def simulate(config: ExperimentConfig, workers: Optional[int] = None) -> ExperimentResult:
    runs = run_trials(config, workers)
    precision = evaluate(runs, config.estimator, stream(config.seed, Stream.ESTIMATOR))
    table = run_table([report for _, report in runs])
    return ExperimentResult(config, runs, precision, table)


def cmd_simulate(config: ExperimentConfig, workers: Optional[int] = None) -> ExperimentResult:
    """Run the trials and write CSV, summary, config echo and optional traces"""
    result = simulate(config, workers)
    paths = get_output_paths(config.output)
    write_csv(pd.concat([result.table, aggregate_rows(result.table)], ignore_index=True), paths.csv)
    write_json(result.precision.to_dict(), paths.summary)
    write_json(_echo(config, result.reports), paths.config)
    if config.trace:
        _write_traces(paths, result.runs)
    logger.info(
        f"Simulated {config.trials} trials: precision={result.precision.precision:.4f}, "
        f"mean anonset={result.precision.mean_anonset:.2f}"
    )
    return result


def parse_axis_values(axis: str, values: Sequence[str]) -> List[Union[int, float, str]]:
    """Typed sweep values; ConfigError on an unknown axis or an empty list"""
    if axis not in SWEEPABLE:
        raise ConfigError("axis", f"{axis!r} is not sweepable, choose one of {', '.join(SWEEPABLE)}")
    if not values:
        raise ConfigError("values", "at least one value is required")
    parsed: List[Union[int, float, str]] = []
    for raw in values:
        text = str(raw).strip()
        try:
            if axis == "adversary_fraction":
                parsed.append(float(text))
            elif axis == "d_max" and text == "auto":
                parsed.append(text)
            else:
                parsed.append(int(text))
        except ValueError:
            raise ConfigError(axis, f"cannot parse sweep value {text!r}") from None
    return parsed


def _with_value(config: ExperimentConfig, axis: str, value: Any) -> ExperimentConfig:
    data = config.model_dump()
    data[axis] = value
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(axis, f"value {value!r} rejected: {e.errors()[0]['msg']}") from None


def cmd_sweep(
    config: ExperimentConfig,
    axis: str,
    values: Sequence[Any],
    workers: Optional[int] = None,
) -> pd.DataFrame:
    """Long-form CSV: `axis,value` followed by the run columns, values in given order"""
    typed = parse_axis_values(axis, [str(v) for v in values])
    variants = [_with_value(config, axis, value) for value in typed]

    paths = get_output_paths(config.output, default_name=f"sweep_{axis}.csv")
    frames, summaries, echoes = [], {}, {}
    for value, variant in zip(typed, variants):
        logger.info(f"Sweep {axis}={value}")
        result = simulate(variant, workers)
        frame = result.table.copy()
        frame.insert(0, "value", value)
        frame.insert(0, "axis", axis)
        frames.append(frame)
        summaries[str(value)] = result.precision.to_dict()
        echoes[str(value)] = _echo(variant, result.reports)
        if variant.trace:
            _write_traces(paths, result.runs, prefix=f"{axis}-{value}-")

    table = pd.concat(frames, ignore_index=True)
    write_csv(table, paths.csv)
    write_json({"axis": axis, "values": summaries}, paths.summary)
    write_json({"axis": axis, "values": echoes}, paths.config)
    return table
