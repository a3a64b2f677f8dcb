"""Delimited artifacts written by the command-line workflows.

All writers are byte-deterministic: floats go out via ``repr`` and JSON
with sorted keys, and every artifact carries the resolved config.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Any, Sequence

from .ledger import LossTrace
from .policy import StepReport
from .testbed import SUMMARY_COLUMNS, AblationReport, RunTrace
from .trace_io import dump_reports, serialize_trace


def _config_comment(config: dict[str, Any]) -> str:
    return "# config=" + json.dumps(config, sort_keys=True) + "\n"


def run_csv(run: RunTrace, config: dict[str, Any], level_offset: int = 0) -> str:
    buf = io.StringIO()
    buf.write(_config_comment(config))
    buf.write("iteration,level,loss,weight\n")
    losses = run.losses.tolist()
    weights = run.weights.tolist()
    for m, (lrow, wrow) in enumerate(zip(losses, weights), start=1):
        for level, (v, w) in enumerate(zip(lrow, wrow)):
            buf.write(f"{m},{level + level_offset},{v!r},{w!r}\n")
    return buf.getvalue()


def loss_log(run: RunTrace, level_offset: int = 0) -> str:
    """The run's raw losses in the replayable loss-log format."""
    trace = run.loss_trace()
    trace.level_offset = level_offset
    return serialize_trace(trace)


def run_summary(run: RunTrace, config: dict[str, Any]) -> dict[str, Any]:
    return {
        "config": config,
        "problem": run.problem_name,
        "final_total_loss": run.final_total_loss,
        "per_level_final_loss": list(run.final_losses),
        "per_level_final_error": list(run.final_errors),
        "loss_auc": run.loss_auc,
        "action_counts": run.action_counts(),
        "final_probabilities": list(run.final_policy.probabilities),
        "num_intervals": len(run.reports),
    }


def dump_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_run(out: Path, run: RunTrace, config: dict[str, Any], level_offset: int = 0) -> dict[str, Path]:
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "run": out / "run.csv",
        "steps": out / "steps.jsonl",
        "summary": out / "summary.json",
        "loss_log": out / "loss_log.csv",
    }
    paths["run"].write_text(run_csv(run, config, level_offset))
    paths["steps"].write_text(dump_reports(run.reports, header={"config": config}))
    paths["summary"].write_text(dump_json(run_summary(run, config)))
    paths["loss_log"].write_text(loss_log(run, level_offset))
    return paths


def ablation_csv(report: AblationReport, config: dict[str, Any]) -> str:
    buf = io.StringIO()
    buf.write(_config_comment(config))
    writer = csv.DictWriter(buf, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in report.rows():
        writer.writerow(row)
    return buf.getvalue()


def read_ablation_csv(text: str) -> list[dict[str, str]]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def write_reports(path: Path, reports: Sequence[StepReport], header: dict[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_reports(reports, header=header))
    return path


def trace_summary(trace: LossTrace) -> dict[str, Any]:
    return {
        "num_levels": trace.num_levels,
        "level_offset": trace.level_offset,
        "iterations": trace.last_iteration(),
        "records": len(trace),
    }
