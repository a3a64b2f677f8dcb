"""Loss-log files and offline replay of the controller.

The loss-log format is a plain CSV::

    iteration,level,loss
    1,3,0.5
    1,4,0.4

Rows are sorted by iteration then level and the levels seen form a
contiguous range; they are renumbered from 0 on the way in and the original
first level is kept as ``LossTrace.level_offset`` so that writing the trace
back reproduces the file.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from typing import Any, Iterable

from .ledger import LedgerError, LossTrace, compute_interval_stats
from .policy import ControllerState, Mode, Policy, StepReport, controller_step
from .rng import controller_rng
from .weighting import SelectionConfig

HEADER = "iteration,level,loss"

_INT = re.compile(r"[+-]?\d+\Z")
_DECIMAL = re.compile(r"[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?\Z")

COUNTERFACTUAL_NOTE = (
    "counterfactual weights: losses were recorded before replay, so the weights "
    "below never influenced them"
)


class TraceFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ReplayError(ValueError):
    pass


def parse_trace(data: bytes | str) -> LossTrace:
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise TraceFormatError(f"not valid UTF-8 ({exc.reason} at byte {exc.start})") from None
    else:
        text = data
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise TraceFormatError("empty file; expected header " + repr(HEADER), 1)
    header = lines[0].rstrip("\r")
    if header != HEADER:
        raise TraceFormatError(f"header must be exactly {HEADER!r}, got {header!r}", 1)

    rows: list[tuple[int, int, float, int]] = []
    prev_key: tuple[int, int] | None = None
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.rstrip("\r")
        fields = line.split(",")
        if len(fields) != 3:
            raise TraceFormatError(f"expected 3 fields, got {len(fields)}: {line!r}", lineno)
        it_s, lvl_s, loss_s = (f.strip() for f in fields)
        if not _INT.match(it_s):
            raise TraceFormatError(f"iteration is not an integer: {it_s!r}", lineno)
        if not _INT.match(lvl_s):
            raise TraceFormatError(f"level is not an integer: {lvl_s!r}", lineno)
        if not _DECIMAL.match(loss_s):
            raise TraceFormatError(f"loss is not a decimal number: {loss_s!r}", lineno)
        iteration, level, loss = int(it_s), int(lvl_s), float(loss_s)
        if iteration < 1:
            raise TraceFormatError(f"iteration must be positive, got {iteration}", lineno)
        if not math.isfinite(loss):
            raise TraceFormatError(f"loss overflows a double: {loss_s!r}", lineno)
        if loss < 0:
            raise TraceFormatError(f"negative loss {loss_s} at iteration {iteration}, level {level}", lineno)
        key = (iteration, level)
        if prev_key is not None:
            if key == prev_key:
                raise TraceFormatError(f"duplicate record for iteration {iteration}, level {level}", lineno)
            if key < prev_key:
                raise TraceFormatError(
                    f"rows must be sorted by iteration then level; ({iteration}, {level}) "
                    f"follows {prev_key}",
                    lineno,
                )
        prev_key = key
        rows.append((iteration, level, loss, lineno))

    if not rows:
        raise TraceFormatError("no data rows", 2)
    levels = sorted({r[1] for r in rows})
    first = levels[0]
    gaps = sorted(set(range(first, levels[-1] + 1)) - set(levels))
    if gaps:
        raise TraceFormatError(
            f"levels must be contiguous from {first}; missing {', '.join(map(str, gaps))}"
        )
    trace = LossTrace(num_levels=len(levels), level_offset=first)
    for iteration, level, loss, lineno in rows:
        try:
            trace.record(iteration, level - first, loss)
        except LedgerError as exc:
            raise TraceFormatError(str(exc), lineno) from None
    return trace


def serialize_trace(trace: LossTrace) -> str:
    out = [HEADER]
    off = trace.level_offset
    out.extend(f"{it},{lvl + off},{v!r}" for it, lvl, v in trace.records())
    return "\n".join(out) + "\n"


@dataclass
class ReplayResult:
    metadata: dict[str, Any]
    reports: list[StepReport]

    def to_jsonl(self) -> str:
        return dump_reports(self.reports, header={"replay": self.metadata})


def replay(
    trace: LossTrace,
    alpha: int = 100,
    mode: Mode | str = Mode.RLO,
    seed: int = 0,
    selection: SelectionConfig | None = None,
    policy: Policy | None = None,
) -> ReplayResult:
    """Run the controller over a recorded trace, one step per complete interval.

    The controller stream is derived from ``seed`` exactly as in an online
    run, so replaying an online run's own loss log reproduces its decisions.
    """
    mode = Mode.parse(mode)
    selection = selection or SelectionConfig()
    policy = policy or Policy()
    if alpha < 2:
        raise ReplayError(f"alpha must be >= 2, got {alpha}")
    if mode.selects_levels:
        selection.check_levels(trace.num_levels)
    covered = trace.last_iteration()
    if covered < 2 * alpha:
        raise ReplayError(
            f"trace covers {covered} iterations for its shortest level; "
            f"replay needs at least 2*alpha = {2 * alpha}"
        )
    rng = controller_rng(seed)
    state = ControllerState(num_levels=trace.num_levels, mode=mode, policy=policy)
    stats = None
    reports = []
    for t in range(1, covered // alpha + 1):
        try:
            stats = compute_interval_stats(trace, t, alpha, stats)
        except LedgerError as exc:
            raise ReplayError(str(exc)) from None
        _, state, report = controller_step(state, stats, selection, rng)
        reports.append(report)
    metadata = {
        "alpha": alpha,
        "mode": mode.value,
        "seed": seed,
        "num_levels": trace.num_levels,
        "counterfactual": True,
        "note": COUNTERFACTUAL_NOTE,
    }
    return ReplayResult(metadata, reports)


def dump_reports(reports: Iterable[StepReport], header: dict[str, Any] | None = None) -> str:
    """JSON-lines stream: optional header object, then one object per step."""
    lines = []
    if header is not None:
        lines.append(json.dumps(header, sort_keys=True))
    lines.extend(json.dumps(r.to_json(), sort_keys=True) for r in reports)
    return "\n".join(lines) + "\n"


def load_reports(text: str) -> tuple[dict[str, Any] | None, list[StepReport]]:
    header = None
    reports = []
    for line in text.splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        if "t" in obj:
            reports.append(StepReport.from_json(obj))
        elif header is None:
            header = obj
        else:
            raise ValueError("report stream has more than one header object")
    return header, reports
