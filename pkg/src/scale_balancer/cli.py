"""``scale-balancer`` command line.

Exit codes: 0 success, 1 config or input error, 2 numerical divergence,
3 audit failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Any, NoReturn, Sequence

from . import audit as audit_mod
from . import reporting
from .policy import Mode, Policy
from .testbed import (
    ALPHA_SWEEP,
    TABLE_MODES,
    DivergenceError,
    ProblemError,
    TrainConfig,
    make_grid,
    make_problem,
    full_grids,
    run_ablation,
    train,
)
from .trace_io import ReplayError, TraceFormatError, parse_trace, replay
from .weighting import SelectionConfig

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_AUDIT = 0, 1, 2, 3

SEED_ENV = "SCALE_BALANCER_SEED"
DEFAULT_SEED = 0

DEFAULTS: dict[str, Any] = {
    "problem": "imbalanced-5",
    "mode": "rlo",
    "iterations": 5000,
    "alpha": 100,
    "step_size": 0.002,
    "num_selected": 2,
    "lambda_primary": 1.5,
    "lambda_secondary": 1.0,
    "gamma": 0.01,
    "beta_min": 0.1,
    "beta_max": 0.9,
    "lr_drops": [],
    "level_offset": 3,
    "grid": None,
    "trace": None,
    "plots": False,
}

GRID_PRESETS = {
    "actions": lambda: make_grid(modes=TABLE_MODES, group="actions"),
    "alpha": lambda: make_grid(modes=[Mode.RLO], alphas=ALPHA_SWEEP, group="alpha"),
    "num_selected": lambda: make_grid(modes=[Mode.RLO], num_selected=range(1, 6), group="num_selected"),
    "full": full_grids,
}


class ConfigError(ValueError):
    pass


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def resolve_config(args: argparse.Namespace) -> dict[str, Any]:
    """Defaults < config file < ``--set`` overrides; seed from flag, config or env."""
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg.update(loaded)
    for item in args.set or []:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        cfg[key.strip()] = _parse_value(raw)
    if getattr(args, "trace", None):
        cfg["trace"] = args.trace
    if args.plots:
        cfg["plots"] = True

    if args.seed is not None:
        cfg["seed"] = args.seed
    elif "seed" not in cfg:
        env = os.environ.get(SEED_ENV)
        if env is not None:
            try:
                cfg["seed"] = int(env)
            except ValueError:
                raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
        else:
            cfg["seed"] = DEFAULT_SEED

    unknown = sorted(set(cfg) - set(DEFAULTS) - {"seed"})
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool) or not 0 <= cfg["seed"] < 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {cfg['seed']!r}")
    return cfg


def _int(cfg: dict[str, Any], key: str) -> int:
    v = cfg[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{key} must be an integer, got {v!r}")
    return v


def _float(cfg: dict[str, Any], key: str) -> float:
    v = cfg[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{key} must be a number, got {v!r}")
    return float(v)


def selection_from(cfg: dict[str, Any]) -> SelectionConfig:
    try:
        return SelectionConfig(_int(cfg, "num_selected"), _float(cfg, "lambda_primary"), _float(cfg, "lambda_secondary"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def policy_from(cfg: dict[str, Any]) -> Policy:
    try:
        return Policy(gamma=_float(cfg, "gamma"), beta_min=_float(cfg, "beta_min"), beta_max=_float(cfg, "beta_max"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def train_config_from(cfg: dict[str, Any]) -> TrainConfig:
    alpha = _int(cfg, "alpha")
    if alpha < 2:
        raise ConfigError(f"alpha must be ≥ 2, got {alpha}")
    try:
        drops = tuple((int(it), float(mult)) for it, mult in cfg["lr_drops"])
    except (TypeError, ValueError):
        raise ConfigError(f"lr_drops must be a list of [iteration, multiplier] pairs, got {cfg['lr_drops']!r}") from None
    try:
        return TrainConfig(
            total_iterations=_int(cfg, "iterations"),
            seed=cfg["seed"],
            step_size=_float(cfg, "step_size"),
            alpha=alpha,
            mode=Mode.parse(str(cfg["mode"])),
            selection=selection_from(cfg),
            policy=policy_from(cfg),
            lr_drops=drops,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def problem_from(cfg: dict[str, Any]):
    try:
        return make_problem(cfg["problem"], cfg["seed"])
    except (ProblemError, TypeError, ValueError, AttributeError) as exc:
        raise ConfigError(f"bad problem spec: {exc}") from None


def cmd_simulate(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    config = train_config_from(cfg)
    problem = problem_from(cfg)
    if config.mode.selects_levels:
        try:
            config.selection.check_levels(problem.num_levels)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    try:
        run = train(problem, config)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    out = Path(args.out)
    paths = reporting.write_run(out, run, cfg, cfg["level_offset"])
    if cfg["plots"]:
        from .plotting import plot_run

        plot_run(run, out / "plots", cfg["level_offset"])
    print(f"final total loss {run.final_total_loss!r}; artifacts in {paths['summary'].parent}")
    return EXIT_OK


def cmd_replay(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    if not cfg["trace"]:
        raise ConfigError("replay needs a loss log: pass --trace PATH or set 'trace' in the config")
    path = Path(cfg["trace"])
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read trace {path}: {exc.strerror}") from None
    try:
        trace = parse_trace(data)
    except TraceFormatError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    alpha = _int(cfg, "alpha")
    if alpha < 2:
        raise ConfigError(f"alpha must be ≥ 2, got {alpha}")
    try:
        result = replay(
            trace,
            alpha=alpha,
            mode=Mode.parse(str(cfg["mode"])),
            seed=cfg["seed"],
            selection=selection_from(cfg),
            policy=policy_from(cfg),
        )
    except (ReplayError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    out = Path(args.out)
    header = {"replay": result.metadata, "config": cfg, "trace": reporting.trace_summary(trace)}
    reporting.write_reports(out / "replay.jsonl", result.reports, header)
    (out / "replay_metadata.json").write_text(reporting.dump_json(header))
    if cfg["plots"]:
        from .plotting import plot_replay

        plot_replay(result.reports, out / "plots", trace.level_offset)
    print(f"{len(result.reports)} intervals replayed (counterfactual weights); artifacts in {out}")
    return EXIT_OK


def grid_from(cfg: dict[str, Any]) -> list[dict[str, Any]]:
    grid = cfg["grid"]
    if grid is None:
        raise ConfigError("ablate needs a 'grid' in the config")
    if isinstance(grid, str):
        if grid not in GRID_PRESETS:
            raise ConfigError(f"unknown grid preset {grid!r}; known: {', '.join(GRID_PRESETS)}")
        return GRID_PRESETS[grid]()
    if isinstance(grid, dict):
        try:
            modes = grid.get("modes")
            cells = make_grid(
                modes=None if modes is None else [Mode.parse(str(m)) for m in modes],
                alphas=grid.get("alpha"),
                num_selected=grid.get("num_selected"),
                group=grid.get("group"),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad grid: {exc}") from None
        if not cells:
            raise ConfigError("ablation grid is empty")
        return cells
    if isinstance(grid, list):
        if not grid:
            raise ConfigError("ablation grid is empty")
        cells = []
        for cell in grid:
            if not isinstance(cell, dict):
                raise ConfigError(f"grid cells must be objects, got {cell!r}")
            cell = dict(cell)
            if "mode" in cell:
                try:
                    cell["mode"] = Mode.parse(str(cell["mode"]))
                except ValueError as exc:
                    raise ConfigError(str(exc)) from None
            unknown = set(cell) - {"mode", "alpha", "num_selected", "group"}
            if unknown:
                raise ConfigError(f"grid cells may set mode, alpha, num_selected, group; got {sorted(unknown)}")
            cells.append(cell)
        return cells
    raise ConfigError(f"grid must be a preset name, an axes object or a list of cells, got {grid!r}")


def cmd_ablate(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    grid = grid_from(cfg)
    problem = problem_from(cfg)
    base = train_config_from(cfg)
    workers = args.workers if args.workers is not None else (os.cpu_count() or 1)
    if workers < 1:
        raise ConfigError(f"--workers must be positive, got {workers}")
    report = run_ablation(problem, base, grid, workers=workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.csv").write_text(reporting.ablation_csv(report, cfg))
    for cell in report.cells:
        if cell.run is None:
            print(f"cell {cell.group}/{cell.label} failed: {cell.error}", file=sys.stderr)
            continue
        cell_cfg = dict(cfg, mode=cell.config.mode.value, alpha=cell.config.alpha,
                        num_selected=cell.config.selection.num_selected, grid=None)
        cell_dir = out / "cells" / (f"{cell.group}__{cell.label}" if cell.group else cell.label)
        reporting.write_run(cell_dir, cell.run, cell_cfg, cfg["level_offset"])
    if cfg["plots"]:
        from .plotting import plot_ablation

        plot_ablation(report.rows(), out / "plots" / "ablation.png")
    failed = [c for c in report.cells if c.run is None]
    print(f"{len(report.cells)} cells, {len(failed)} failed; summary in {out / 'ablation.csv'}")
    if any("diverged" in (c.error or "") for c in failed):
        return EXIT_DIVERGED
    return EXIT_CONFIG if failed else EXIT_OK


def cmd_audit(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    results = audit_mod.run_audit(cfg["seed"])
    passed = all(r.passed for r in results)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = {"seed": cfg["seed"], "passed": passed, "properties": [r.to_json() for r in results]}
    (out / "audit.json").write_text(reporting.dump_json(payload))
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
    if not passed:
        names = ", ".join(r.name for r in results if not r.passed)
        print(f"error: audit failed: {names}", file=sys.stderr)
        return EXIT_AUDIT
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "replay": cmd_replay,
    "ablate": cmd_ablate,
    "audit": cmd_audit,
}


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors, which would read as divergence
    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scale-balancer", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", default=f"out/{name}", help="output directory")
        p.add_argument("--seed", type=int, help=f"seed (falls back to config, then ${SEED_ENV})")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--workers", type=int, help="ablation worker processes")
        p.add_argument("--plots", action="store_true", help="also render PNG figures")
        if name == "replay":
            p.add_argument("--trace", help="loss log CSV (iteration,level,loss)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
