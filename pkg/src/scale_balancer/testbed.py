"""Synthetic multi-level objectives and a gradient-descent trainer.

Each level owns its own parameter block, so a level's weight scales exactly
that level's gradient. The problems are a desk-scale stand-in for the
per-scale losses of a pyramid detector, not a model of one.
"""

from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Sequence

import numpy as np

from .ledger import LossTrace, WeightVector, compute_interval_stats, weighted_total
from .policy import ControllerState, Mode, Policy, StepReport, controller_step
from .rng import controller_rng, noise_rng, problem_rng
from .weighting import SelectionConfig


class ProblemError(ValueError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, iteration: int, level: int | None, value: float):
        where = f"iteration {iteration}" if level is None else f"iteration {iteration}, level {level}"
        super().__init__(f"loss diverged at {where}: {value!r}")
        self.iteration = iteration
        self.level = level
        self.value = value


@dataclass(frozen=True)
class Quadratic:
    """``0.5 * curvature * ||x - optimum||^2``."""

    curvature: float
    optimum: tuple[float, ...]
    noise_scale: float = 0.0
    initial: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if not (math.isfinite(self.curvature) and self.curvature > 0):
            raise ProblemError(f"quadratic curvature must be positive, got {self.curvature}")
        if not self.optimum:
            raise ProblemError("quadratic optimum must have at least one coordinate")
        if self.noise_scale < 0:
            raise ProblemError(f"noise_scale must be non-negative, got {self.noise_scale}")
        if self.initial is not None and len(self.initial) != len(self.optimum):
            raise ProblemError("initial point and optimum differ in dimension")

    @property
    def dim(self) -> int:
        return len(self.optimum)

    def initial_params(self) -> np.ndarray:
        if self.initial is None:
            return np.zeros(self.dim)
        return np.array(self.initial, dtype=float)

    def loss(self, x: np.ndarray) -> float:
        d = x - np.asarray(self.optimum)
        return 0.5 * self.curvature * float(d @ d)

    def grad(self, x: np.ndarray) -> np.ndarray:
        return self.curvature * (x - np.asarray(self.optimum))

    def error(self, x: np.ndarray) -> float:
        return float(np.linalg.norm(x - np.asarray(self.optimum)))


@dataclass(frozen=True)
class TwoLayerRegression:
    """Student tanh network fitted to a fixed random teacher on fixed inputs.

    Parameters are flattened as ``[W1 (hidden x input), W2 (output x hidden)]``.
    """

    input_dim: int
    hidden_dim: int
    output_dim: int
    target_seed: int
    noise_scale: float = 0.0
    num_samples: int = 64
    _data: tuple[np.ndarray, np.ndarray, np.ndarray] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        for name in ("input_dim", "hidden_dim", "output_dim", "num_samples"):
            if getattr(self, name) < 1:
                raise ProblemError(f"{name} must be positive, got {getattr(self, name)}")
        if self.noise_scale < 0:
            raise ProblemError(f"noise_scale must be non-negative, got {self.noise_scale}")
        rng = np.random.default_rng(self.target_seed)
        x = rng.standard_normal((self.num_samples, self.input_dim))
        teacher_w1 = rng.standard_normal((self.hidden_dim, self.input_dim)) / math.sqrt(self.input_dim)
        teacher_w2 = rng.standard_normal((self.output_dim, self.hidden_dim)) / math.sqrt(self.hidden_dim)
        y = np.tanh(x @ teacher_w1.T) @ teacher_w2.T
        init = 0.1 * rng.standard_normal(self.dim)
        object.__setattr__(self, "_data", (x, y, init))

    @property
    def dim(self) -> int:
        return self.hidden_dim * (self.input_dim + self.output_dim)

    def _unpack(self, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        split = self.hidden_dim * self.input_dim
        w1 = p[:split].reshape(self.hidden_dim, self.input_dim)
        w2 = p[split:].reshape(self.output_dim, self.hidden_dim)
        return w1, w2

    def initial_params(self) -> np.ndarray:
        return self._data[2].copy()

    def loss(self, p: np.ndarray) -> float:
        x, y, _ = self._data
        w1, w2 = self._unpack(p)
        r = np.tanh(x @ w1.T) @ w2.T - y
        return 0.5 * float(np.mean(np.sum(r * r, axis=1)))

    def grad(self, p: np.ndarray) -> np.ndarray:
        x, y, _ = self._data
        w1, w2 = self._unpack(p)
        h = np.tanh(x @ w1.T)
        r = (h @ w2.T - y) / len(x)
        g2 = r.T @ h
        g1 = ((r @ w2) * (1.0 - h * h)).T @ x
        return np.concatenate([g1.ravel(), g2.ravel()])

    def error(self, p: np.ndarray) -> float:
        return self.loss(p)


Objective = Quadratic | TwoLayerRegression


@dataclass(frozen=True)
class SyntheticProblem:
    levels: tuple[Objective, ...]
    name: str = "custom"
    seed: int | None = None

    def __post_init__(self) -> None:
        if not self.levels:
            raise ProblemError("a problem needs at least one level")

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    def initial_params(self) -> list[np.ndarray]:
        return [obj.initial_params() for obj in self.levels]

    def losses(self, params: Sequence[np.ndarray]) -> list[float]:
        return [obj.loss(p) for obj, p in zip(self.levels, params)]


PRESETS = ("imbalanced-5",)


def make_problem(spec: str | dict[str, Any], seed: int) -> SyntheticProblem:
    """Build a problem from a preset name or a dict spec.

    A dict spec looks like ``{"levels": [{"kind": "quadratic", "curvature": 1.0,
    "dim": 4, "radius": 1.0}, {"kind": "regression", "input_dim": 3, ...}],
    "noise_scale": 0.0}``. Quadratic optima are drawn from ``seed`` unless
    given explicitly as ``"optimum"``.
    """
    rng = problem_rng(seed)
    if isinstance(spec, str):
        if spec == "imbalanced-5":
            return _imbalanced(5, seed, rng, noise_scale=0.0)
        raise ProblemError(f"unknown preset {spec!r}; known presets: {', '.join(PRESETS)}")
    if not isinstance(spec, dict):
        raise ProblemError(f"problem spec must be a preset name or a mapping, got {type(spec).__name__}")
    if "preset" in spec:
        name = spec["preset"]
        if name != "imbalanced-5":
            raise ProblemError(f"unknown preset {name!r}; known presets: {', '.join(PRESETS)}")
        return _imbalanced(5, seed, rng, noise_scale=float(spec.get("noise_scale", 0.0)))
    raw_levels = spec.get("levels")
    if not raw_levels:
        raise ProblemError("problem spec needs a non-empty 'levels' list")
    default_noise = float(spec.get("noise_scale", 0.0))
    levels: list[Objective] = []
    for i, lv in enumerate(raw_levels):
        kind = lv.get("kind", "quadratic")
        noise = float(lv.get("noise_scale", default_noise))
        if kind == "quadratic":
            if "optimum" in lv:
                opt = tuple(float(v) for v in lv["optimum"])
            else:
                dim = int(lv.get("dim", 4))
                if dim < 1:
                    raise ProblemError(f"level {i}: dim must be positive, got {dim}")
                opt = tuple(float(v) for v in _on_sphere(rng, dim, float(lv.get("radius", 1.0))))
            init = lv.get("initial")
            levels.append(
                Quadratic(
                    curvature=float(lv.get("curvature", 1.0)),
                    optimum=opt,
                    noise_scale=noise,
                    initial=None if init is None else tuple(float(v) for v in init),
                )
            )
        elif kind == "regression":
            levels.append(
                TwoLayerRegression(
                    input_dim=int(lv.get("input_dim", 4)),
                    hidden_dim=int(lv.get("hidden_dim", 8)),
                    output_dim=int(lv.get("output_dim", 1)),
                    target_seed=int(lv.get("target_seed", rng.integers(2**31))),
                    noise_scale=noise,
                )
            )
        else:
            raise ProblemError(f"level {i}: unknown objective kind {kind!r}")
    return SyntheticProblem(levels=tuple(levels), name=spec.get("name", "custom"), seed=seed)


def _on_sphere(rng: np.random.Generator, dim: int, radius: float) -> np.ndarray:
    u = rng.standard_normal(dim)
    return radius * u / np.linalg.norm(u)


def _imbalanced(k: int, seed: int, rng: np.random.Generator, noise_scale: float) -> SyntheticProblem:
    # Curvatures 1 .. 0.01 with every optimum at the same distance from the
    # origin start level 0 with the largest loss and level k-1 the smallest.
    curvatures = np.logspace(0.0, -2.0, k)
    levels = tuple(
        Quadratic(
            curvature=float(c),
            optimum=tuple(float(v) for v in _on_sphere(rng, 8, 2.0)),
            noise_scale=noise_scale,
        )
        for c in curvatures
    )
    return SyntheticProblem(levels=levels, name=f"imbalanced-{k}", seed=seed)


@dataclass(frozen=True)
class TrainConfig:
    total_iterations: int = 5000
    seed: int = 0
    step_size: float = 0.002
    alpha: int = 100
    mode: Mode = Mode.RLO
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    policy: Policy = field(default_factory=Policy)
    lr_drops: tuple[tuple[int, float], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        if self.alpha < 2:
            raise ValueError(f"alpha must be >= 2, got {self.alpha}")
        if self.total_iterations < 2 * self.alpha:
            raise ValueError(
                f"total_iterations must be >= 2*alpha = {2 * self.alpha}, got {self.total_iterations}"
            )
        if not (math.isfinite(self.step_size) and self.step_size > 0):
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        for it, mult in self.lr_drops:
            if it < 1 or not mult > 0:
                raise ValueError(f"bad learning-rate drop ({it}, {mult})")

    def step_size_at(self, iteration: int) -> float:
        lr = self.step_size
        for it, mult in self.lr_drops:
            if iteration > it:
                lr *= mult
        return lr


@dataclass
class RunTrace:
    config: TrainConfig
    problem_name: str
    losses: np.ndarray  # (T, K) raw per-level losses fed to the ledger
    weights: np.ndarray  # (T, K) weights applied at each iteration
    weighted_totals: np.ndarray  # (T,) the weighted objective actually descended
    reports: list[StepReport]
    final_errors: tuple[float, ...]
    final_policy: Policy

    @property
    def num_levels(self) -> int:
        return self.losses.shape[1]

    @property
    def final_losses(self) -> tuple[float, ...]:
        return tuple(float(v) for v in self.losses[-1])

    @property
    def final_total_loss(self) -> float:
        return math.fsum(self.final_losses)

    @property
    def loss_auc(self) -> float:
        """Unweighted total loss summed over all iterations."""
        return math.fsum(math.fsum(row) for row in self.losses.tolist())

    def action_counts(self) -> dict[str, int]:
        counts = {f"a{k}": 0 for k in range(4)}
        for r in self.reports:
            if r.action is not None:
                counts[r.action.label] += 1
        return counts

    def loss_trace(self) -> LossTrace:
        trace = LossTrace(self.num_levels)
        for m, row in enumerate(self.losses.tolist(), start=1):
            for level, v in enumerate(row):
                trace.record(m, level, v)
        return trace


def gradient_step(
    problem: SyntheticProblem,
    params: Sequence[np.ndarray],
    weights: Sequence[float],
    step_size: float,
) -> list[np.ndarray]:
    """One descent step on the weighted total: each block moves by ``step * w_i * grad_i``."""
    return [p - step_size * w * obj.grad(p) for obj, p, w in zip(problem.levels, params, weights)]


def train(problem: SyntheticProblem, config: TrainConfig) -> RunTrace:
    k = problem.num_levels
    if config.mode.selects_levels:
        config.selection.check_levels(k)
    params = problem.initial_params()
    noise = noise_rng(config.seed)
    ctrl_rng = controller_rng(config.seed)
    trace = LossTrace(k)
    state = ControllerState(num_levels=k, mode=config.mode, policy=config.policy)
    weights = WeightVector.ones(k)
    stats = None
    T = config.total_iterations
    loss_log = np.empty((T, k))
    weight_log = np.empty((T, k))
    total_log = np.empty(T)
    reports: list[StepReport] = []

    for m in range(1, T + 1):
        # a diverging run overflows here first; the isfinite check reports it
        with np.errstate(over="ignore", invalid="ignore"):
            clean = problem.losses(params)
        observed = []
        for i, (obj, v) in enumerate(zip(problem.levels, clean)):
            if obj.noise_scale > 0:
                v = max(0.0, v + obj.noise_scale * float(noise.standard_normal()))
            if not math.isfinite(v):
                raise DivergenceError(m, i, v)
            observed.append(v)
            trace.record(m, i, v)
        loss_log[m - 1] = observed
        weight_log[m - 1] = weights.weights
        try:
            # the per-block step below is the exact gradient of this total
            total_log[m - 1] = weighted_total(observed, weights.weights)
            params = gradient_step(problem, params, weights.weights, config.step_size_at(m))
            if m % config.alpha == 0:
                stats = compute_interval_stats(trace, m // config.alpha, config.alpha, stats)
                weights, state, report = controller_step(state, stats, config.selection, ctrl_rng)
                reports.append(report)
        except OverflowError:
            # finite losses whose sums or squared deviations exceed a double
            raise DivergenceError(m, None, max(observed)) from None

    final_errors = tuple(obj.error(p) for obj, p in zip(problem.levels, params))
    return RunTrace(
        config=config,
        problem_name=problem.name,
        losses=loss_log,
        weights=weight_log,
        weighted_totals=total_log,
        reports=reports,
        final_errors=final_errors,
        final_policy=state.policy,
    )


@dataclass
class AblationCell:
    label: str
    config: TrainConfig
    group: str = ""
    run: RunTrace | None = None
    error: str | None = None

    def summary_row(self) -> dict[str, Any]:
        row: dict[str, Any] = {
            "group": self.group,
            "cell": self.label,
            "mode": self.config.mode.value,
            "alpha": self.config.alpha,
            "num_selected": self.config.selection.num_selected,
            "seed": self.config.seed,
        }
        if self.run is None:
            row.update(final_total_loss="", loss_auc="", status=f"failed: {self.error}")
        else:
            row.update(
                final_total_loss=repr(self.run.final_total_loss),
                loss_auc=repr(self.run.loss_auc),
                status="ok",
            )
        return row


@dataclass
class AblationReport:
    cells: list[AblationCell]

    def rows(self) -> list[dict[str, Any]]:
        return [c.summary_row() for c in self.cells]


SUMMARY_COLUMNS = ("group", "cell", "mode", "alpha", "num_selected", "seed", "final_total_loss", "loss_auc", "status")

TABLE_MODES = (Mode.UNIFORM, Mode.AVW, Mode.FIXED_A1, Mode.FIXED_A2, Mode.FIXED_A3, Mode.RLO)
ALPHA_SWEEP = (5, 50, 100, 200, 500)


def make_grid(
    modes: Iterable[Mode | str] | None = None,
    alphas: Iterable[int] | None = None,
    num_selected: Iterable[int] | None = None,
    group: str | None = None,
) -> list[dict[str, Any]]:
    """Cartesian product of the given axes as a list of config overrides.

    ``group`` tags every cell so several grids can share one summary table.
    """
    axes: list[list[tuple[str, Any]]] = []
    if modes is not None:
        axes.append([("mode", Mode.parse(m)) for m in modes])
    if alphas is not None:
        axes.append([("alpha", int(a)) for a in alphas])
    if num_selected is not None:
        axes.append([("num_selected", int(n)) for n in num_selected])
    if not axes or any(not ax for ax in axes):
        return []
    cells = [dict(combo) for combo in itertools.product(*axes)]
    if group is not None:
        for c in cells:
            c["group"] = group
    return cells


def full_grids() -> list[dict[str, Any]]:
    """Per-action rows, the interval sweep and the selected-level sweep."""
    return (
        make_grid(modes=TABLE_MODES, group="actions")
        + make_grid(modes=[Mode.RLO], alphas=ALPHA_SWEEP, group="alpha")
        + make_grid(modes=[Mode.RLO], num_selected=range(1, 6), group="num_selected")
    )


def _cell_config(base: TrainConfig, overrides: dict[str, Any]) -> TrainConfig:
    cfg = base
    if "num_selected" in overrides:
        cfg = replace(cfg, selection=replace(cfg.selection, num_selected=overrides["num_selected"]))
    rest = {k: v for k, v in overrides.items() if k not in ("num_selected", "group")}
    return replace(cfg, **rest) if rest else cfg


def _cell_label(overrides: dict[str, Any]) -> str:
    parts = []
    for key, value in overrides.items():
        if key == "group":
            continue
        parts.append(f"{key}={value.value if isinstance(value, Mode) else value}")
    return ",".join(parts)


def _run_cell(problem: SyntheticProblem, cell: AblationCell) -> AblationCell:
    try:
        cell.run = train(problem, cell.config)
    except (DivergenceError, ValueError) as exc:
        cell.error = str(exc)
    return cell


def run_ablation(
    problem: SyntheticProblem,
    base_config: TrainConfig,
    grid: Sequence[dict[str, Any]],
    workers: int | None = 1,
) -> AblationReport:
    """Train once per grid cell; every cell shares ``base_config.seed``.

    A cell whose config is invalid or whose run diverges is recorded as
    failed and the remaining cells still run.
    """
    if not grid:
        raise ValueError("ablation grid is empty")
    cells = []
    for overrides in grid:
        label = _cell_label(overrides)
        group = overrides.get("group", "")
        try:
            cells.append(AblationCell(label, _cell_config(base_config, overrides), group))
        except ValueError as exc:
            cells.append(AblationCell(label, base_config, group, error=str(exc)))
    pending = [c for c in cells if c.error is None]
    workers = workers or os.cpu_count() or 1
    if workers > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(pending))) as pool:
            done = list(pool.map(_run_cell, [problem] * len(pending), pending))
        by_label = {id(c): d for c, d in zip(pending, done)}
        cells = [by_label.get(id(c), c) for c in cells]
    else:
        for c in pending:
            _run_cell(problem, c)
    return AblationReport(cells)
