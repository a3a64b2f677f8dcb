import json
from pathlib import Path

import numpy as np
import pytest

from scale_balancer.policy import Mode
from scale_balancer.testbed import (
    ALPHA_SWEEP,
    TABLE_MODES,
    DivergenceError,
    ProblemError,
    Quadratic,
    SyntheticProblem,
    TrainConfig,
    TwoLayerRegression,
    gradient_step,
    make_grid,
    make_problem,
    full_grids,
    run_ablation,
    train,
)
from scale_balancer.trace_io import dump_reports
from scale_balancer.weighting import Action

GOLDEN = Path(__file__).parent / "golden"


def central_difference(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


@pytest.fixture(scope="module")
def imbalanced():
    return make_problem("imbalanced-5", 7)


class TestMakeProblem:
    def test_deterministic(self):
        a = make_problem("imbalanced-5", 3)
        b = make_problem("imbalanced-5", 3)
        assert a == b
        assert a != make_problem("imbalanced-5", 4)

    def test_zero_at_optimum(self):
        q = Quadratic(curvature=2.5, optimum=(1.0, -2.0, 0.5))
        assert q.loss(np.array(q.optimum)) == 0.0

    def test_imbalanced_initial_losses_descend(self, imbalanced):
        losses = imbalanced.losses(imbalanced.initial_params())
        assert all(a > b for a, b in zip(losses, losses[1:]))
        curv = [lv.curvature for lv in imbalanced.levels]
        assert max(curv) / min(curv) == pytest.approx(100.0)

    def test_dict_spec(self):
        p = make_problem(
            {
                "levels": [
                    {"kind": "quadratic", "curvature": 2.0, "dim": 3},
                    {"kind": "regression", "input_dim": 3, "hidden_dim": 4, "output_dim": 2},
                ],
                "noise_scale": 0.1,
            },
            seed=1,
        )
        assert p.num_levels == 2
        assert isinstance(p.levels[1], TwoLayerRegression)
        assert all(lv.noise_scale == 0.1 for lv in p.levels)

    @pytest.mark.parametrize(
        "spec",
        [
            "no-such-preset",
            {"levels": []},
            {"levels": [{"kind": "cubic"}]},
            {"levels": [{"kind": "quadratic", "curvature": -1.0}]},
            {"levels": [{"kind": "regression", "hidden_dim": 0}]},
        ],
    )
    def test_invalid_specs(self, spec):
        with pytest.raises(ProblemError):
            make_problem(spec, 0)


class TestGradients:
    def test_quadratic_matches_finite_difference(self):
        q = Quadratic(curvature=0.3, optimum=(1.0, 2.0, -1.0))
        x = np.array([0.2, -0.4, 0.9])
        np.testing.assert_allclose(q.grad(x), central_difference(q.loss, x), rtol=1e-6)

    def test_regression_matches_finite_difference(self):
        r = TwoLayerRegression(input_dim=3, hidden_dim=5, output_dim=2, target_seed=4)
        p = r.initial_params() + 0.3
        np.testing.assert_allclose(r.grad(p), central_difference(r.loss, p), rtol=1e-6, atol=1e-10)

    def test_weighted_step_is_scaled_gradient(self, imbalanced):
        rng = np.random.default_rng(0)
        params = [rng.standard_normal(8) for _ in range(5)]
        weights = (2.1, 1.0, 1.4, 1.0, 1.0)
        step = 0.01
        new = gradient_step(imbalanced, params, weights, step)
        for lv, p, q, w in zip(imbalanced.levels, params, new, weights):
            fd = central_difference(lv.loss, p)
            np.testing.assert_allclose((p - q) / (step * w), fd, rtol=1e-6)


class TestTrain:
    def test_config_guards(self):
        with pytest.raises(ValueError, match="alpha must be >= 2"):
            TrainConfig(alpha=1)
        with pytest.raises(ValueError, match="2\\*alpha"):
            TrainConfig(alpha=100, total_iterations=150)

    def test_single_level_uniform_strictly_decreasing(self):
        problem = SyntheticProblem((Quadratic(curvature=1.0, optimum=(3.0, -1.0)),))
        run = train(problem, TrainConfig(total_iterations=400, alpha=10, step_size=0.01, mode="uniform"))
        losses = run.losses[:, 0]
        assert np.all(np.diff(losses) < 0)

    def test_avw_always_a0(self, imbalanced):
        run = train(imbalanced, TrainConfig(seed=7, mode=Mode.AVW, total_iterations=1000))
        assert {r.action for r in run.reports} == {Action.A0_MAX_VARIANCE_REDUCTION}
        assert run.action_counts() == {"a0": 10, "a1": 0, "a2": 0, "a3": 0}

    def test_avw_boosts_exactly_two(self, imbalanced):
        run = train(imbalanced, TrainConfig(seed=7, mode=Mode.AVW))
        assert len(run.reports) == 50
        for r in run.reports:
            assert all(v > 0 for v in r.interval_losses)
            assert sum(w > 1 for w in r.weights) == 2

    def test_uniform_monotone_per_level(self, imbalanced):
        run = train(imbalanced, TrainConfig(seed=7, mode=Mode.UNIFORM))
        # step 0.002 is far below every 2 / curvature bound
        assert all(0.002 < 2 / lv.curvature for lv in imbalanced.levels)
        assert np.all(np.diff(run.losses, axis=0) <= 0)

    def test_weights_apply_from_next_iteration(self, imbalanced):
        run = train(imbalanced, TrainConfig(seed=7, mode=Mode.AVW, total_iterations=300))
        assert np.all(run.weights[:100] == 1.0)
        np.testing.assert_array_equal(run.weights[100], run.reports[0].weights)
        np.testing.assert_array_equal(run.weights[200], run.reports[1].weights)

    def test_weighted_total_recorded(self, imbalanced):
        run = train(imbalanced, TrainConfig(seed=7, mode=Mode.AVW, total_iterations=300))
        m = 150
        assert run.weighted_totals[m] == pytest.approx(float(run.losses[m] @ run.weights[m]), rel=1e-14)

    def test_bit_reproducible(self, imbalanced):
        cfg = TrainConfig(seed=11, mode=Mode.RLO, total_iterations=2000)
        a, b = train(imbalanced, cfg), train(make_problem("imbalanced-5", 7), cfg)
        assert a.losses.tobytes() == b.losses.tobytes()
        assert a.weights.tobytes() == b.weights.tobytes()
        assert dump_reports(a.reports) == dump_reports(b.reports)

    def test_divergence(self):
        problem = SyntheticProblem((Quadratic(curvature=1.0, optimum=(1.0,)),))
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(DivergenceError) as info:
                train(problem, TrainConfig(total_iterations=2000, alpha=10, step_size=50.0, mode="uniform"))
        assert info.value.iteration > 1

    def test_noise_is_seeded_and_non_negative(self, imbalanced):
        noisy = make_problem({"preset": "imbalanced-5", "noise_scale": 0.05}, 7)
        cfg = TrainConfig(seed=3, mode=Mode.UNIFORM, total_iterations=400)
        a, b = train(noisy, cfg), train(noisy, cfg)
        assert np.array_equal(a.losses, b.losses)
        assert np.all(a.losses >= 0)
        clean = train(imbalanced, cfg)
        assert not np.array_equal(a.losses, clean.losses)

    def test_lr_drop(self):
        cfg = TrainConfig(step_size=0.1, lr_drops=((100, 0.1), (200, 0.1)))
        assert cfg.step_size_at(100) == 0.1
        assert cfg.step_size_at(101) == pytest.approx(0.01)
        assert cfg.step_size_at(201) == pytest.approx(0.001)

    def test_regression_problem_trains(self):
        problem = make_problem(
            {"levels": [{"kind": "regression", "input_dim": 3, "hidden_dim": 6, "target_seed": s} for s in (1, 2)]},
            seed=0,
        )
        run = train(problem, TrainConfig(total_iterations=400, alpha=20, step_size=0.1, mode="rlo"))
        assert np.all(run.losses[-1] < run.losses[0])

    def test_golden_uniform_vs_avw(self, imbalanced):
        golden = json.loads((GOLDEN / "uniform_vs_avw.json").read_text())
        for mode in ("uniform", "avw"):
            run = train(imbalanced, TrainConfig(seed=7, mode=mode))
            assert run.final_total_loss == pytest.approx(golden[mode]["final_total_loss"], rel=1e-12)
            assert list(run.final_losses) == pytest.approx(golden[mode]["per_level_final_loss"], rel=1e-12)
            assert run.loss_auc == pytest.approx(golden[mode]["loss_auc"], rel=1e-12)


class TestAblation:
    def test_singleton_grid_equals_plain_train(self, imbalanced):
        base = TrainConfig(seed=7, total_iterations=1000)
        report = run_ablation(imbalanced, base, make_grid(modes=["uniform"]))
        assert len(report.cells) == 1
        plain = train(imbalanced, TrainConfig(seed=7, total_iterations=1000, mode="uniform"))
        assert report.cells[0].run.losses.tobytes() == plain.losses.tobytes()

    def test_table_rows(self):
        grid = make_grid(modes=TABLE_MODES)
        assert [c["mode"] for c in grid] == list(TABLE_MODES)
        assert len(grid) == 6

    def test_alpha_sweep_rows(self, imbalanced):
        report = run_ablation(imbalanced, TrainConfig(seed=7, total_iterations=1000), make_grid(alphas=ALPHA_SWEEP))
        assert [c.config.alpha for c in report.cells] == [5, 50, 100, 200, 500]
        assert all(c.run is not None for c in report.cells)
        assert {c.config.seed for c in report.cells} == {7}

    def test_failed_cell_recorded(self, imbalanced):
        grid = make_grid(num_selected=[2, 6])
        report = run_ablation(imbalanced, TrainConfig(seed=7, total_iterations=400), grid)
        ok, bad = report.cells
        assert ok.run is not None
        assert bad.run is None and "exceeds" in bad.error
        assert report.rows()[1]["status"].startswith("failed")

    def test_empty_grid(self, imbalanced):
        assert make_grid() == []
        with pytest.raises(ValueError, match="empty"):
            run_ablation(imbalanced, TrainConfig(), [])

    def test_workers_do_not_change_results(self, imbalanced):
        grid = make_grid(modes=["rlo", "avw"])
        base = TrainConfig(seed=7, total_iterations=400, alpha=20)
        serial = run_ablation(imbalanced, base, grid, workers=1)
        parallel = run_ablation(imbalanced, base, grid, workers=2)
        assert serial.rows() == parallel.rows()

    def test_full_grid_golden(self, imbalanced):
        golden = json.loads((GOLDEN / "ablation_full_grid.json").read_text())
        report = run_ablation(imbalanced, TrainConfig(seed=7), full_grids())
        rows = report.rows()
        assert [(r["group"], r["cell"]) for r in rows] == [(g["group"], g["cell"]) for g in golden["rows"]]
        for r, g in zip(rows, golden["rows"]):
            assert r["status"] == g["status"] == "ok"
            assert float(r["final_total_loss"]) == pytest.approx(float(g["final_total_loss"]), rel=1e-12)
            assert float(r["loss_auc"]) == pytest.approx(float(g["loss_auc"]), rel=1e-12)
