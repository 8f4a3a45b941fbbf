import json

import numpy as np
import pytest

from dit_cache.common.autodiff import Tensor, no_grad
from dit_cache.tools.DiT_Model.Flops import block_flops
from dit_cache.tools.Eval.Core import EvalReport, evaluate_router, seed_inputs, trajectory_mse
from dit_cache.tools.Eval.Heuristics import (
    HEURISTIC_MAGNITUDE, HeuristicKind, HeuristicSchedule, alternating_mask, make_heuristic, random_baseline,
)
from dit_cache.tools.Eval.Reports import compare, curve_csv, render_table, report_csv, report_json
from dit_cache.tools.Feature_Cache.Core import Router, cur, theoretical_speedup
from dit_cache.tools.Sampler.Core import make_caches, predict_noise, sample, solver_step


#######################################################
# Heuristic schedules

def test_fora_every_step_caches_nothing():
    assert cur(make_heuristic(HeuristicSchedule(HeuristicKind.FORA_UNIFORM, k=1), 20, 8)) == 0.0


def test_fora_half_rate():
    router = make_heuristic(HeuristicSchedule(HeuristicKind.FORA_UNIFORM, k=2), 20, 8)
    assert cur(router) == 0.5
    mask = router.gates().cached_mask()
    assert not mask[-1].any()
    assert mask[-2].all()


def test_alternating_checkerboard():
    mask = alternating_mask(5, 4)
    assert not mask[-1].any()
    assert mask[3].tolist() == [True, False, True, False]
    assert mask[2].tolist() == [False, True, False, True]


def test_random_heuristic_hits_target():
    router = make_heuristic(HeuristicSchedule(HeuristicKind.RANDOM, target=0.5, seed=4), 10, 6)
    assert abs(cur(router) * 60 - 30) <= 1
    assert not router.gates().cached_mask()[-1].any()


def test_heuristic_gates_sit_far_from_threshold():
    router = make_heuristic("alternating", 6, 4)
    values = router.gates().values
    assert np.all((values < 1e-8) | (values > 1 - 1e-8))
    assert np.abs(router.logits.data).max() == HEURISTIC_MAGNITUDE


def test_random_baseline_spread():
    routers = random_baseline(8, 4, cells=10, n_routers=6, seed=2, spread=2)
    counts = [int(r.gates().cached_mask().sum()) for r in routers]
    assert len(routers) == 6
    assert all(8 <= c <= 12 for c in counts)


def test_unknown_heuristic_is_rejected():
    with pytest.raises(ValueError):
        make_heuristic("ddim_skip", 4, 2)


#######################################################
# Trajectory error

def test_all_compute_router_matches_plain_sampling(tiny_model, schedule, sampler4):
    router = Router(np.full((4, 2), 8.0))
    curve = trajectory_mse(tiny_model, router, schedule, sampler4, n_seeds=2)
    assert curve.shape == (5,)
    assert np.all(curve <= 1e-18)


def test_first_cached_step_error(tiny_model, schedule, sampler4):
    router = Router(np.full((4, 2), -8.0))
    curve = trajectory_mse(tiny_model, router, schedule, sampler4, n_seeds=1)
    assert curve[4] == 0.0
    assert curve[3] == 0.0

    x_T, class_id = seed_inputs(tiny_model, 0, 0)
    plain = sample(tiny_model, None, schedule, sampler4, x_T, class_id)
    caches = make_caches(tiny_model, sampler4)
    with no_grad():
        predict_noise(tiny_model, Tensor(x_T), 4, class_id, schedule, sampler4,
                      row=[1.0, 1.0], tau=0.1, caches=caches)
        gates = router.gates().row(3).tolist()
        eps = predict_noise(tiny_model, Tensor(plain.x(3)), 3, class_id, schedule, sampler4,
                            row=gates, tau=0.1, caches=caches)
        x2 = solver_step(schedule, sampler4, plain.x(3), 3, eps).data
    expected = float(np.sum((x2 - plain.x(2)) ** 2))
    assert expected > 0.0
    assert curve[2] == pytest.approx(expected, rel=1e-10)


def test_caching_half_the_cells_introduces_error(toy_model, schedule, sampler8):
    router = make_heuristic(HeuristicSchedule(HeuristicKind.RANDOM, target=0.5, seed=1), 8, toy_model.n_blocks)
    curve = trajectory_mse(toy_model, router, schedule, sampler8, n_seeds=2)
    assert curve[0] > 0.0


def test_trajectory_needs_a_seed(tiny_model, schedule, sampler4):
    with pytest.raises(ValueError):
        trajectory_mse(tiny_model, None, schedule, sampler4, n_seeds=0)


def test_evaluate_router_report(tiny_model, schedule, sampler4):
    router = make_heuristic("fora_uniform", 4, 2)
    report = evaluate_router(tiny_model, router, schedule, sampler4, n_seeds=2, method="fora")
    assert report.cur == cur(router) == 0.5
    assert report.speedup == pytest.approx(theoretical_speedup(router, block_flops(tiny_model.config)))
    assert report.speedup == pytest.approx(2.0)
    assert len(report.curve) == 5
    assert report.mse_mean == pytest.approx(report.curve[0])
    assert report.n_seeds == 2 and report.wall_clock > 0.0


#######################################################
# Reports

def _reports():
    return [
        EvalReport("b", 0.5, 2.0, 0.01, 3.0, 0.1, [3.0, 1.0, 0.0], 2),
        EvalReport("a", 0.25, 1.3, 0.01, 1.0, 0.2, [1.0, 0.5, 0.0], 2),
    ]


def test_compare_ranks_by_final_error():
    assert [r.method for r in compare(_reports())] == ["a", "b"]


def test_render_table():
    lines = render_table(_reports()).splitlines()
    assert len(lines) == 3
    assert lines[1].split()[:3] == ["1", "a", "25.00%"]
    assert lines[2].split()[:3] == ["2", "b", "50.00%"]


def test_report_files():
    payload = report_json(_reports())
    assert json.loads(json.dumps(payload))["reports"][0]["method"] == "a"
    assert "version" in payload
    csv_lines = report_csv(_reports()).splitlines()
    assert csv_lines[0] == "rank,method,cur,speedup,wall_clock,mse_mean,mse_std,n_seeds"
    assert csv_lines[1].startswith("1,a,0.25,")
    assert curve_csv(_reports()[0]).splitlines() == ["t,mse", "2,0.0", "1,1.0", "0,3.0"]
