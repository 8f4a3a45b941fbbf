import numpy as np
import pytest

from dit_cache.common.autodiff import default_graph
from dit_cache.common.errors import ConfigError, NumericError
from dit_cache.common.run_directory import RunDirectory
from dit_cache.tools.DiT_Model.Checkpoint import checkpoint_bytes
from dit_cache.tools.DiT_Model.Core import DiTConfig, DiTModel
from dit_cache.tools.Feature_Cache.Core import Router, apply_mask, cur
from dit_cache.tools.Feature_Cache.Router_File import load_router, router_bytes
from dit_cache.tools.Router_Trainer import SDT_Operations
from dit_cache.tools.Router_Trainer.Core import ProxyVector, TrainConfig, TrainingLog
from dit_cache.tools.Router_Trainer.Dataset import SyntheticDataset
from dit_cache.tools.Router_Trainer.LTC_Operations import ltc_timesteps, ltc_train
from dit_cache.tools.Router_Trainer.Pretrain import (
    PretrainOptions, check_held_out_loss, denoising_loss, pretrain_teacher,
)
from dit_cache.tools.Router_Trainer.Proxy import gen_proxy, proxy_metric_variant, proxy_trace
from dit_cache.tools.Router_Trainer.SDT_Operations import (
    cached_step_loss, full_compute_step, sdt_rows, sdt_train,
)
from dit_cache.tools.Router_Trainer.Train import train_router
from dit_cache.tools.Sampler.Core import make_caches, sample

from conftest import TINY_CONFIG


def tiny_train_config(**overrides) -> TrainConfig:
    values = dict(iters=8, interval_c=8, batch=2, lr=0.05, beta=0.05, seed=5)
    values.update(overrides)
    return TrainConfig(**values)


#######################################################
# Proxy metric and proxy vector

def test_proxy_metric_variants(rng):
    a = rng.normal(size=(2, 1, 4, 4))
    for kind in ("fro", "l1", "kl", "frobenius_sq", "sum_abs"):
        assert proxy_metric_variant(a, a.copy(), kind) == 0.0
    assert proxy_metric_variant(np.array([1.0, -2.0]), np.zeros(2), "l1") == 3.0
    assert proxy_metric_variant(np.array([1.0, -2.0]), np.zeros(2), "fro") == 5.0


def test_kl_variant_matches_direct_sum(rng):
    x, y = rng.normal(size=(1, 5)), rng.normal(size=(1, 5))
    p = np.exp(x) / np.exp(x).sum()
    q = np.exp(y) / np.exp(y).sum()
    value = proxy_metric_variant(p, q, "kl")
    p_shift, q_shift = p - p.min(), q - q.min()
    p_n = np.maximum(p_shift / p_shift.sum(), 1e-12)
    q_n = np.maximum(q_shift / q_shift.sum(), 1e-12)
    assert value >= 0.0
    assert value == pytest.approx(float(np.sum(p_n * np.log(p_n / q_n))), rel=1e-9)


def test_kl_variant_rejects_zero_mass():
    with pytest.raises(ValueError):
        proxy_metric_variant(np.ones((1, 4)), np.zeros((1, 4)), "kl")


def test_proxy_vector_is_non_negative():
    with pytest.raises(ValueError):
        ProxyVector(np.array([0.1, -0.2]))
    ones = ProxyVector.ones(4)
    assert ones.at(4) == 0.0 and ones.at(1) == 1.0


def test_gen_proxy_is_zero_for_all_compute_router(tiny_model, schedule, sampler4, rng):
    proxy = gen_proxy(tiny_model, schedule, sampler4, rng.normal(size=(1, 1, 4, 4)), 0,
                      Router(np.full((4, 2), 5.0)))
    np.testing.assert_array_equal(proxy.lam, 0.0)


def test_gen_proxy_matches_two_generations(tiny_model, schedule, sampler4, rng):
    logits = np.full((4, 2), 5.0)
    logits[1, 0] = -5.0   # t = 2 caches block 0
    router = Router(logits)
    x_T = rng.normal(size=(1, 1, 4, 4))
    proxy = gen_proxy(tiny_model, schedule, sampler4, x_T, 1, router)

    x0 = sample(tiny_model, router, schedule, sampler4, x_T, 1).x0
    x0_masked = sample(tiny_model, apply_mask(router, 2), schedule, sampler4, x_T, 1).x0
    expected = float(np.sum((x0 - x0_masked) ** 2))
    assert expected > 0.0
    assert proxy.at(2) == pytest.approx(expected, rel=1e-12)
    assert proxy.at(1) == proxy.at(3) == proxy.at(4) == 0.0


def test_gen_proxy_records_no_graph_nodes(tiny_model, schedule, sampler4, rng):
    router = Router(np.array([[-3.0, 2.0], [2.0, -3.0], [2.0, 2.0], [0.0, 0.0]]))
    assert router.logits.requires_grad
    graph = default_graph()
    before = len(graph)
    proxy = gen_proxy(tiny_model, schedule, sampler4, rng.normal(size=(1, 1, 4, 4)), 0, router)
    assert len(graph) == before
    assert router.logits.grad is None
    assert proxy.at(1) > 0.0 and proxy.at(2) > 0.0


def test_proxy_trace_rows(tiny_model, schedule, sampler4, rng):
    router = Router(rng.normal(0.0, 3.0, size=(4, 2)))
    x_T = rng.normal(size=(2, 1, 4, 4))
    rows = proxy_trace(tiny_model, router, schedule, sampler4, x_T, (0, 1))
    direct = gen_proxy(tiny_model, schedule, sampler4, x_T, (0, 1), router)
    assert [r[0] for r in rows] == [4, 3, 2, 1]
    assert rows[0][1] == 0.0
    assert [r[2] for r in rows] == [direct.at(t) for t in (4, 3, 2, 1)]


#######################################################
# SDT

def test_train_config_violations():
    problems = TrainConfig(iters=10, interval_c=12, beta=-1.0, lr=0.0, objective="mse").violations(8)
    assert len(problems) == 5
    assert TrainConfig().violations(8) == []
    with pytest.raises(ConfigError):
        train_router(None, TrainConfig(interval_c=12), *_sampler_and_schedule())


def _sampler_and_schedule():
    from dit_cache.tools.Sampler.Core import SamplerConfig, make_schedule
    return SamplerConfig(T=8), make_schedule()


def test_step_gradient_only_reaches_row_t(tiny_model, schedule, sampler4, rng):
    router = Router.initialize(4, 2, seed=1)
    caches = make_caches(tiny_model, sampler4)
    x = rng.normal(size=(2, 1, 4, 4))
    _, x = full_compute_step(tiny_model, x, 4, 0, schedule, sampler4, caches)
    loss, _, _, _, _ = cached_step_loss(tiny_model, router, x, 3, 0, schedule, sampler4, caches, 1.0, 0.1)
    loss.backward()
    grad = router.logits.grad
    assert np.all(grad[2] != 0.0)
    np.testing.assert_array_equal(np.delete(grad, 2, axis=0), 0.0)


def test_zero_beta_loss_is_pure_mse(tiny_model, schedule, sampler4, rng):
    router = Router.initialize(4, 2, seed=2)
    caches = make_caches(tiny_model, sampler4)
    _, x = full_compute_step(tiny_model, rng.normal(size=(1, 1, 4, 4)), 4, 1, schedule, sampler4, caches)
    loss, _, _, l_mse, reg = cached_step_loss(tiny_model, router, x, 3, 1, schedule, sampler4, caches, 1.0, 0.0)
    assert loss.item() == l_mse
    assert reg > 0.0


def test_one_iteration_leaves_pre_fill_row_untouched(tiny_model, schedule, sampler4):
    config = tiny_train_config(iters=4, interval_c=4)
    router = Router.initialize(4, 2, seed=5)
    start = router.logits.data.copy()
    sdt_train(tiny_model, config, sampler4, schedule, router=router, progress=False)
    np.testing.assert_array_equal(router.logits.data[3], start[3])
    assert np.all(router.logits.data[:3] != start[:3])


def test_zero_proxy_only_pushes_gates_down(tiny_model, schedule, sampler4):
    """Initial gates sit above τ, so the first proxy is all zeros and only β Σ r remains"""
    config = tiny_train_config(iters=4, interval_c=400)
    router = Router.initialize(4, 2, seed=5)
    before = router.gates().values.copy()
    log = TrainingLog()
    sdt_train(tiny_model, config, sampler4, schedule, router=router, log=log, progress=False)
    np.testing.assert_array_equal(log.proxies[0].lam, 0.0)
    after = router.gates().values
    assert np.all(after[:3] < before[:3])
    np.testing.assert_array_equal(log.column("lambda"), 0.0)


def test_unit_lambda_without_regulariser_never_adds_caching(tiny_model, schedule, sampler4):
    config = tiny_train_config(iters=12, objective="ltc", beta=0.0)
    router = sdt_train(tiny_model, config, sampler4, schedule, progress=False)
    assert cur(router) == 0.0


def test_proxy_refresh_count(tiny_model, schedule, sampler4):
    config = tiny_train_config(iters=20, interval_c=8)
    log = TrainingLog()
    sdt_train(tiny_model, config, sampler4, schedule, log=log, progress=False)
    assert log.refresh_count == 3 == 20 // 8 + 1
    assert [p.refreshed_at for p in log.proxies] == [0, 2, 4]
    assert len(log.rows) == 5 * 3


def test_sdt_is_deterministic(tiny_model, schedule, sampler4):
    config = tiny_train_config(iters=8, teacher_forcing=True)
    a = sdt_train(tiny_model, config, sampler4, schedule, progress=False)
    b = sdt_train(tiny_model, config, sampler4, schedule, progress=False)
    assert router_bytes(a) == router_bytes(b)


def test_odd_rows_variant_trains_only_odd_steps(tiny_model, schedule, sampler4):
    config = tiny_train_config(iters=8, sdt_rows="odd")
    assert sdt_rows(config, 4) == [3, 1]
    router = Router.initialize(4, 2, seed=5)
    start = router.logits.data.copy()
    sdt_train(tiny_model, config, sampler4, schedule, router=router, progress=False)
    np.testing.assert_array_equal(router.logits.data[[1, 3]], start[[1, 3]])
    assert np.all(router.logits.data[[0, 2]] != start[[0, 2]])


@pytest.mark.parametrize("forcing", [True, False])
def test_teacher_forcing_picks_the_prediction_that_advances_x(tiny_model, schedule, sampler4,
                                                             monkeypatch, forcing):
    predictions, advanced = {}, {}
    step_loss, solver = SDT_Operations.cached_step_loss, SDT_Operations.solver_step

    def recording_loss(*args, **kwargs):
        result = step_loss(*args, **kwargs)
        predictions[args[3]] = result[1:3]
        return result

    def recording_solver(schedule_, config, x, t, eps):
        if t < config.T:
            advanced[t] = np.array(getattr(eps, "data", eps))
        return solver(schedule_, config, x, t, eps)

    monkeypatch.setattr(SDT_Operations, "cached_step_loss", recording_loss)
    monkeypatch.setattr(SDT_Operations, "solver_step", recording_solver)
    sdt_train(tiny_model, tiny_train_config(iters=4, teacher_forcing=forcing), sampler4, schedule, progress=False)

    assert sorted(predictions) == sorted(advanced) == [1, 2, 3]
    for t, (eps_student, eps_teacher) in predictions.items():
        assert not np.array_equal(eps_student, eps_teacher)
        np.testing.assert_array_equal(advanced[t], eps_teacher if forcing else eps_student)


def test_sdt_writes_router_snapshots(tiny_model, schedule, sampler4, tmp_path):
    config = tiny_train_config(iters=16, interval_c=16, checkpoint_every=2)
    with RunDirectory(tmp_path / "run", "train-router", 0) as run_dir:
        router = sdt_train(tiny_model, config, sampler4, schedule, run_dir=run_dir, progress=False)
    names = sorted(p.name for p in (tmp_path / "run").glob("router_iter*.json"))
    assert names == ["router_iter2.json", "router_iter4.json"]
    assert set(names) <= set(run_dir.outputs)
    assert router_bytes(load_router(tmp_path / "run" / "router_iter4.json")) == router_bytes(router)


def test_no_snapshots_without_interval(tiny_model, schedule, sampler4, tmp_path):
    with RunDirectory(tmp_path / "run", "train-router", 0) as run_dir:
        sdt_train(tiny_model, tiny_train_config(), sampler4, schedule, run_dir=run_dir, progress=False)
    assert not list((tmp_path / "run").glob("router_iter*.json"))


def test_nan_loss_dumps_state(tiny_model, schedule, sampler4, tmp_path, monkeypatch):
    def explode(*args, **kwargs):
        raise NumericError("non-finite router loss")

    monkeypatch.setattr(SDT_Operations, "cached_step_loss", explode)
    with pytest.raises(NumericError) as info:
        with RunDirectory(tmp_path / "run", "train-router", 0) as run_dir:
            sdt_train(tiny_model, tiny_train_config(), sampler4, schedule, run_dir=run_dir, progress=False)
    assert info.value.diagnostics["t"] == 3
    assert (tmp_path / "run" / SDT_Operations.NAN_DUMP_NAME).exists()
    assert '"status": "failed"' in (tmp_path / "run" / "manifest.json").read_text()


#######################################################
# LTC

def test_ltc_candidate_steps():
    assert ltc_timesteps(TrainConfig(ltc_sampling="even"), 8).tolist() == [2, 4, 6, 8]
    assert ltc_timesteps(TrainConfig(ltc_sampling="any"), 4).tolist() == [2, 3, 4]


def test_ltc_even_sampling_leaves_even_rows_untouched(tiny_model, schedule, sampler4):
    dataset = SyntheticDataset.for_model(tiny_model.config, seed=0)
    config = tiny_train_config(iters=20, paradigm="ltc", objective="ltc", ltc_sampling="even")
    router = Router.initialize(4, 2, seed=5)
    start = router.logits.data.copy()
    ltc_train(tiny_model, config, sampler4, schedule, dataset, router=router, progress=False)
    np.testing.assert_array_equal(router.logits.data[[1, 3]], start[[1, 3]])
    assert np.all(router.logits.data[[0, 2]] != start[[0, 2]])


def test_even_ltc_sampling_needs_an_even_step_count():
    even = TrainConfig(paradigm="ltc", iters=20, interval_c=20)
    assert [p for p in even.violations(5) if "even sampler.T" in p]
    assert even.violations(4) == []
    assert TrainConfig(paradigm="ltc", ltc_sampling="any", iters=20, interval_c=20).violations(5) == []
    assert TrainConfig(iters=20, interval_c=20).violations(5) == []
    assert TrainConfig(checkpoint_every=-1).violations(8) == ["train.checkpoint_every must be ≥ 0 (got -1)"]


def test_ltc_writes_router_snapshots(tiny_model, schedule, sampler4, tmp_path):
    dataset = SyntheticDataset.for_model(tiny_model.config, seed=0)
    config = tiny_train_config(iters=8, paradigm="ltc", objective="ltc", checkpoint_every=4)
    with RunDirectory(tmp_path / "run", "train-router", 0) as run_dir:
        ltc_train(tiny_model, config, sampler4, schedule, dataset, run_dir=run_dir, progress=False)
    names = sorted(p.name for p in (tmp_path / "run").glob("router_iter*.json"))
    assert names == ["router_iter4.json", "router_iter8.json"]


def test_ltc_unconstrained_sampling_reaches_every_row(tiny_model, schedule, sampler4):
    dataset = SyntheticDataset.for_model(tiny_model.config, seed=0)
    config = tiny_train_config(iters=40, paradigm="ltc", objective="iepo", interval_c=20, ltc_sampling="any")
    router = Router.initialize(4, 2, seed=5)
    start = router.logits.data.copy()
    log = TrainingLog()
    ltc_train(tiny_model, config, sampler4, schedule, dataset, router=router, log=log, progress=False)
    assert np.all(router.logits.data[:3] != start[:3])
    np.testing.assert_array_equal(router.logits.data[3], start[3])
    assert log.refresh_count == 2


#######################################################
# Teacher pretraining

def test_pretrain_zero_steps_returns_initial_model(schedule):
    config = DiTConfig(**TINY_CONFIG)
    dataset = SyntheticDataset.for_model(config)
    model = pretrain_teacher(config, dataset, schedule, PretrainOptions(steps=0), progress=False)
    assert checkpoint_bytes(model) == checkpoint_bytes(DiTModel.initialize(config))


def test_pretrain_is_reproducible(schedule):
    config = DiTConfig(**TINY_CONFIG)
    options = PretrainOptions(steps=3, batch=4)
    a = pretrain_teacher(config, SyntheticDataset.for_model(config, 1), schedule, options, progress=False)
    b = pretrain_teacher(config, SyntheticDataset.for_model(config, 1), schedule, options, progress=False)
    assert checkpoint_bytes(a) == checkpoint_bytes(b)
    assert checkpoint_bytes(a) != checkpoint_bytes(DiTModel.initialize(config))


def test_synthetic_dataset_is_class_shaped():
    dataset = SyntheticDataset(n_classes=4, image_size=8, channels=1, seed=0)
    images, labels = dataset.sample(64)
    assert images.shape == (64, 1, 8, 8)
    assert images.min() >= -1.0 and images.max() <= 1.0
    for c in range(4):
        peak = np.unravel_index(images[labels == c].mean(axis=0)[0].argmax(), (8, 8))
        assert np.hypot(*(np.array(peak) - dataset.centres[c])) < 1.5


def test_held_out_loss_must_stay_below_the_ceiling():
    check_held_out_loss(0.5, PretrainOptions(max_held_out_loss=1.0))
    for loss in (1.0, 2.0, float("nan")):
        with pytest.raises(NumericError) as info:
            check_held_out_loss(loss, PretrainOptions())
        assert info.value.diagnostics["max_held_out_loss"] == 1.0
    assert len(PretrainOptions(max_held_out_loss=0.0).violations()) == 1


@pytest.mark.slow
def test_longer_pretraining_lowers_held_out_loss(schedule):
    short, long = [], []
    for seed in range(3):
        config = DiTConfig(seed=seed)
        dataset = SyntheticDataset.for_model(config, seed)
        for steps, losses in ((100, short), (2000, long)):
            model = pretrain_teacher(config, dataset, schedule, PretrainOptions(steps=steps), progress=False)
            losses.append(denoising_loss(model, dataset, schedule, seed=seed + 1000))
    assert np.median(long) < np.median(short)
    assert max(long) < PretrainOptions().max_held_out_loss
