"""
Learning-to-Cache style router training.

Each iteration samples one timestep t, forward-noises synthetic images to
x_t, pre-fills fresh caches with a full forward at t, steps to x_{t-1} with
the teacher's prediction, and trains Router_{t-1} on the soft-cached forward
at t-1. The same x_{t-1} feeds student and teacher.
"""

from typing import Optional

import numpy as np
from tqdm import tqdm

from dit_cache.common.errors import NumericError
from dit_cache.common.run_directory import RunDirectory
from dit_cache.debug_system import get_debug_logger, LogCategory
from dit_cache.tools.DiT_Model.Core import DiTModel
from dit_cache.tools.Feature_Cache.Core import Router, cur
from dit_cache.tools.Sampler.Core import NoiseSchedule, SamplerConfig, make_caches
from .Core import LtcSampling, Objective, ProxyVector, TrainConfig, TrainingLog
from .Dataset import SyntheticDataset
from .Proxy import gen_proxy
from .SDT_Operations import (
    cached_step_loss, dump_nan_state, full_compute_step, initial_router, make_optimizer, train_row,
    write_snapshot,
)

# Module-level debug logger
debug_logger = get_debug_logger()


def ltc_timesteps(config: TrainConfig, T: int) -> np.ndarray:
    """Candidate pre-fill steps t; the trained row is t - 1"""
    steps = np.arange(2, T + 1)
    if config.ltc_sampling == LtcSampling.EVEN.value:
        steps = steps[steps % 2 == 0]
    return steps


def ltc_train(teacher: DiTModel, config: TrainConfig, sampler_config: SamplerConfig,
              schedule: NoiseSchedule, dataset: SyntheticDataset, router: Optional[Router] = None,
              log: Optional[TrainingLog] = None, run_dir: Optional[RunDirectory] = None,
              progress: bool = True) -> Router:
    """Train one router row per iteration from a freshly pre-filled cache"""
    T = sampler_config.T
    teacher.requires_grad_(False)
    router = router or initial_router(teacher, config, T)
    optimizer = make_optimizer(router, config)
    log = log if log is not None else TrainingLog()
    rng = np.random.default_rng(config.seed)
    candidates = ltc_timesteps(config, T)
    iepo = config.objective == Objective.IEPO.value
    proxy = ProxyVector.ones(T)

    debug_logger.info(LogCategory.TRAINING, "Starting LTC router training", {
        "iterations": config.iters, "T": T, "N": router.N, "objective": config.objective,
        "sampling": config.ltc_sampling, "beta": config.beta})
    timer = debug_logger.start_performance_timer("ltc_train")

    for i in tqdm(range(config.iters), desc="LTC", disable=not progress):
        if iepo and i % config.interval_c == 0:
            x_T = rng.standard_normal((config.batch,) + teacher.config.image_shape)
            proxy = gen_proxy(teacher, schedule, sampler_config, x_T,
                              config.class_ids(i, teacher.config.n_classes), router, config.proxy_metric, i)
            log.proxies.append(proxy)

        t = int(rng.choice(candidates))
        images, labels = dataset.sample(config.batch, rng)
        noise = rng.standard_normal(images.shape)
        x_t = schedule.add_noise(images, noise, sampler_config.train_step(t, schedule.T_train))
        class_ids = tuple(int(c) for c in labels)

        caches = make_caches(teacher, sampler_config)
        _, x_prev = full_compute_step(teacher, x_t, t, class_ids, schedule, sampler_config, caches)
        lam = proxy.at(t - 1)
        try:
            loss, _, _, l_mse, reg = cached_step_loss(
                teacher, router, x_prev, t - 1, class_ids, schedule, sampler_config, caches, lam, config.beta)
            train_row(router, optimizer, loss, t - 1)
        except NumericError as e:
            dump_nan_state(run_dir, e, {"iteration": i, "t": t - 1, "lambda": lam,
                                        "gates": router.gates().row(t - 1).tolist()})
            raise
        log.append(i, t - 1, l_mse, lam, reg, cur(router))
        debug_logger.debug(LogCategory.TRAINING, "LTC step", {"iteration": i, "t": t - 1, "l_mse": l_mse,
                                                             "lambda": lam, "reg": reg})
        write_snapshot(run_dir, router, config, i + 1)

    debug_logger.end_performance_timer(timer, {"iterations": config.iters})
    debug_logger.info(LogCategory.TRAINING, "Finished LTC router training", {
        "cur": cur(router), "proxy_refreshes": log.refresh_count})
    debug_logger.log_memory_usage("ltc_train")
    return router
