"""
Step-wise denoising training (SDT) of the router.

Every outer iteration walks one full trajectory x_T → x_0. The first step
pre-fills the caches; at each later step t the student (soft-cached forward
under Router_t) and the teacher (plain forward) see the same x_t, the loss

    L^(t) = λ_t · ‖ε' - ε‖²_F + β · Σ_i r_{t,i}

is backpropagated into row t only, and x_{t-1} = φ(x_t, t, ε') is computed
from the detached student prediction (the teacher's ε under teacher forcing).
"""

from typing import Iterable, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from dit_cache.common.autodiff import (
    Tensor, add, backward, check_finite, frobenius_sq, index, no_grad, scale, sum_all,
)
from dit_cache.common.errors import NumericError
from dit_cache.common.optimizers import AdamW
from dit_cache.common.run_directory import RunDirectory
from dit_cache.debug_system import get_debug_logger, LogCategory
from dit_cache.tools.DiT_Model.Core import DiTModel
from dit_cache.tools.Feature_Cache.Core import Cache, CacheMode, Router, cur
from dit_cache.tools.Feature_Cache.Router_File import router_bytes
from dit_cache.tools.Sampler.Core import (
    ClassIds, NoiseSchedule, SamplerConfig, make_caches, predict_noise, solver_step,
)
from .Core import Objective, ProxyVector, TrainConfig, TrainingLog
from .Proxy import gen_proxy

# Module-level debug logger
debug_logger = get_debug_logger()

NAN_DUMP_NAME = "nan_state.json"
ROUTER_SNAPSHOT_NAME = "router_iter{}.json"


#######################################################
# Shared by both training paradigms

def initial_router(teacher: DiTModel, config: TrainConfig, T: int) -> Router:
    return Router.initialize(T, teacher.n_blocks, config.tau, config.init_mean, config.init_std,
                             seed=config.seed)


def make_optimizer(router: Router, config: TrainConfig) -> AdamW:
    return AdamW([router.logits], lr=config.lr, betas=config.betas, weight_decay=config.weight_decay)


def full_compute_step(teacher: DiTModel, x: np.ndarray, t: int, class_id: ClassIds,
                      schedule: NoiseSchedule, sampler_config: SamplerConfig,
                      caches: List[Cache]) -> Tuple[np.ndarray, np.ndarray]:
    """Compute every block at step t, refreshing the caches; returns (ε, x_{t-1})"""
    with no_grad():
        eps = predict_noise(teacher, Tensor(x), t, class_id, schedule, sampler_config,
                            row=[1.0] * teacher.n_blocks, tau=0.0, caches=caches, mode=CacheMode.HARD)
        return eps.data, solver_step(schedule, sampler_config, x, t, eps).data


def cached_step_loss(teacher: DiTModel, router: Router, x: np.ndarray, t: int, class_id: ClassIds,
                     schedule: NoiseSchedule, sampler_config: SamplerConfig, caches: List[Cache],
                     lam: float, beta: float):
    """
    Loss of router row t at input x_t.

    Returns:
        (loss tensor, student ε', teacher ε, L_MSE value, Σ r value)
    """
    row = router.row_gates(t)
    gates = [index(row, i) for i in range(router.N)]
    eps_student = predict_noise(teacher, Tensor(x), t, class_id, schedule, sampler_config,
                                row=gates, tau=router.tau, caches=caches, mode=CacheMode.SOFT)
    with no_grad():
        eps_teacher = predict_noise(teacher, Tensor(x), t, class_id, schedule, sampler_config)
    l_mse = frobenius_sq(eps_student, eps_teacher)
    reg = sum_all(row)
    loss = add(scale(l_mse, lam), scale(reg, beta))
    check_finite(loss, "router loss")
    return loss, eps_student.data, eps_teacher.data, l_mse.item(), reg.item()


def dump_nan_state(run_dir: Optional[RunDirectory], error: NumericError, state: dict):
    """Attach the training state to the error and write it next to the run outputs"""
    error.diagnostics.update(state)
    debug_logger.error(LogCategory.TRAINING, "Non-finite value during router training", state)
    if run_dir is not None:
        run_dir.write_json(NAN_DUMP_NAME, {"error": str(error), **error.diagnostics})


def train_row(router: Router, optimizer: AdamW, loss: Tensor, t: int):
    """Backpropagate and update Router_t only"""
    backward(loss)
    optimizer.step(rows=[t - 1])
    optimizer.zero_grad()


def write_snapshot(run_dir: Optional[RunDirectory], router: Router, config: TrainConfig, done: int):
    """Router file after `done` loop iterations, every config.checkpoint_every iterations"""
    if run_dir is None or config.checkpoint_every < 1 or done % config.checkpoint_every:
        return None
    return run_dir.write_bytes(ROUTER_SNAPSHOT_NAME.format(done), router_bytes(router))


#######################################################
def sdt_rows(config: TrainConfig, T: int) -> List[int]:
    """Timesteps whose router rows SDT trains, T-1 … 1"""
    rows = list(range(T - 1, 0, -1))
    if config.sdt_rows == "odd":
        rows = [t for t in rows if t % 2 == 1]
    return rows


def sdt_train(teacher: DiTModel, config: TrainConfig, sampler_config: SamplerConfig,
              schedule: NoiseSchedule, router: Optional[Router] = None,
              log: Optional[TrainingLog] = None, run_dir: Optional[RunDirectory] = None,
              progress: bool = True) -> Router:
    """
    Train a router by walking whole denoising trajectories.

    Args:
        teacher: frozen noise predictor
        config: iterations, β, C, optimizer and objective settings
        sampler_config: solver, T and guidance scale used for training
        schedule: noise schedule of the teacher
        router: starting router; initialised from config when omitted
        log: receives one row per trained step and every proxy refresh
        run_dir: where router snapshots and a NaN state dump go
        progress: show a tqdm progress bar

    Returns:
        The trained router (same object as `router` when one is passed)
    """
    T = sampler_config.T
    teacher.requires_grad_(False)
    router = router or initial_router(teacher, config, T)
    optimizer = make_optimizer(router, config)
    log = log if log is not None else TrainingLog()
    rng = np.random.default_rng(config.seed)
    trained = set(sdt_rows(config, T))
    period = config.refresh_period(T)
    iepo = config.objective == Objective.IEPO.value
    proxy = ProxyVector.ones(T)

    outer = config.iters // T
    debug_logger.info(LogCategory.TRAINING, "Starting SDT router training", {
        "outer_iterations": outer, "T": T, "N": router.N, "objective": config.objective,
        "beta": config.beta, "interval_c": config.interval_c, "teacher_forcing": config.teacher_forcing})
    timer = debug_logger.start_performance_timer("sdt_train")

    for i in tqdm(range(outer), desc="SDT", disable=not progress):
        x = rng.standard_normal((config.batch,) + teacher.config.image_shape)
        class_ids = config.class_ids(i, teacher.config.n_classes)
        if iepo and i % period == 0:
            proxy = gen_proxy(teacher, schedule, sampler_config, x, class_ids, router, config.proxy_metric, i)
            log.proxies.append(proxy)

        caches = make_caches(teacher, sampler_config)
        _, x = full_compute_step(teacher, x, T, class_ids, schedule, sampler_config, caches)
        for t in range(T - 1, 0, -1):
            if t not in trained:
                _, x = full_compute_step(teacher, x, t, class_ids, schedule, sampler_config, caches)
                continue
            lam = proxy.at(t)
            try:
                loss, eps_student, eps_teacher, l_mse, reg = cached_step_loss(
                    teacher, router, x, t, class_ids, schedule, sampler_config, caches, lam, config.beta)
                train_row(router, optimizer, loss, t)
            except NumericError as e:
                dump_nan_state(run_dir, e, {"iteration": i, "t": t, "lambda": lam,
                                            "gates": router.gates().row(t).tolist()})
                raise
            log.append(i, t, l_mse, lam, reg, cur(router))
            debug_logger.debug(LogCategory.TRAINING, "SDT step", {"iteration": i, "t": t, "l_mse": l_mse,
                                                                 "lambda": lam, "reg": reg})
            next_eps = eps_teacher if config.teacher_forcing else eps_student
            x = solver_step(schedule, sampler_config, x, t, next_eps).data
        write_snapshot(run_dir, router, config, i + 1)

    debug_logger.end_performance_timer(timer, {"outer_iterations": outer})
    debug_logger.info(LogCategory.TRAINING, "Finished SDT router training", {
        "cur": cur(router), "proxy_refreshes": log.refresh_count})
    debug_logger.log_memory_usage("sdt_train")
    return router
