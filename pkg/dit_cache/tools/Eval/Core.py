"""
Measurement harness: per-step trajectory error against the plain teacher,
CUR and FLOPs speedup of a router, and the report that bundles them.

Seed s draws x_T from default_rng(seed + s) and conditions on class
s mod n_classes, so teacher and student always share their inputs.
"""

import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from dit_cache.debug_system import get_debug_logger, LogCategory
from dit_cache.tools.DiT_Model.Core import DiTModel
from dit_cache.tools.DiT_Model.Flops import block_flops
from dit_cache.tools.Feature_Cache.Core import GateSource, as_gate_matrix, cur, theoretical_speedup
from dit_cache.tools.Sampler.Core import NoiseSchedule, SamplerConfig, sample

# Module-level debug logger
debug_logger = get_debug_logger()


@dataclass
class EvalReport:
    """One row of a comparison table"""
    method: str
    cur: float
    speedup: float
    wall_clock: float
    mse_mean: float
    mse_std: float
    curve: List[float] = field(default_factory=list)
    n_seeds: int = 0

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


def seed_inputs(model: DiTModel, seed: int, s: int, batch: int = 1):
    """(x_T, class id) of evaluation seed s"""
    x_T = np.random.default_rng(seed + s).standard_normal((batch,) + model.config.image_shape)
    return x_T, s % model.config.n_classes


def trajectory_errors(teacher: DiTModel, router: Optional[GateSource], schedule: NoiseSchedule,
                      config: SamplerConfig, n_seeds: int, seed: int = 0, batch: int = 1,
                      progress: bool = False) -> np.ndarray:
    """‖x_t(cached) - x_t(plain)‖²_F per seed and step: shape (n_seeds, T + 1), column t"""
    if n_seeds < 1:
        raise ValueError(f"trajectory error needs at least one seed, got {n_seeds}")
    errors = np.zeros((n_seeds, config.T + 1))
    for s in tqdm(range(n_seeds), desc="Seeds", disable=not progress):
        x_T, class_id = seed_inputs(teacher, seed, s, batch)
        plain = sample(teacher, None, schedule, config, x_T, class_id)
        cached = sample(teacher, router, schedule, config, x_T, class_id)
        for t in range(config.T + 1):
            errors[s, t] = float(np.sum((cached.x(t) - plain.x(t)) ** 2))
    return errors


def trajectory_mse(teacher: DiTModel, router: Optional[GateSource], schedule: NoiseSchedule,
                   config: SamplerConfig, n_seeds: int, seed: int = 0, batch: int = 1) -> np.ndarray:
    """Mean over seeds of the per-step error; entry t is the error of x_t"""
    return trajectory_errors(teacher, router, schedule, config, n_seeds, seed, batch).mean(axis=0)


def evaluate_router(teacher: DiTModel, router: GateSource, schedule: NoiseSchedule,
                    config: SamplerConfig, n_seeds: int, method: str = "router", seed: int = 0,
                    batch: int = 1, cost: Optional[Sequence[float]] = None,
                    progress: bool = False) -> EvalReport:
    """
    Evaluate a router against the plain teacher.

    Args:
        teacher: noise predictor
        router: Router or GateMatrix to evaluate
        schedule: noise schedule
        config: sampler settings shared by both runs
        n_seeds: number of evaluation seeds
        method: row label
        seed: base seed of the evaluation inputs
        batch: images per seed
        cost: per-block FLOPs; block_flops(teacher.config) when omitted
        progress: show a progress bar over seeds

    Returns:
        EvalReport whose CUR is cur() of the router
    """
    gates = as_gate_matrix(router)
    cost = block_flops(teacher.config) if cost is None else cost

    errors = trajectory_errors(teacher, gates, schedule, config, n_seeds, seed, batch, progress)

    started = time.perf_counter()
    for s in range(n_seeds):
        x_T, class_id = seed_inputs(teacher, seed, s, batch)
        sample(teacher, gates, schedule, config, x_T, class_id)
    wall_clock = (time.perf_counter() - started) / (n_seeds * batch)

    final = errors[:, 0]
    report = EvalReport(
        method=method,
        cur=cur(gates),
        speedup=theoretical_speedup(gates, cost),
        wall_clock=wall_clock,
        mse_mean=float(final.mean()),
        mse_std=float(final.std()),
        curve=[float(v) for v in errors.mean(axis=0)],
        n_seeds=n_seeds,
    )
    debug_logger.info(LogCategory.EVAL, f"Evaluated {method}", {
        "cur": report.cur, "speedup": report.speedup, "mse_mean": report.mse_mean})
    return report
