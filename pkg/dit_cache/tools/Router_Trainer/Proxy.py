"""
Final-image error proxy.

λ^(t) measures how much caching at step t changes the final image: x_0 is
generated once under the router (hard caching) and once more per step t with
caching disabled at t only (router ⊙ M^(t)); λ^(t) is the distance between
the two images. Everything here runs without recording a graph.
"""

from typing import List, Tuple

import numpy as np

from dit_cache.common.autodiff import Tensor, frobenius_sq, no_grad
from dit_cache.debug_system import get_debug_logger, LogCategory
from dit_cache.tools.DiT_Model.Core import DiTModel
from dit_cache.tools.Feature_Cache.Core import GateSource, apply_mask, as_gate_matrix
from dit_cache.tools.Sampler.Core import ClassIds, NoiseSchedule, SamplerConfig, predict_noise, sample
from .Core import ProxyMetric, ProxyVector

# Module-level debug logger
debug_logger = get_debug_logger()

KL_FLOOR = 1e-12


def _as_distribution(x: np.ndarray) -> np.ndarray:
    shifted = x - x.min()
    mass = shifted.sum()
    if mass <= 0.0:
        raise ValueError("KL proxy: image normalises to zero mass")
    return np.maximum(shifted / mass, KL_FLOOR)


def proxy_metric_variant(x0, x0_t, kind="fro") -> float:
    """
    Distance between the router's image and the step-masked image.

    Args:
        x0: reference image(s), any shape
        x0_t: image(s) of the same shape
        kind: fro (squared Frobenius), l1 (sum of absolute differences) or
              kl (KL divergence per batch element, summed)

    Returns:
        Non-negative scalar
    """
    kind = ProxyMetric.parse(kind)
    a = np.asarray(x0.data if isinstance(x0, Tensor) else x0, dtype=np.float64)
    b = np.asarray(x0_t.data if isinstance(x0_t, Tensor) else x0_t, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"proxy metric needs equal shapes, got {a.shape} and {b.shape}")
    if kind is ProxyMetric.FRO:
        return float(np.sum((a - b) ** 2))
    if kind is ProxyMetric.L1:
        return float(np.sum(np.abs(a - b)))

    # KL: one distribution per batch element
    if a.ndim < 2:
        a, b = a[None], b[None]
    total = 0.0
    for p_img, q_img in zip(a, b):
        p, q = _as_distribution(p_img), _as_distribution(q_img)
        total += float(np.sum(p * (np.log(p) - np.log(q))))
    return max(total, 0.0)


def gen_proxy(model: DiTModel, schedule: NoiseSchedule, sampler_config: SamplerConfig, x_T,
              class_id: ClassIds, router: GateSource, metric="fro", iteration: int = 0) -> ProxyVector:
    """
    λ for every step of one trajectory.

    Rows already fully above τ give λ_t = 0 without a second generation, and
    λ_T = 0 because the pre-fill row is never cached.
    """
    gates = as_gate_matrix(router)
    timer = debug_logger.start_performance_timer("gen_proxy")
    lam = np.zeros(gates.T)
    with no_grad():
        x0 = sample(model, gates, schedule, sampler_config, x_T, class_id).x0
        for t in range(gates.T - 1, 0, -1):
            if gates.row_fully_computed(t):
                continue
            x0_t = sample(model, apply_mask(gates, t), schedule, sampler_config, x_T, class_id).x0
            lam[t - 1] = proxy_metric_variant(x0, x0_t, metric)
    debug_logger.end_performance_timer(timer)
    debug_logger.info(LogCategory.TRAINING, "Refreshed image error proxy", {
        "iteration": iteration, "lambda": [round(float(v), 6) for v in lam]})
    debug_logger.log_memory_usage("gen_proxy")
    return ProxyVector(lam, iteration)


def proxy_trace(model: DiTModel, router: GateSource, schedule: NoiseSchedule,
                sampler_config: SamplerConfig, x_T, class_id: ClassIds,
                metric="fro") -> List[Tuple[int, float, float]]:
    """
    Per-step rows (t, L_MSE, λ) for one trajectory, t = T..1.

    L_MSE at t is ‖ε'(x_t) - ε(x_t)‖²_F where x_t is the cached trajectory's
    state, ε' its cached prediction and ε the plain prediction on the same input.
    """
    gates = as_gate_matrix(router)
    proxy = gen_proxy(model, schedule, sampler_config, x_T, class_id, gates, metric)
    with no_grad():
        trajectory = sample(model, gates, schedule, sampler_config, x_T, class_id)
        rows = []
        for t in range(gates.T, 0, -1):
            eps_plain = predict_noise(model, Tensor(trajectory.x(t)), t, class_id, schedule, sampler_config)
            l_mse = frobenius_sq(Tensor(trajectory.eps(t)), eps_plain).item()
            rows.append((t, l_mse, proxy.at(t)))
    return rows
