"""
Noise schedule and deterministic samplers.

Inference timesteps t = T..1 map onto training-step indices with a uniform
stride: k(t) = round(t · T_train / T), and k(0) = 0 with ᾱ(0) := 1, so the
last step returns the clean estimate x̂_0.

sample() runs the whole trajectory under no_grad. When a router is given,
the first step (t = T) computes every block to pre-fill the cache; with
classifier-free guidance each branch owns its cache.
"""

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from dit_cache.common.autodiff import Tensor, add, as_tensor, no_grad, scale, sub
from dit_cache.common.errors import DimensionError
from dit_cache.debug_system import get_debug_logger, LogCategory
from dit_cache.tools.DiT_Model.Core import Condition, DiTModel, forward_cached, forward_plain
from dit_cache.tools.Feature_Cache.Core import Cache, CacheMode, GateSource, as_gate_matrix

# Module-level debug logger
debug_logger = get_debug_logger()

DEFAULT_T_TRAIN = 1000
BETA_START = 1e-4
BETA_END = 0.02

ClassIds = Union[int, Sequence[int]]


#######################################################
@dataclass(frozen=True)
class NoiseSchedule:
    """Linear DDPM β schedule; alphas_bar[k - 1] is ᾱ at training step k"""
    T_train: int
    betas: np.ndarray
    alphas_bar: np.ndarray

    def alpha_bar(self, k: int) -> float:
        if not 0 <= k <= self.T_train:
            raise IndexError(f"training step {k} outside [0, {self.T_train}]")
        return 1.0 if k == 0 else float(self.alphas_bar[k - 1])

    def add_noise(self, x0: np.ndarray, noise: np.ndarray, k: Union[int, np.ndarray]) -> np.ndarray:
        """Forward process q(x_k | x_0) = √ᾱ_k·x_0 + √(1-ᾱ_k)·ε, per batch element when k is an array"""
        ks = np.atleast_1d(np.asarray(k, dtype=np.int64))
        abar = np.where(ks == 0, 1.0, self.alphas_bar[np.maximum(ks, 1) - 1])
        abar = abar.reshape((-1,) + (1,) * (x0.ndim - 1))
        return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * noise


def make_schedule(T_train: int = DEFAULT_T_TRAIN, beta_start: float = BETA_START,
                  beta_end: float = BETA_END) -> NoiseSchedule:
    if T_train < 1:
        raise ValueError(f"T_train must be ≥ 1, got {T_train}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError(f"need 0 < beta_start ≤ beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, T_train, dtype=np.float64)
    alphas_bar = np.cumprod(1.0 - betas)
    betas.setflags(write=False)
    alphas_bar.setflags(write=False)
    return NoiseSchedule(T_train, betas, alphas_bar)


class SamplerKind(str, Enum):
    DDIM = "ddim"
    EULER = "euler"


#######################################################
@dataclass
class SamplerConfig:
    """Inference sampler: solver kind, step count T, guidance scale w"""
    kind: str = SamplerKind.DDIM.value
    T: int = 8
    cfg_scale: float = 1.0
    spacing: str = "uniform"

    def violations(self) -> List[str]:
        problems = []
        if self.kind not in {k.value for k in SamplerKind}:
            problems.append(f"sampler.kind must be one of ddim, euler (got {self.kind!r})")
        if self.T < 2:
            problems.append(f"sampler.T must be ≥ 2 (got {self.T})")
        if self.cfg_scale < 1.0:
            problems.append(f"sampler.cfg_scale must be ≥ 1 (got {self.cfg_scale})")
        if self.spacing != "uniform":
            problems.append(f"sampler.spacing must be 'uniform' (got {self.spacing!r})")
        return problems

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)

    def train_step(self, t: int, T_train: int) -> int:
        """Training-step index k(t) = round(t · T_train / T)"""
        if not 0 <= t <= self.T:
            raise IndexError(f"timestep {t} outside [0, {self.T}]")
        if self.T > T_train:
            raise ValueError(f"T ({self.T}) exceeds T_train ({T_train})")
        return int(math.floor(t * T_train / self.T + 0.5))

    @property
    def guided(self) -> bool:
        return self.cfg_scale != 1.0


#######################################################
@dataclass
class StepRecord:
    t: int
    x_t: np.ndarray
    eps: np.ndarray
    metrics: Dict[str, float] = field(default_factory=dict)


@dataclass
class Trajectory:
    """x_T … x_0 with the noise prediction used at every step"""
    T: int
    records: List[StepRecord] = field(default_factory=list)
    x0: Optional[np.ndarray] = None

    def x(self, t: int) -> np.ndarray:
        """x_t for t in [0, T]"""
        if t == 0:
            return self.x0
        return self.records[self.T - t].x_t

    def eps(self, t: int) -> np.ndarray:
        return self.records[self.T - t].eps

    @property
    def blocks_computed(self) -> int:
        return int(sum(r.metrics.get("blocks_computed", 0) for r in self.records))

    @property
    def blocks_reused(self) -> int:
        return int(sum(r.metrics.get("blocks_reused", 0) for r in self.records))


#######################################################
# Solver steps

def ddim_step(schedule: NoiseSchedule, x_t, t_hi: int, t_lo: int, eps) -> Tensor:
    """
    Deterministic DDIM (η = 0) update between training steps t_hi > t_lo ≥ 0.

        x̂_0  = (x_t - √(1-ᾱ_hi)·ε) / √ᾱ_hi
        x_lo = √ᾱ_lo·x̂_0 + √(1-ᾱ_lo)·ε
    """
    if not t_hi > t_lo >= 0:
        raise ValueError(f"DDIM step needs t_hi > t_lo ≥ 0, got {t_hi}, {t_lo}")
    a_hi, a_lo = schedule.alpha_bar(t_hi), schedule.alpha_bar(t_lo)
    if a_hi <= 0.0 or a_lo <= 0.0:
        raise ValueError(f"non-positive alpha_bar at step {t_hi} or {t_lo}")
    x_t, eps = as_tensor(x_t).data, as_tensor(eps).data
    if x_t.shape != eps.shape:
        raise DimensionError("x_t and eps must have the same shape", x_t.shape, eps.shape)
    x0_hat = (x_t - math.sqrt(1.0 - a_hi) * eps) / math.sqrt(a_hi)
    if t_lo == 0:
        return Tensor(x0_hat)
    return Tensor(math.sqrt(a_lo) * x0_hat + math.sqrt(1.0 - a_lo) * eps)


def euler_step(x_t, t_hi: int, t_lo: int, velocity, T_train: int = DEFAULT_T_TRAIN) -> Tensor:
    """Euler step of a linear-path flow: x_lo = x_t + (σ(t_lo) - σ(t_hi))·v with σ(k) = k / T_train"""
    if not t_hi > t_lo >= 0:
        raise ValueError(f"Euler step needs t_hi > t_lo ≥ 0, got {t_hi}, {t_lo}")
    x_t, velocity = as_tensor(x_t).data, as_tensor(velocity).data
    if x_t.shape != velocity.shape:
        raise DimensionError("x_t and velocity must have the same shape", x_t.shape, velocity.shape)
    return Tensor(x_t + (t_lo / T_train - t_hi / T_train) * velocity)


def solver_step(schedule: NoiseSchedule, config: SamplerConfig, x_t, t: int, eps) -> Tensor:
    """φ(x_t, t, ε): one inference step from t to t - 1 with the configured solver"""
    k_hi = config.train_step(t, schedule.T_train)
    k_lo = config.train_step(t - 1, schedule.T_train)
    if config.kind == SamplerKind.EULER.value:
        return euler_step(x_t, k_hi, k_lo, eps, schedule.T_train)
    return ddim_step(schedule, x_t, k_hi, k_lo, eps)


#######################################################
# Noise prediction with guidance and caching

def make_caches(model: DiTModel, config: SamplerConfig) -> List[Cache]:
    """One cache per guidance branch: [conditional] or [conditional, null]"""
    return [Cache(model.n_blocks) for _ in range(2 if config.guided else 1)]


def predict_noise(model: DiTModel, x, t: int, class_id: ClassIds, schedule: NoiseSchedule,
                  config: SamplerConfig, row: Optional[Sequence] = None, tau: float = 0.0,
                  caches: Optional[List[Cache]] = None, mode: CacheMode = CacheMode.HARD) -> Tensor:
    """
    Guided noise prediction ε = ε_null + w·(ε_cond - ε_null) at inference step t.

    With w = 1 only the conditional branch runs. Without a gate row the
    plain forward is used; with one, each branch goes through its own cache.
    """
    cond = Condition(config.train_step(t, schedule.T_train), class_id)

    def branch(c: Condition, slot: int) -> Tensor:
        if row is None:
            return forward_plain(model, x, c)
        return forward_cached(model, x, c, row, tau, caches[slot], mode)

    if row is not None and (caches is None or len(caches) < (2 if config.guided else 1)):
        raise ValueError("cached prediction needs one cache per guidance branch")

    eps_cond = branch(cond, 0)
    if not config.guided:
        return eps_cond
    eps_null = branch(cond.with_class(model.config.null_class), 1)
    return add(eps_null, scale(sub(eps_cond, eps_null), config.cfg_scale))


#######################################################
def sample(model: DiTModel, router: Optional[GateSource], schedule: NoiseSchedule,
           config: SamplerConfig, x_T, class_id: ClassIds,
           mode: CacheMode = CacheMode.HARD) -> Trajectory:
    """
    Generate x_0 from x_T.

    Args:
        model: noise predictor (weights are only read)
        router: Router / GateMatrix, or None for plain sampling
        schedule: training noise schedule
        config: sampler kind, T and guidance scale
        x_T: initial noise, shape (B, C, H, W)
        class_id: one label for the batch or one per element
        mode: caching mode; sampling normally uses HARD

    Returns:
        Trajectory with x_t and ε at every step plus block counters
    """
    gates = None
    if router is not None:
        gates = as_gate_matrix(router)
        if gates.N != model.n_blocks or gates.T != config.T:
            raise DimensionError("router does not fit model/sampler", (gates.T, gates.N),
                                 (config.T, model.n_blocks))
    caches = make_caches(model, config) if gates is not None else None
    x = as_tensor(x_T).data.copy()
    trajectory = Trajectory(config.T)

    with no_grad():
        for t in range(config.T, 0, -1):
            before = _counts(caches)
            row = gates.row(t).tolist() if gates is not None else None
            eps = predict_noise(model, Tensor(x), t, class_id, schedule, config,
                                row=row, tau=gates.tau if gates is not None else 0.0,
                                caches=caches, mode=mode)
            after = _counts(caches)
            if caches is None:
                metrics = {"blocks_computed": model.n_blocks * (2 if config.guided else 1),
                           "blocks_reused": 0}
            else:
                metrics = {"blocks_computed": after[0] - before[0], "blocks_reused": after[1] - before[1]}
            trajectory.records.append(StepRecord(t, x, eps.data, metrics))
            x = solver_step(schedule, config, x, t, eps).data

    trajectory.x0 = x
    debug_logger.trace(LogCategory.SAMPLER, "Sampled trajectory", {
        "T": config.T, "kind": config.kind, "cached": gates is not None,
        "blocks_computed": trajectory.blocks_computed, "blocks_reused": trajectory.blocks_reused})
    return trajectory


def _counts(caches: Optional[List[Cache]]):
    if caches is None:
        return (0, 0)
    return (sum(c.computed for c in caches), sum(c.reused for c in caches))
