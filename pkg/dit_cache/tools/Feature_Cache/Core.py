"""
Core components of block-level feature caching.

Router      T×N learnable logits; gate r[t, i] = sigmoid(logit) and row T is
            always all-ones so the first denoising step fills the cache.
GateMatrix  materialised T×N gate values plus threshold; what generation reads.
Cache       N slots holding the latest output of every cacheable block.

Timesteps are 1-based (t = T is the first denoising step); row t of every
matrix lives at array index t - 1.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Union

import numpy as np

from dit_cache.common.autodiff import Tensor, detach, index, parameter, sigmoid
from dit_cache.common.errors import CacheError, DimensionError
from dit_cache.debug_system import get_debug_logger, LogCategory

# Module-level debug logger
debug_logger = get_debug_logger()

# Constants
DEFAULT_TAU = 0.1
DEFAULT_INIT_MEAN = 1.1
DEFAULT_INIT_STD = 0.1


class CacheMode(str, Enum):
    """How forward_cached combines fresh and cached block outputs"""
    HARD = "hard"   # o = b if r > τ else c
    SOFT = "soft"   # o = r·b + (1 - r)·c


def _check_tau(tau: float):
    if not 0.0 <= tau < 1.0:
        raise ValueError(f"threshold tau must lie in [0, 1), got {tau}")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -x))


#######################################################
@dataclass(frozen=True)
class GateMatrix:
    """Materialised gate values r[t, i] for t = 1..T (row T forced to ones)"""
    values: np.ndarray
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise DimensionError("gate matrix must be a non-empty T×N array", values.shape)
        if np.any(values <= 0.0) or np.any(values > 1.0):
            raise ValueError("gate values must lie in (0, 1]")
        _check_tau(self.tau)
        values[-1, :] = 1.0
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.values.shape[1]

    def row(self, t: int) -> np.ndarray:
        _check_step(t, self.T)
        return self.values[t - 1]

    def cached_mask(self) -> np.ndarray:
        """Boolean T×N: True where the block output is loaded from the cache"""
        return self.values <= self.tau

    def row_fully_computed(self, t: int) -> bool:
        return bool(np.all(self.row(t) > self.tau))


def _check_step(t: int, T: int):
    if not 1 <= t <= T:
        raise IndexError(f"timestep {t} outside [1, {T}]")


#######################################################
class Router:
    """Learnable caching policy: T×N unconstrained logits and a threshold"""

    def __init__(self, logits: Union[Tensor, np.ndarray], tau: float = DEFAULT_TAU):
        logits = logits if isinstance(logits, Tensor) else parameter(logits)
        if logits.ndim != 2:
            raise DimensionError("router logits must be T×N", logits.shape)
        _check_tau(tau)
        self.logits = logits
        self.tau = float(tau)

    @classmethod
    def initialize(cls, T: int, N: int, tau: float = DEFAULT_TAU, mean: float = DEFAULT_INIT_MEAN,
                   std: float = DEFAULT_INIT_STD, seed: int = 0) -> "Router":
        """Logits drawn from N(mean, std²); the default mean puts gates near 0.75"""
        if T < 1 or N < 1:
            raise ValueError(f"router needs T ≥ 1 and N ≥ 1, got T={T}, N={N}")
        rng = np.random.default_rng(seed)
        return cls(parameter(rng.normal(mean, std, size=(T, N))), tau)

    @classmethod
    def from_cached_mask(cls, cached: np.ndarray, tau: float = DEFAULT_TAU,
                         magnitude: float = 20.0) -> "Router":
        """Router whose gates sit far from τ: -magnitude where cached, +magnitude elsewhere"""
        cached = np.asarray(cached, dtype=bool)
        logits = np.where(cached, -magnitude, magnitude).astype(np.float64)
        return cls(parameter(logits), tau)

    @property
    def T(self) -> int:
        return self.logits.shape[0]

    @property
    def N(self) -> int:
        return self.logits.shape[1]

    def __repr__(self):
        return f"Router(T={self.T}, N={self.N}, tau={self.tau}, cur={cur(self):.4f})"

    def gate(self, t: int, i: int) -> float:
        return gate(self, t, i)

    def gates(self) -> GateMatrix:
        values = _sigmoid(self.logits.data)
        # Saturated logits would round to exactly 0
        values = np.clip(values, np.finfo(np.float64).tiny, 1.0)
        return GateMatrix(values, self.tau)

    def row_gates(self, t: int) -> Tensor:
        """Differentiable gate row for t < T: sigmoid(logits[t - 1])"""
        _check_step(t, self.T)
        if t == self.T:
            raise ValueError("row T is the pre-fill row and is never trained")
        return sigmoid(index(self.logits, t - 1))


GateSource = Union[Router, GateMatrix]


def as_gate_matrix(source: GateSource) -> GateMatrix:
    return source.gates() if isinstance(source, Router) else source


#######################################################
# Operations

def gate(router: Router, t: int, i: int) -> float:
    """
    Gate value r[t, i].

    Returns sigmoid(logit) except for the pre-fill row t = T, which is 1.0.
    """
    _check_step(t, router.T)
    if not 0 <= i < router.N:
        raise IndexError(f"block index {i} outside [0, {router.N})")
    if t == router.T:
        return 1.0
    return float(_sigmoid(router.logits.data[t - 1, i]))


def mask_matrix(router: GateSource, t: int) -> np.ndarray:
    """The multiplicative mask M(t): 1 everywhere except row t, which holds 1/r"""
    gates = as_gate_matrix(router)
    _check_step(t, gates.T)
    mask = np.ones_like(gates.values)
    mask[t - 1] = 1.0 / gates.values[t - 1]
    return mask


def apply_mask(router: GateSource, t: int) -> GateMatrix:
    """
    Router ⊙ M(t): every block is computed at step t, other rows untouched.

    Row t is written as exact ones (r · 1/r) so rounding cannot leave an entry
    a hair below 1.
    """
    gates = as_gate_matrix(router)
    _check_step(t, gates.T)
    values = np.array(gates.values)
    values[t - 1] = 1.0
    return GateMatrix(values, gates.tau)


def cur(router: GateSource) -> float:
    """Cache usage ratio: cached (t, i) cells over N·T, pre-fill row included"""
    gates = as_gate_matrix(router)
    return float(np.count_nonzero(gates.cached_mask())) / float(gates.T * gates.N)


def theoretical_speedup(router: GateSource, cost: Sequence[float]) -> float:
    """
    FLOPs without caching over FLOPs executed under the router.

    Args:
        router: Router or GateMatrix
        cost: per-block FLOPs, length N, all positive
    """
    gates = as_gate_matrix(router)
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size == 0:
        raise ValueError("cost vector is empty")
    if cost.shape != (gates.N,):
        raise DimensionError("cost vector length must equal N", cost.shape, (gates.N,))
    if np.any(cost <= 0):
        raise ValueError("block costs must be positive")
    computed = ~gates.cached_mask()
    executed = float((computed * cost[None, :]).sum())
    return gates.T * float(cost.sum()) / executed


#######################################################
class Cache:
    """N slots with the most recent output of each cacheable block (pre-residual)"""

    def __init__(self, n_blocks: int):
        if n_blocks < 1:
            raise ValueError(f"cache needs at least one slot, got {n_blocks}")
        self.slots: List[Optional[Tensor]] = [None] * n_blocks
        self.computed = 0
        self.reused = 0

    def __len__(self):
        return len(self.slots)

    @property
    def fill_mask(self) -> List[bool]:
        return [slot is not None for slot in self.slots]

    @property
    def is_full(self) -> bool:
        return all(self.fill_mask)

    def read(self, i: int, batch: Optional[int] = None) -> Tensor:
        slot = self.slots[i]
        if slot is None:
            raise CacheError(f"cache slot {i} read before it was filled")
        if batch is not None and slot.shape[0] != batch:
            raise CacheError(f"cache slot {i} holds batch {slot.shape[0]}, requested {batch}")
        return slot

    def write(self, i: int, value: Tensor):
        self.slots[i] = detach(value)

    def copy(self) -> "Cache":
        other = Cache(len(self.slots))
        other.slots = list(self.slots)
        other.computed, other.reused = self.computed, self.reused
        return other
