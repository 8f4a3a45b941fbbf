"""
Handcrafted caching schedules materialised as routers.

Cells are set to logits of ±HEURISTIC_MAGNITUDE so every gate sits far from τ.
The pre-fill row t = T is never cached.
"""

from dataclasses import dataclass
from enum import Enum
from typing import List, Union

import numpy as np

from dit_cache.tools.Feature_Cache.Core import DEFAULT_TAU, Router

HEURISTIC_MAGNITUDE = 20.0


class HeuristicKind(str, Enum):
    FORA_UNIFORM = "fora_uniform"   # full compute every k-th step, reuse otherwise
    ALTERNATING = "alternating"     # checkerboard over (t, i)
    RANDOM = "random"               # uniform random cells at a CUR target


@dataclass(frozen=True)
class HeuristicSchedule:
    kind: HeuristicKind
    k: int = 2
    target: float = 0.5
    seed: int = 0


def fora_mask(T: int, N: int, k: int) -> np.ndarray:
    if k < 1:
        raise ValueError(f"FORA interval k must be ≥ 1, got {k}")
    t = np.arange(1, T + 1)
    cached_rows = (T - t) % k != 0
    return np.repeat(cached_rows[:, None], N, axis=1)


def alternating_mask(T: int, N: int) -> np.ndarray:
    t = np.arange(1, T + 1)[:, None]
    i = np.arange(N)[None, :]
    mask = (T - t + i) % 2 == 1
    mask[-1] = False
    return mask


def random_mask(T: int, N: int, cells: int, rng: np.random.Generator) -> np.ndarray:
    """Exactly `cells` cached cells drawn uniformly from rows 1..T-1"""
    available = (T - 1) * N
    cells = int(np.clip(cells, 0, available))
    flat = np.zeros(available, dtype=bool)
    flat[rng.choice(available, size=cells, replace=False)] = True
    return np.vstack([flat.reshape(T - 1, N), np.zeros((1, N), dtype=bool)])


def make_heuristic(schedule: Union[HeuristicSchedule, str], T: int, N: int, tau: float = DEFAULT_TAU) -> Router:
    if isinstance(schedule, str):
        schedule = HeuristicSchedule(HeuristicKind(schedule))
    kind = HeuristicKind(schedule.kind)
    if kind is HeuristicKind.FORA_UNIFORM:
        mask = fora_mask(T, N, schedule.k)
    elif kind is HeuristicKind.ALTERNATING:
        mask = alternating_mask(T, N)
    else:
        if not 0.0 <= schedule.target < 1.0:
            raise ValueError(f"CUR target must lie in [0, 1), got {schedule.target}")
        cells = int(round(schedule.target * T * N))
        mask = random_mask(T, N, cells, np.random.default_rng(schedule.seed))
    return Router.from_cached_mask(mask, tau, HEURISTIC_MAGNITUDE)


def random_baseline(T: int, N: int, cells: int, n_routers: int, seed: int = 0, spread: int = 2,
                    tau: float = DEFAULT_TAU) -> List[Router]:
    """Random routers whose cached-cell count lies within `spread` cells of `cells`"""
    rng = np.random.default_rng(seed)
    routers = []
    for _ in range(n_routers):
        count = cells + int(rng.integers(-spread, spread + 1))
        routers.append(Router.from_cached_mask(random_mask(T, N, count, rng), tau, HEURISTIC_MAGNITUDE))
    return routers
