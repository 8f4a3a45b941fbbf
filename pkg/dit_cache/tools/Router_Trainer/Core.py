"""
Core types of router training: configuration, the image-error proxy vector
and the per-step training log.
"""

from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from dit_cache.common.run_directory import csv_text
from dit_cache.tools.Feature_Cache.Core import DEFAULT_INIT_MEAN, DEFAULT_INIT_STD, DEFAULT_TAU


class Objective(str, Enum):
    IEPO = "iepo"   # λ_t · ‖ε' - ε‖² + β Σ r, λ refreshed every C iterations
    LTC = "ltc"     # λ ≡ 1


class Paradigm(str, Enum):
    SDT = "sdt"     # walk the whole denoising trajectory
    LTC = "ltc"     # one freshly pre-filled step per iteration


class ProxyMetric(str, Enum):
    FRO = "fro"     # ‖x_0 - x_0^(t)‖²_F
    L1 = "l1"       # Σ|x_0 - x_0^(t)|
    KL = "kl"       # D_KL of min-shifted, normalised images

    @classmethod
    def parse(cls, value) -> "ProxyMetric":
        aliases = {"frobenius_sq": cls.FRO, "sum_abs": cls.L1}
        if isinstance(value, str) and value in aliases:
            return aliases[value]
        return cls(value)


class LtcSampling(str, Enum):
    EVEN = "even"
    ANY = "any"


#######################################################
@dataclass
class TrainConfig:
    """Router training hyperparameters"""
    iters: int = 2000
    beta: float = 0.05
    interval_c: int = 512
    lr: float = 0.01
    betas: Tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.0
    objective: str = Objective.IEPO.value
    paradigm: str = Paradigm.SDT.value
    teacher_forcing: bool = False
    proxy_metric: str = ProxyMetric.FRO.value
    ltc_sampling: str = LtcSampling.EVEN.value
    sdt_rows: str = "all"
    batch: int = 8
    tau: float = DEFAULT_TAU
    init_mean: float = DEFAULT_INIT_MEAN
    init_std: float = DEFAULT_INIT_STD
    checkpoint_every: int = 0   # training-loop iterations between router snapshots; 0 disables
    seed: int = 0

    def violations(self, T: int) -> List[str]:
        problems = []
        if self.iters < 0:
            problems.append(f"train.iters must be ≥ 0 (got {self.iters})")
        if self.interval_c < 1 or self.interval_c % T:
            problems.append(f"train.interval_c ({self.interval_c}) must be a positive multiple of sampler.T ({T})")
        if self.iters % T:
            problems.append(f"train.iters ({self.iters}) must be a multiple of sampler.T ({T})")
        if self.beta < 0:
            problems.append(f"train.beta must be ≥ 0 (got {self.beta})")
        if self.lr <= 0:
            problems.append(f"train.lr must be > 0 (got {self.lr})")
        if len(self.betas) != 2 or not all(0.0 <= b < 1.0 for b in self.betas):
            problems.append(f"train.betas must be two values in [0, 1) (got {self.betas})")
        if self.weight_decay < 0:
            problems.append(f"train.weight_decay must be ≥ 0 (got {self.weight_decay})")
        for key, enum in (("objective", Objective), ("paradigm", Paradigm), ("ltc_sampling", LtcSampling)):
            if getattr(self, key) not in {e.value for e in enum}:
                problems.append(f"train.{key} must be one of {', '.join(e.value for e in enum)} "
                                f"(got {getattr(self, key)!r})")
        try:
            ProxyMetric.parse(self.proxy_metric)
        except ValueError:
            problems.append(f"train.proxy_metric must be one of fro, l1, kl (got {self.proxy_metric!r})")
        if self.sdt_rows not in ("all", "odd"):
            problems.append(f"train.sdt_rows must be all or odd (got {self.sdt_rows!r})")
        if self.paradigm == Paradigm.LTC.value and self.ltc_sampling == LtcSampling.EVEN.value and (T < 2 or T % 2):
            problems.append(f"train.ltc_sampling = even needs an even sampler.T ≥ 2 (got {T})")
        if self.checkpoint_every < 0:
            problems.append(f"train.checkpoint_every must be ≥ 0 (got {self.checkpoint_every})")
        if self.batch < 1:
            problems.append(f"train.batch must be ≥ 1 (got {self.batch})")
        if not 0.0 <= self.tau < 1.0:
            problems.append(f"train.tau must lie in [0, 1) (got {self.tau})")
        if self.init_std < 0:
            problems.append(f"train.init_std must be ≥ 0 (got {self.init_std})")
        return problems

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)

    def refresh_period(self, T: int) -> int:
        """Outer SDT iterations between proxy refreshes (C / T)"""
        return max(self.interval_c // T, 1)

    def class_ids(self, iteration: int, n_classes: int) -> np.ndarray:
        """Deterministic condition stream: class labels cycle over the batch and iterations"""
        return (np.arange(self.batch) + iteration * self.batch) % n_classes


@dataclass
class ProxyVector:
    """λ^(t) for t = 1..T (index t - 1); λ_T = 0"""
    lam: np.ndarray
    refreshed_at: int = 0

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=np.float64)
        if np.any(self.lam < 0):
            raise ValueError("proxy values must be non-negative")

    @property
    def T(self) -> int:
        return self.lam.shape[0]

    def at(self, t: int) -> float:
        return float(self.lam[t - 1])

    @classmethod
    def ones(cls, T: int) -> "ProxyVector":
        lam = np.ones(T)
        lam[-1] = 0.0
        return cls(lam)


#######################################################
LOG_HEADER = ("iter", "t", "l_mse", "lambda", "reg", "cur")


@dataclass
class TrainingLog:
    """Append-only per-step rows plus every proxy refresh"""
    rows: List[Tuple[int, int, float, float, float, float]] = field(default_factory=list)
    proxies: List[ProxyVector] = field(default_factory=list)

    def append(self, iteration: int, t: int, l_mse: float, lam: float, reg: float, cur: float):
        self.rows.append((int(iteration), int(t), float(l_mse), float(lam), float(reg), float(cur)))

    def column(self, name: str) -> np.ndarray:
        return np.array([row[LOG_HEADER.index(name)] for row in self.rows])

    def to_csv(self) -> str:
        return csv_text(LOG_HEADER, self.rows)

    @property
    def refresh_count(self) -> int:
        return len(self.proxies)
