"""Per-block floating-point operation counts of the toy DiT (multiply-add = 2 FLOPs)."""

from typing import List

from .Core import DiTConfig, MLP_RATIO


def attention_flops(config: DiTConfig) -> float:
    n, d = config.n_tokens, config.d_model
    projections = 2 * n * d * (3 * d) + 2 * n * d * d
    contractions = 2 * (2 * n * n * d)
    softmax = 3 * config.n_heads * n * n
    return float(projections + contractions + softmax)


def ffn_flops(config: DiTConfig) -> float:
    n, d = config.n_tokens, config.d_model
    hidden = MLP_RATIO * d
    return float(2 * n * d * hidden * 2 + 8 * n * hidden)


def block_flops(config: DiTConfig) -> List[float]:
    """FLOPs of b_0 … b_{N-1} for one batch element"""
    return [attention_flops(config) if i % 2 == 0 else ffn_flops(config)
            for i in range(config.n_blocks)]
