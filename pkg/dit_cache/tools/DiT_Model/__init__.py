"""
DiT Model Package
Toy diffusion transformer, its checkpoint container and FLOPs table.
"""

from .Core import Condition, DiTConfig, DiTModel, forward_cached, forward_plain
from .Checkpoint import load_checkpoint, save_checkpoint
from .Flops import block_flops

__all__ = [
    'Condition',
    'DiTConfig',
    'DiTModel',
    'forward_cached',
    'forward_plain',
    'load_checkpoint',
    'save_checkpoint',
    'block_flops',
]
