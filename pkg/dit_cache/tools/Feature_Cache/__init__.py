"""
Feature Cache Package
Router, gate matrices, the block cache and router files
"""

from .Core import (
    Cache, CacheMode, GateMatrix, Router, apply_mask, cur, gate, mask_matrix, theoretical_speedup,
)
from .Router_File import load_router, save_router

__all__ = [
    'Cache',
    'CacheMode',
    'GateMatrix',
    'Router',
    'apply_mask',
    'cur',
    'gate',
    'mask_matrix',
    'theoretical_speedup',
    'load_router',
    'save_router',
]
