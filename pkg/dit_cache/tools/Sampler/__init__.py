"""
Sampler Package
Noise schedule, DDIM / Euler steps and cached generation
"""

from .Core import (
    NoiseSchedule, SamplerConfig, Trajectory, ddim_step, euler_step, make_schedule, sample, solver_step,
)

__all__ = [
    'NoiseSchedule',
    'SamplerConfig',
    'Trajectory',
    'ddim_step',
    'euler_step',
    'make_schedule',
    'sample',
    'solver_step',
]
