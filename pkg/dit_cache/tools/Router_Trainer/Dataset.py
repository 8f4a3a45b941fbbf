"""
Synthetic class-conditional images for teacher pretraining.

Class c is a Gaussian blob whose centre sits on a ring around the image
centre at angle 2πc / n_classes; channel k is scaled by a per-class colour.
Pixels lie in [-1, 1] with a -1 background.
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from dit_cache.tools.DiT_Model.Core import DiTConfig


@dataclass
class SyntheticDataset:
    n_classes: int = 4
    image_size: int = 8
    channels: int = 1
    seed: int = 0
    jitter: float = 0.5

    @classmethod
    def for_model(cls, config: DiTConfig, seed: int = 0) -> "SyntheticDataset":
        return cls(config.n_classes, config.image_size, config.channels, seed)

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)
        angles = 2.0 * math.pi * np.arange(self.n_classes) / self.n_classes
        radius = self.image_size / 4.0
        mid = (self.image_size - 1) / 2.0
        self.centres = np.stack([mid + radius * np.sin(angles), mid + radius * np.cos(angles)], axis=1)
        colours = np.random.default_rng(12345).uniform(0.5, 1.0, size=(self.n_classes, self.channels))
        colours[:, 0] = 1.0
        self.colours = colours

    def render(self, labels: np.ndarray, offsets: np.ndarray, widths: np.ndarray) -> np.ndarray:
        """Images for the given labels, centre offsets (B, 2) and blob widths (B,)"""
        coords = np.arange(self.image_size, dtype=np.float64)
        ys, xs = np.meshgrid(coords, coords, indexing="ij")
        centres = self.centres[labels] + offsets
        dy = ys[None] - centres[:, 0, None, None]
        dx = xs[None] - centres[:, 1, None, None]
        blob = np.exp(-(dy ** 2 + dx ** 2) / (2.0 * widths[:, None, None] ** 2))
        images = blob[:, None] * self.colours[labels][:, :, None, None]
        return 2.0 * images - 1.0

    def sample(self, batch: int, rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, np.ndarray]:
        """(images (B, C, H, W), labels (B,)) drawn from this dataset's generator unless rng is given"""
        rng = rng or self.rng
        labels = rng.integers(0, self.n_classes, size=batch)
        offsets = rng.uniform(-self.jitter, self.jitter, size=(batch, 2))
        widths = rng.uniform(0.8, 1.4, size=batch) * self.image_size / 8.0
        return self.render(labels, offsets, widths), labels
