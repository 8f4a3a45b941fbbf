"""
Teacher pretraining: ε-prediction on synthetic images.

Loss is the mean squared error between the true and predicted noise at a
training step drawn uniformly from [1, T_train]. Labels are replaced by the
null class with probability cond_dropout so the teacher supports
classifier-free guidance.
"""

from dataclasses import asdict, dataclass
from typing import Dict, List, Optional

import numpy as np
from tqdm import tqdm

from dit_cache.common.autodiff import Tensor, backward, frobenius_sq, no_grad, scale
from dit_cache.common.errors import NumericError
from dit_cache.common.optimizers import AdamW
from dit_cache.debug_system import get_debug_logger, LogCategory
from dit_cache.tools.DiT_Model.Core import Condition, DiTConfig, DiTModel, forward_plain
from dit_cache.tools.Sampler.Core import NoiseSchedule
from .Dataset import SyntheticDataset

# Module-level debug logger
debug_logger = get_debug_logger()


@dataclass
class PretrainOptions:
    steps: int = 2000
    lr: float = 3e-3
    batch: int = 16
    cond_dropout: float = 0.1
    weight_decay: float = 0.0
    log_every: int = 100
    max_held_out_loss: float = 1.0   # per-pixel noise MSE; a zero predictor scores 1

    def violations(self) -> List[str]:
        problems = []
        if self.steps < 0:
            problems.append(f"pretrain.steps must be ≥ 0 (got {self.steps})")
        if self.lr <= 0:
            problems.append(f"pretrain.lr must be > 0 (got {self.lr})")
        if self.batch < 1:
            problems.append(f"pretrain.batch must be ≥ 1 (got {self.batch})")
        if not 0.0 <= self.cond_dropout < 1.0:
            problems.append(f"pretrain.cond_dropout must lie in [0, 1) (got {self.cond_dropout})")
        if self.weight_decay < 0:
            problems.append(f"pretrain.weight_decay must be ≥ 0 (got {self.weight_decay})")
        if self.log_every < 1:
            problems.append(f"pretrain.log_every must be ≥ 1 (got {self.log_every})")
        if self.max_held_out_loss <= 0:
            problems.append(f"pretrain.max_held_out_loss must be > 0 (got {self.max_held_out_loss})")
        return problems

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


def _noise_loss(model: DiTModel, images: np.ndarray, labels: np.ndarray, ks: np.ndarray,
                noise: np.ndarray, schedule: NoiseSchedule) -> Tensor:
    """Sum of squared noise-prediction errors over the batch, one timestep per element"""
    x_t = schedule.add_noise(images, noise, ks)
    cond = Condition(tuple(int(k) for k in ks), tuple(int(c) for c in labels))
    eps = forward_plain(model, Tensor(x_t), cond)
    return frobenius_sq(eps, Tensor(noise))


def denoising_loss(model: DiTModel, dataset: SyntheticDataset, schedule: NoiseSchedule,
                   n_samples: int = 64, seed: int = 1) -> float:
    """Mean per-pixel noise-prediction error on held-out samples"""
    rng = np.random.default_rng(seed)
    images, labels = dataset.sample(n_samples, rng)
    ks = rng.integers(1, schedule.T_train + 1, size=n_samples)
    noise = rng.standard_normal(images.shape)
    with no_grad():
        loss = _noise_loss(model, images, labels, ks, noise, schedule)
    return loss.item() / images.size


def check_held_out_loss(loss: float, options: PretrainOptions):
    """Raise NumericError unless the held-out loss is finite and below the configured ceiling"""
    if not np.isfinite(loss) or loss >= options.max_held_out_loss:
        raise NumericError("held-out denoising loss is not below pretrain.max_held_out_loss", {
            "held_out_loss": loss, "max_held_out_loss": options.max_held_out_loss, "steps": options.steps})


def pretrain_teacher(config: DiTConfig, dataset: SyntheticDataset, schedule: NoiseSchedule,
                     options: Optional[PretrainOptions] = None, progress: bool = True) -> DiTModel:
    """
    Train a noise predictor from scratch.

    Args:
        config: model shape and initialisation seed
        dataset: deterministic synthetic image source
        schedule: training noise schedule
        options: steps, learning rate, batch size, label dropout
        progress: show a tqdm progress bar

    Returns:
        The trained model; with 0 steps the freshly initialised one
    """
    options = options or PretrainOptions()
    model = DiTModel.initialize(config)
    if options.steps == 0:
        return model

    rng = np.random.default_rng(config.seed + 1)
    data_rng = np.random.default_rng(dataset.seed)
    optimizer = AdamW(model.parameters(), lr=options.lr, weight_decay=options.weight_decay)
    timer = debug_logger.start_performance_timer("pretrain_teacher")

    for step in tqdm(range(options.steps), desc="Pretrain", disable=not progress):
        images, labels = dataset.sample(options.batch, data_rng)
        drop = rng.random(options.batch) < options.cond_dropout
        labels = np.where(drop, config.null_class, labels)
        ks = rng.integers(1, schedule.T_train + 1, size=options.batch)
        noise = rng.standard_normal(images.shape)

        loss = scale(_noise_loss(model, images, labels, ks, noise, schedule), 1.0 / images.size)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericError("pretraining loss diverged", {"step": step, "loss": value})
        backward(loss)
        optimizer.step()
        optimizer.zero_grad()

        if step % options.log_every == 0 or step == options.steps - 1:
            debug_logger.debug(LogCategory.TRAINING, "Pretrain step", {"step": step, "loss": value})

    debug_logger.end_performance_timer(timer, {"steps": options.steps})
    debug_logger.log_memory_usage("pretrain_teacher")
    return model
