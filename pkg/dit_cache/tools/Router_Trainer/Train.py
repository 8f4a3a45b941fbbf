"""Paradigm dispatch for router training."""

from typing import Optional

from dit_cache.common.errors import ConfigError
from dit_cache.common.run_directory import RunDirectory
from dit_cache.tools.DiT_Model.Core import DiTModel
from dit_cache.tools.Feature_Cache.Core import Router
from dit_cache.tools.Sampler.Core import NoiseSchedule, SamplerConfig
from .Core import Paradigm, TrainConfig, TrainingLog
from .Dataset import SyntheticDataset
from .LTC_Operations import ltc_train
from .SDT_Operations import sdt_train


def train_router(teacher: DiTModel, config: TrainConfig, sampler_config: SamplerConfig,
                 schedule: NoiseSchedule, dataset: Optional[SyntheticDataset] = None,
                 log: Optional[TrainingLog] = None, run_dir: Optional[RunDirectory] = None,
                 progress: bool = True) -> Router:
    problems = config.violations(sampler_config.T) + sampler_config.violations()
    if problems:
        raise ConfigError(problems)
    if config.paradigm == Paradigm.LTC.value:
        dataset = dataset or SyntheticDataset.for_model(teacher.config, config.seed)
        return ltc_train(teacher, config, sampler_config, schedule, dataset, log=log,
                         run_dir=run_dir, progress=progress)
    return sdt_train(teacher, config, sampler_config, schedule, log=log, run_dir=run_dir, progress=progress)
