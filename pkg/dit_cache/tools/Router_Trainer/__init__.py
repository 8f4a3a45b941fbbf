"""
Router Trainer Package
Teacher pretraining, the image-error proxy and SDT / LTC router training
"""

from .Core import Objective, Paradigm, ProxyMetric, ProxyVector, TrainConfig, TrainingLog
from .Dataset import SyntheticDataset
from .LTC_Operations import ltc_train
from .Pretrain import PretrainOptions, denoising_loss, pretrain_teacher
from .Proxy import gen_proxy, proxy_metric_variant, proxy_trace
from .SDT_Operations import sdt_train
from .Train import train_router

__all__ = [
    'Objective',
    'Paradigm',
    'ProxyMetric',
    'ProxyVector',
    'TrainConfig',
    'TrainingLog',
    'SyntheticDataset',
    'ltc_train',
    'PretrainOptions',
    'denoising_loss',
    'pretrain_teacher',
    'gen_proxy',
    'proxy_metric_variant',
    'proxy_trace',
    'sdt_train',
    'train_router',
]
