from .backbones import (
    BACKBONE_KINDS,
    Backbone,
    BackboneConfig,
    KvCache,
    attention_bias,
    backbone_forward,
    param_specs,
    transformer_step,
)
from .optim import Adam, Sgd, make_optimizer
from .tasks import (
    TASK_KINDS,
    Classification,
    TaskModel,
    TrainConfig,
    TrainingReport,
    attach_head,
    fit,
    generate,
    predict,
)

__all__ = [
    "BACKBONE_KINDS",
    "Backbone",
    "BackboneConfig",
    "KvCache",
    "attention_bias",
    "backbone_forward",
    "param_specs",
    "transformer_step",
    "Adam",
    "Sgd",
    "make_optimizer",
    "TASK_KINDS",
    "Classification",
    "TaskModel",
    "TrainConfig",
    "TrainingReport",
    "attach_head",
    "fit",
    "generate",
    "predict",
]
