"""Distil a vision teacher into a head over frozen encoder features and fuse it with VLM answers."""

from .core import BINARY, EKMAN6, MIKELS8, LabelSpace, argmax_label, one_hot, softened_softmax
from .distillation import (
    DistillHead,
    DistillHeadConfig,
    DistillHyperparams,
    ce_loss,
    head_forward,
    kd_loss,
    loss_gradients,
    param_count,
    student_distribution,
    total_loss,
    train_distill_head,
)
from .evaluation import accuracy, complementarity, oracle_upper_bound
from .gating import GateParams, GateVariant, fuse_predict, gate_forward, gate_param_count, train_gate

__version__ = "0.1.0"
