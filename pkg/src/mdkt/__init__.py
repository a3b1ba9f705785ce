"""Mutual teacher/student distillation for image-to-video retrieval on a numpy autodiff core."""

from .autodiff import Tensor, backward, no_grad
from .data import BatchSpec, ClipSample, DatasetConfig, generate, sample_pk_batch, subset_views
from .evaluation import EvalProtocol, cmc, evaluate, mean_average_precision, rank
from .gradcheck import grad_check
from .losses import (LossConfig, NetworkOutput, batch_hard_triplets, ce_loss, kd_directed, mutual_kd,
                     mutual_tcl, pd_loss, total_objective, triplet_loss, triplet_probability)
from .model import EmbeddingNet, ModelConfig
from .trainer import TrainConfig, distill, train_teacher

__version__ = "0.1.0"
