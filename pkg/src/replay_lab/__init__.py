"""Continual-learning laboratory built around generative replay.

A single variational autoencoder with a classifier head is trained through a
sequence of class-incremental tasks. Replay of earlier tasks comes from the
model itself: latents drawn from a per-class mixture prior are decoded to a
hidden level above a frozen feature block and distilled against the previous
model's soft predictions, optionally with per-task context gates and a
path-integral weight-importance penalty. The package includes the training
loop, an ablation-matrix CLI, and the metric battery (retention, forgetting,
importance-sampled likelihoods, silhouettes, 2D projections) used to compare
the ablation variants.
"""

from .autodiff import Tape, Tensor, backward
from .checkpoint import inspect_checkpoint, load_checkpoint, save_checkpoint
from .data import (Dataset, TaskSplit, load_cifar100_binary, load_idx,
                   make_synthetic_blobs, save_idx, split_into_tasks)
from .errors import (ConfigError, ContractError, DataError, DomainError,
                     ExportError, FormatError, ReplayContractError,
                     ReplayLabError, ShapeError)
from .losses import (LossBreakdown, SIState, classification_loss,
                     distillation_loss, init_si_state, kl_mc_conditional, kl_mc_gmm,
                     kl_standard_normal, reconstruction_loss, si_accumulate,
                     si_consolidate, si_penalty)
from .metrics import (AccuracyMatrix, DistributionSummary, EmbeddingDump,
                      ProjectionResult, estimate_log_likelihood,
                      evaluate_accuracy, extract_embeddings, forgetting_score,
                      pca_project_2d, retention_ratio, silhouette_score)
from .model import (ContextGateSet, GaussianMixturePrior, LatentGaussian,
                    NetworkConfig, ReplayModel, build_model, decode, encode,
                    make_context_gates, pretrain_perceptual_block,
                    reparameterize, sample_conditional)
from .optim import OptimizerState, init_optimizer, optimizer_step
from .trainer import (PAPER_VARIANTS, AblationFlags, ReplayBatch, RunResult,
                      TrainerConfig, generate_replay_batch, mix_losses,
                      run_experiment, run_plain_finetuning, train_task)

__version__ = "0.1.0"

__all__ = [
    "AblationFlags", "AccuracyMatrix", "ConfigError", "ContextGateSet",
    "ContractError", "DataError", "Dataset", "DistributionSummary",
    "DomainError", "EmbeddingDump", "ExportError", "FormatError",
    "GaussianMixturePrior", "LatentGaussian", "LossBreakdown",
    "NetworkConfig", "OptimizerState", "PAPER_VARIANTS", "ProjectionResult",
    "ReplayBatch", "ReplayContractError", "ReplayLabError", "ReplayModel",
    "RunResult", "SIState", "ShapeError", "Tape", "TaskSplit", "Tensor",
    "TrainerConfig", "backward", "build_model", "classification_loss",
    "decode", "distillation_loss", "encode", "estimate_log_likelihood",
    "evaluate_accuracy", "extract_embeddings", "forgetting_score",
    "generate_replay_batch", "init_optimizer", "init_si_state",
    "inspect_checkpoint", "kl_mc_conditional", "kl_mc_gmm", "kl_standard_normal",
    "load_checkpoint", "load_cifar100_binary", "load_idx",
    "make_context_gates", "make_synthetic_blobs", "mix_losses",
    "optimizer_step", "pca_project_2d", "pretrain_perceptual_block",
    "reconstruction_loss", "reparameterize", "retention_ratio",
    "run_experiment", "run_plain_finetuning", "sample_conditional",
    "save_checkpoint", "save_idx", "si_accumulate", "si_consolidate",
    "si_penalty", "silhouette_score", "split_into_tasks", "train_task",
]
