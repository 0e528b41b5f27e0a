"""Joint progressive knowledge distillation and unsupervised domain
adaptation: a big model aligns feature distributions across a domain shift
while a compact student is progressively distilled from it."""

from .autodiff import Graph, Tensor, backward
from .data import DomainPair, batches, gen_blob_shift, gen_two_moons_shift
from .errors import (ConfigError, KdudaError, NumericalAbort, ParameterError,
                     ShapeError)
from .harness import ExperimentConfig, ScenarioResult, load_config, run_experiment
from .losses import (BetaSchedule, KernelConfig, LossReport, LossWeights,
                     beta_at, cross_entropy, distill_kl, gamma_at, mmd_squared,
                     source_kd_loss, target_kd_loss, teacher_da_loss, total_loss)
from .models import Model, ModelSpec, build, count_complexity, load_model, save_model
from .trainer import (OptimizerState, TrainConfig, TrainLog, evaluate, sgd_step,
                      train_joint, train_kd_then_uda, train_source_only,
                      train_uda_only, train_uda_then_kd)

__version__ = "0.1.0"
