"""Phase-ladder training: run configs, AdamW, the training step and resumable runs."""

from .arguments import TrainArguments
from .optimizer import AdamW, clip_grad_norm, global_grad_norm, learning_rate
from .phases import EvaluationSpec, PhaseSpec, RunConfig, load_run_config, preset_names
from .run_train import PhaseResult, detect_warmup_done, run_phase
from .step import NonFiniteLossError, StepResult, train_step
