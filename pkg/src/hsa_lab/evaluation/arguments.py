"""Utility to hold all arguments required by the evaluation, cost and inspect commands"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from upath import UPath

import hsa_lab.file_io as lab_io
from hsa_lab.model.config import ModelConfig
from hsa_lab.runtime_arguments import RuntimeArguments, parse_float_list, parse_int_list
from hsa_lab.train.phases import EvaluationSpec, RunConfig, load_run_config
from hsa_lab.train.resume_plan import find_checkpoints

RUN_CONFIG_FILE = "run_config.json"
EVAL_TASKS = ("sniah", "mqniah", "vartrack")


def resolve_checkpoint(checkpoint: str | Path | UPath) -> UPath:
    """A checkpoint file, or the latest checkpoint of a training run directory.

    Raises:
        FileNotFoundError: if neither exists
    """
    path = lab_io.get_upath(checkpoint)
    if path.is_file():
        return path
    if path.is_dir():
        found = find_checkpoints(path / "checkpoints") or find_checkpoints(path)
        if found:
            return found[-1][2]
    raise FileNotFoundError(f"no checkpoint found at {checkpoint}")


def find_run_config(checkpoint_path: UPath) -> RunConfig | None:
    """The run config saved next to a training run's checkpoints, if any."""
    for directory in (checkpoint_path.parent, checkpoint_path.parent.parent):
        candidate = directory / RUN_CONFIG_FILE
        if candidate.exists():
            return RunConfig.from_file(candidate)
    return None


@dataclass
class EvalArguments(RuntimeArguments):
    """Data class for holding evaluation arguments"""

    ## Input
    checkpoint: str | Path | UPath | None = None
    """checkpoint file, or a training run directory (its latest checkpoint is used)"""
    config: str | Path | UPath | dict | RunConfig | None = None
    """run config the checkpoint must match. Defaults to the run config saved with
    the training run, if any. Its ``evaluation`` section supplies defaults."""

    ## Grid
    task: str | None = None
    """sniah, mqniah or vartrack"""
    lengths: list[int] | str | None = None
    depths: list[float] | str | None = None
    samples_per_cell: int | None = None
    top_k: int | None = None
    """eval-time top-k; defaults to the checkpoint's"""
    eval_top_k: list[int] | str | None = None
    """additional top-k values to sweep, one grid each"""
    in_domain_length: int | None = None
    """training-context boundary for the out-of-domain mark"""
    max_length: int | None = None
    """cells longer than this are recorded as skipped"""
    task_options: dict = field(default_factory=dict)
    """passed to the probe generator (n_queries, n_kv, chain_length, ...)"""

    ## Perplexity
    ppl_text: str | Path | UPath | None = None
    """optional text file to score; its last ``last_n`` tokens are evaluated"""
    last_n: int = 512

    checkpoint_path: UPath | None = None
    """the resolved checkpoint file"""
    run_config: RunConfig | None = None

    def __post_init__(self):
        self._check_arguments()

    def _check_arguments(self):
        if not self.checkpoint:
            raise ValueError("checkpoint is required")
        self.checkpoint_path = resolve_checkpoint(self.checkpoint)
        if self.config is not None:
            self.run_config = load_run_config(self.config)
        else:
            self.run_config = find_run_config(self.checkpoint_path)
        defaults = self.run_config.evaluation if self.run_config else EvaluationSpec()
        if not self.output_artifact_name:
            stem = self.checkpoint_path.name.rsplit(".", 1)[0]
            self.output_artifact_name = f"eval_{stem}"

        self.task = self.task or defaults.task
        if self.task not in EVAL_TASKS:
            raise ValueError(f"task should be one of {', '.join(EVAL_TASKS)}")
        lengths = self.lengths if self.lengths is not None else defaults.lengths
        depths = self.depths if self.depths is not None else defaults.depths
        self.lengths = parse_int_list(lengths, "lengths")
        self.depths = parse_float_list(depths, "depths")
        self.samples_per_cell = self.samples_per_cell or defaults.samples_per_cell
        if self.samples_per_cell < 1:
            raise ValueError("samples_per_cell should be positive")
        if self.top_k is not None and self.top_k < 1:
            raise ValueError("top_k should be positive")
        if self.eval_top_k is None:
            self.eval_top_k = list(defaults.eval_top_k)
        elif self.eval_top_k == "":
            self.eval_top_k = []
        else:
            self.eval_top_k = parse_int_list(self.eval_top_k, "eval_top_k")
        if self.in_domain_length is None and self.run_config is not None:
            self.in_domain_length = self.run_config.in_domain_length
        if self.last_n < 1:
            raise ValueError("last_n should be positive")
        super()._check_arguments()

    @property
    def top_k_values(self) -> list[int | None]:
        """Every top-k to evaluate; None is the checkpoint's own."""
        values = [self.top_k]
        values.extend(value for value in self.eval_top_k if value != self.top_k)
        return values

    def provenance_dict(self) -> dict:
        return {
            "checkpoint": str(self.checkpoint_path),
            "task": self.task,
            "lengths": self.lengths,
            "depths": self.depths,
            "samples_per_cell": self.samples_per_cell,
            "top_k": self.top_k_values,
            "seed": self.seed,
            "task_options": self.task_options,
        }


@dataclass
class CostArguments(RuntimeArguments):
    """Data class for holding cost model arguments"""

    config: str | Path | UPath | dict | RunConfig | ModelConfig | None = None
    """run config (path, preset name or dictionary) or a model config"""
    lengths: list[int] | str | None = None
    """context lengths; defaults to powers of two from 2**10 to 2**24"""

    model_config: ModelConfig | None = None

    def __post_init__(self):
        self._check_arguments()

    def _check_arguments(self):
        if self.config is None:
            raise ValueError("config is required")
        if isinstance(self.config, ModelConfig):
            self.model_config = self.config
            name = "model"
        else:
            run_config = load_run_config(self.config)
            self.model_config = run_config.model
            name = run_config.name
        if not self.output_artifact_name:
            self.output_artifact_name = f"cost_{name}"
        if self.lengths is None:
            self.lengths = [2**power for power in range(10, 25)]
        self.lengths = parse_int_list(self.lengths, "lengths")
        super()._check_arguments()


@dataclass
class InspectArguments(RuntimeArguments):
    """Data class for holding checkpoint inspection arguments"""

    checkpoint: str | Path | UPath | None = None
    """checkpoint file, or a training run directory (its latest checkpoint is used)"""
    task: str = "sniah"
    """probe task for the retrieval statistics"""
    probe_length: int | None = None
    """defaults to four chunks past the sliding window"""
    n_probes: int = 4
    top_k: int | None = None

    checkpoint_path: UPath | None = None

    def __post_init__(self):
        self._check_arguments()

    def _check_arguments(self):
        if not self.checkpoint:
            raise ValueError("checkpoint is required")
        self.checkpoint_path = resolve_checkpoint(self.checkpoint)
        if not self.output_artifact_name:
            stem = self.checkpoint_path.name.rsplit(".", 1)[0]
            self.output_artifact_name = f"inspect_{stem}"
        if self.task not in EVAL_TASKS:
            raise ValueError(f"task should be one of {', '.join(EVAL_TASKS)}")
        if self.n_probes < 1:
            raise ValueError("n_probes should be positive")
        if self.probe_length is not None and self.probe_length < 1:
            raise ValueError("probe_length should be positive")
        super()._check_arguments()
