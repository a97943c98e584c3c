"""Utility to hold all arguments required throughout training"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from upath import UPath

from hsa_lab.runtime_arguments import RuntimeArguments
from hsa_lab.train.phases import RunConfig, load_run_config


@dataclass
class TrainArguments(RuntimeArguments):
    """Data class for holding training arguments"""

    ## Input
    config: str | Path | UPath | dict | RunConfig | None = None
    """run config: a JSON file path, a preset name, a dictionary or a RunConfig"""
    run_config: RunConfig | None = None
    """the validated run config, constructed from ``config``"""

    ## Execution
    seed: int | None = None
    """overrides the run config's seed when given"""
    resume: bool = False
    """continue from the latest checkpoint in the run directory. A fresh directory
    has nothing to resume and is reported as an error."""
    max_steps: int | None = None
    """stop after this many optimizer steps in total across phases (for smoke
    runs and resume tests); the phase ladder continues on a later ``resume``"""

    def __post_init__(self):
        self._check_arguments()

    def _check_arguments(self):
        if self.config is None:
            raise ValueError("config is required")
        self.run_config = load_run_config(self.config)
        if not self.output_artifact_name:
            self.output_artifact_name = self.run_config.name
        if self.seed is None:
            self.seed = self.run_config.seed
        if self.max_steps is not None and self.max_steps < 0:
            raise ValueError("max_steps should be non-negative")
        super()._check_arguments()

    @property
    def checkpoint_dir(self) -> UPath:
        return self.run_path / "checkpoints"

    @property
    def metrics_file(self) -> UPath:
        return self.run_path / "metrics.jsonl"
