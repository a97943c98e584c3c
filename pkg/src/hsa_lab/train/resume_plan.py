"""Resume plan for training: finished phases are marker files, progress lives in checkpoints."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from upath import UPath

import hsa_lab.file_io as lab_io
from hsa_lab.model.checkpoint import read_header
from hsa_lab.pipeline_resume_plan import PipelineResumePlan
from hsa_lab.train.arguments import TrainArguments

CHECKPOINT_PATTERN = re.compile(r"phase(\d+)_(.+)_step(\d+)\.ckpt")


def checkpoint_name(phase_index: int, phase_name: str, step: int) -> str:
    """File name of the checkpoint after ``step`` completed steps of a phase.

    >>> checkpoint_name(0, "warmup", 250)
    'phase00_warmup_step000250.ckpt'
    """
    return f"phase{phase_index:02d}_{phase_name}_step{step:06d}.ckpt"


def find_checkpoints(checkpoint_dir) -> list[tuple[int, int, UPath]]:
    """Every checkpoint as ``(phase index, step, path)``, oldest first."""
    found = []
    for path in lab_io.find_files_matching_path(checkpoint_dir, "*.ckpt"):
        match = CHECKPOINT_PATTERN.fullmatch(path.name)
        if match:
            found.append((int(match.group(1)), int(match.group(3)), path))
    return sorted(found, key=lambda item: (item[0], item[1]))


@dataclass
class TrainResumePlan(PipelineResumePlan):
    """Container class for holding the state of the phase ladder"""

    checkpoint_dir: UPath | None = None
    phase_keys: list[str] = field(default_factory=list)
    """marker key of every phase, in ladder order"""
    latest: tuple[int, int, UPath] | None = None
    """most advanced checkpoint as (phase index, step, path)"""

    TRAINING_STAGE = "training"

    def __init__(self, args: TrainArguments):
        super().__init__(**args.resume_kwargs_dict(), pipeline_name="train")
        self.checkpoint_dir = args.checkpoint_dir
        self.gather_plan(args)

    def gather_plan(self, args: TrainArguments):
        """Initialize the plan."""
        with self.print_progress(total=2, stage_name="Planning") as step_progress:
            super().safe_to_resume()
            step_progress.update(1)
            self.phase_keys = [
                f"phase{index:02d}_{phase.name}" for index, phase in enumerate(args.run_config.phases)
            ]
            checkpoints = find_checkpoints(self.checkpoint_dir) if self.resume else []
            if self.resume and not checkpoints:
                raise FileNotFoundError(f"no checkpoint found in {self.checkpoint_dir}")
            self.latest = checkpoints[-1] if checkpoints else None
            if self.latest is not None:
                header = read_header(self.latest[2])
                recorded = header.get("extra", {}).get("run_config_hash")
                if recorded and recorded != args.run_config.config_hash():
                    raise ValueError(
                        f"checkpoint {self.latest[2].name} was written by a different run config; "
                        "refusing to resume"
                    )
            step_progress.update(1)

    def phase_done(self, phase_index: int) -> bool:
        return self.phase_keys[phase_index] in self.read_done_keys(self.TRAINING_STAGE)

    def phase_key_done(self, phase_index: int, checkpoint_path):
        """Mark a phase as finished, recording its final checkpoint."""
        self.write_marker_file(
            self.tmp_path, self.TRAINING_STAGE, self.phase_keys[phase_index], str(checkpoint_path)
        )

    def checkpoint_path(self, phase_index: int, phase_name: str, step: int) -> UPath:
        return self.checkpoint_dir / checkpoint_name(phase_index, phase_name, step)
