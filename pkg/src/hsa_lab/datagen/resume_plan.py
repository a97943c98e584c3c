"""Resume plan for dataset generation: one marker file per generated shard."""

from __future__ import annotations

from dataclasses import dataclass, field

from hsa_lab.datagen.arguments import GenerateArguments
from hsa_lab.pipeline_resume_plan import PipelineResumePlan


@dataclass
class GenerateResumePlan(PipelineResumePlan):
    """Container class for holding the state of each shard in the generation pipeline"""

    shards: list = field(default_factory=list)
    """shards still to generate, as ``(key, length, depth, n_samples)``"""
    shard_index: dict = field(default_factory=dict)
    """position of every shard key in the full plan"""

    GENERATING_STAGE = "generating"

    def __init__(self, args: GenerateArguments):
        super().__init__(**args.resume_kwargs_dict(), pipeline_name="generate")
        self.gather_plan(args)

    def gather_plan(self, args: GenerateArguments):
        """Initialize the plan."""
        with self.print_progress(total=2, stage_name="Planning") as step_progress:
            super().safe_to_resume()
            step_progress.update(1)
            plan = args.shard_plan()
            self.shard_index = {key: index for index, (key, *_) in enumerate(plan)}
            if self.done_file_exists(self.GENERATING_STAGE):
                self.shards = []
            else:
                done = set(self.read_done_keys(self.GENERATING_STAGE))
                self.shards = [shard for shard in plan if shard[0] not in done]
            step_progress.update(1)

    def shard_file(self, key: str):
        return self.tmp_path / "shards" / f"{key}.jsonl"

    @classmethod
    def generating_key_done(cls, tmp_path, shard_key: str, n_samples: int):
        """Mark a single shard as done, recording how many samples it holds."""
        cls.write_marker_file(tmp_path, cls.GENERATING_STAGE, shard_key, str(n_samples))

    def wait_for_generating(self, futures):
        """Wait for generation futures to complete."""
        self.wait_for_futures(futures, self.GENERATING_STAGE)
        missing = set(self.shard_index) - set(self.read_done_keys(self.GENERATING_STAGE))
        if missing:
            raise RuntimeError(f"{len(missing)} generating stages did not complete successfully.")
        self.touch_stage_done_file(self.GENERATING_STAGE)
