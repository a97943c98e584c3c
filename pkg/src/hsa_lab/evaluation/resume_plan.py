"""Resume plan for grid evaluation: one marker file per evaluated cell."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from hsa_lab.evaluation.arguments import EvalArguments
from hsa_lab.evaluation.niah import CellResult
from hsa_lab.pipeline_resume_plan import PipelineResumePlan


def cell_key(top_k: int | None, length: int, depth: float) -> str:
    """Marker key of one cell.

    >>> cell_key(None, 4096, 0.5)
    'kdefault_len4096_depth0.500'
    """
    return f"k{top_k if top_k is not None else 'default'}_len{length}_depth{depth:.3f}"


@dataclass
class EvalResumePlan(PipelineResumePlan):
    """Container class for holding the state of each cell in the evaluation pipeline"""

    cells: list = field(default_factory=list)
    """cells still to evaluate, as ``(key, top_k, length, depth)``"""
    all_cells: list = field(default_factory=list)

    EVALUATING_STAGE = "evaluating"

    def __init__(self, args: EvalArguments):
        super().__init__(**args.resume_kwargs_dict(), pipeline_name="eval")
        self.gather_plan(args)

    def gather_plan(self, args: EvalArguments):
        """Initialize the plan."""
        with self.print_progress(total=2, stage_name="Planning") as step_progress:
            super().safe_to_resume()
            step_progress.update(1)
            self.all_cells = [
                (cell_key(top_k, length, depth), top_k, length, depth)
                for top_k in args.top_k_values
                for length in args.lengths
                for depth in args.depths
            ]
            if self.done_file_exists(self.EVALUATING_STAGE):
                self.cells = []
            else:
                done = set(self.read_done_keys(self.EVALUATING_STAGE))
                self.cells = [cell for cell in self.all_cells if cell[0] not in done]
            step_progress.update(1)

    def cell_file(self, key: str):
        return self.tmp_path / "cells" / f"{key}.jsonl"

    @classmethod
    def evaluating_key_done(cls, tmp_path, key: str, cell: CellResult):
        """Mark a single cell as done, recording its accuracy."""
        value = json.dumps(
            {"accuracy": cell.accuracy, "n_samples": cell.n_samples, "skipped": cell.skipped}
        )
        cls.write_marker_file(tmp_path, cls.EVALUATING_STAGE, key, value)

    def read_cells(self, task: str) -> dict[str, CellResult]:
        """Every finished cell, keyed like the plan."""
        markers = self.read_markers(self.EVALUATING_STAGE)
        results = {}
        for key, _, length, depth in self.all_cells:
            if key in markers:
                values = json.loads(markers[key])
                results[key] = CellResult(task=task, length=length, depth=depth, **values)
        return results

    def wait_for_evaluating(self, futures):
        """Wait for evaluation futures to complete."""
        self.wait_for_futures(futures, self.EVALUATING_STAGE)
        done = set(self.read_done_keys(self.EVALUATING_STAGE))
        missing = [key for key, *_ in self.all_cells if key not in done]
        if missing:
            raise RuntimeError(f"{len(missing)} evaluating stages did not complete successfully.")
        self.touch_stage_done_file(self.EVALUATING_STAGE)
