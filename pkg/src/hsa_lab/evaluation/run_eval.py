"""Evaluate a checkpoint on a length x depth probe grid, one dask task per cell.

Every cell draws its probes from a stream derived from ``(seed, length, depth)``,
so grids do not depend on scheduling or on which cells were resumed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import cloudpickle
import pandas as pd

import hsa_lab.file_io as lab_io
from hsa_lab.datagen.tokenizer import encode
from hsa_lab.evaluation.arguments import EvalArguments
from hsa_lab.evaluation.figures import heatmap_figure, length_curve_figure, save_svg
from hsa_lab.evaluation.niah import AccuracyGrid, eval_cell, skipped_cell
from hsa_lab.evaluation.perplexity import eval_ppl
from hsa_lab.evaluation.resume_plan import EvalResumePlan
from hsa_lab.manifest import RunManifest
from hsa_lab.model.checkpoint import load_checkpoint
from hsa_lab.numerics.tensor import precision
from hsa_lab.pipeline_resume_plan import print_task_failure

MODEL_PICKLE = "model.pickle"
PERPLEXITY_FILE = "perplexity.json"
PROVENANCE_FILE = "evaluation.json"


# pylint: disable=too-many-arguments
def evaluate_cell(
    pickled_model_file,
    task: str,
    length: int,
    depth: float,
    samples_per_cell: int,
    seed: int,
    top_k: int | None,
    cell_key: str,
    cell_file,
    resume_path,
    bits: int = 32,
    task_options: dict | None = None,
    max_length: int | None = None,
):
    """Evaluate one grid cell and write its per-sample records as JSONL."""
    try:
        if max_length is not None and length > max_length:
            cell = skipped_cell(task, length, depth, f"length exceeds max_length {max_length}")
        else:
            with lab_io.get_upath(pickled_model_file).open("rb") as pickle_file:
                model = cloudpickle.load(pickle_file)
            if top_k is not None:
                model = model.with_runtime(top_k=top_k)
            with precision(bits):
                try:
                    cell = eval_cell(model, task, length, depth, samples_per_cell, seed, task_options)
                except MemoryError:
                    cell = skipped_cell(task, length, depth, "out of memory")
        if cell.records:
            records = [{**record, "top_k": top_k} for record in cell.records]
            lab_io.make_directory(lab_io.get_upath(cell_file).parent, exist_ok=True)
            pd.DataFrame(records).to_json(str(cell_file), orient="records", lines=True)
        EvalResumePlan.evaluating_key_done(resume_path, cell_key, cell)
    except Exception as exception:  # pylint: disable=broad-exception-caught
        print_task_failure(f"Failed EVALUATING stage for cell: {cell_key}", exception)
        raise exception


@dataclass
class EvalResult:
    """Grids (keyed by a top-k label), optional perplexity and the written manifest."""

    grids: dict[str, AccuracyGrid] = field(default_factory=dict)
    perplexity: float | None = None
    manifest: RunManifest | None = None

    def summary(self) -> str:
        parts = [grid.summary() for grid in self.grids.values()]
        if self.perplexity is not None:
            parts.append(f"perplexity: {self.perplexity:.4f}")
        return "\n\n".join(parts)


def grid_label(top_k: int | None) -> str:
    return "default" if top_k is None else f"k{top_k}"


def run(args, client=None):
    """Run grid evaluation.

    Args:
        args (EvalArguments): evaluation arguments
        client (dask.distributed.Client): cells are submitted as futures when
            provided, otherwise they are evaluated in this process
    Returns:
        :class:`EvalResult`
    Raises:
        CheckpointMismatchError: if the checkpoint was written for a different
            architecture than the run config describes
    """
    if not args:
        raise TypeError("args is required and should be type EvalArguments")
    if not isinstance(args, EvalArguments):
        raise TypeError("args must be type EvalArguments")

    expected = args.run_config.model if args.run_config is not None else None
    with precision(args.precision):
        checkpoint = load_checkpoint(args.checkpoint_path, expected_config=expected)
    model = checkpoint.model
    resume_plan = EvalResumePlan(args)

    if args.in_domain_length is not None:
        for top_k in args.top_k_values:
            coverage = (top_k or model.config.top_k) * model.config.chunk_size
            if coverage < args.in_domain_length and max(args.lengths) > args.in_domain_length:
                warnings.warn(
                    f"top_k={top_k or model.config.top_k} retrieves {coverage} tokens, "
                    f"less than the {args.in_domain_length}-token training context"
                )

    pickled_model_file = resume_plan.tmp_path / MODEL_PICKLE
    with pickled_model_file.open("wb") as pickle_file:
        cloudpickle.dump(model, pickle_file)

    cell_kwargs = [
        {
            "pickled_model_file": pickled_model_file,
            "task": args.task,
            "length": length,
            "depth": depth,
            "samples_per_cell": args.samples_per_cell,
            "seed": args.seed,
            "top_k": top_k,
            "cell_key": key,
            "cell_file": resume_plan.cell_file(key),
            "resume_path": resume_plan.tmp_path,
            "bits": args.precision,
            "task_options": args.task_options,
            "max_length": args.max_length,
        }
        for key, top_k, length, depth in resume_plan.cells
    ]
    if cell_kwargs and client is not None:
        futures = [client.submit(evaluate_cell, **kwargs) for kwargs in cell_kwargs]
        resume_plan.wait_for_evaluating(futures)
    elif cell_kwargs:
        for kwargs in resume_plan.print_progress(cell_kwargs, stage_name="Evaluating"):
            evaluate_cell(**kwargs)
        resume_plan.wait_for_evaluating([])

    result = EvalResult()
    manifest = RunManifest(
        command="eval",
        config_hash=args.run_config.config_hash() if args.run_config else checkpoint.config.config_hash(),
        architecture_hash=checkpoint.config.architecture_hash(),
        seed=args.seed,
        source_checkpoint=str(args.checkpoint_path),
    )
    with resume_plan.print_progress(total=4, stage_name="Finishing") as step_progress:
        cells = resume_plan.read_cells(args.task)
        for top_k in args.top_k_values:
            label = grid_label(top_k)
            plan = [(key, length, depth) for key, k, length, depth in resume_plan.all_cells if k == top_k]
            grid = AccuracyGrid.from_cells(
                [cells[key] for key, _, _ in plan],
                args.lengths,
                args.depths,
                args.in_domain_length,
                top_k or model.config.top_k,
            )
            result.grids[label] = grid
            suffix = "" if top_k is None else f"_{label}"
            grid_file = f"grid_{args.task}{suffix}.csv"
            grid.to_frame().to_csv(str(args.run_path / grid_file), index=False)
            manifest.grids.append(grid_file)

            lines = []
            for key, _, _ in plan:
                cell_file = resume_plan.cell_file(key)
                if cell_file.exists():
                    text = lab_io.load_text_file(cell_file)
                    lines.extend(line for line in text.splitlines() if line.strip())
            records_file = f"records_{args.task}{suffix}.jsonl"
            lab_io.write_string_to_file(args.run_path / records_file, "".join(f"{line}\n" for line in lines))
            manifest.records.append(records_file)

            heatmap_file = f"heatmap_{args.task}{suffix}.svg"
            save_svg(heatmap_figure(grid), args.run_path / heatmap_file)
            manifest.figures.append(heatmap_file)
        step_progress.update(1)

        curve_file = f"accuracy_vs_length_{args.task}.svg"
        save_svg(
            length_curve_figure(
                {f"top_k={grid.top_k}": grid for grid in result.grids.values()},
                args.in_domain_length,
                title=f"{args.task} accuracy",
            ),
            args.run_path / curve_file,
        )
        manifest.figures.append(curve_file)
        step_progress.update(1)

        if args.ppl_text is not None:
            tokens = encode(lab_io.load_text_file(args.ppl_text))
            with precision(args.precision):
                result.perplexity = eval_ppl(model, tokens, args.last_n, incremental=True)
            lab_io.write_json_file(
                args.run_path / PERPLEXITY_FILE,
                {"source": str(args.ppl_text), "last_n": args.last_n, "perplexity": result.perplexity},
            )
            manifest.metrics.append(PERPLEXITY_FILE)
        lab_io.write_json_file(args.run_path / PROVENANCE_FILE, args.provenance_dict(), canonical=True)
        manifest.records.append(PROVENANCE_FILE)
        manifest.write(args.run_path)
        result.manifest = manifest
        step_progress.update(1)
        resume_plan.clean_resume_files()
        step_progress.update(1)

    print(result.summary())
    return result


def load_grid(path, in_domain_boundary: int | None = None) -> AccuracyGrid:
    """Read a grid CSV written by ``run``."""
    return AccuracyGrid.from_frame(pd.read_csv(str(path)), in_domain_boundary)
