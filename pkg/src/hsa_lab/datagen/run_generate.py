"""Generate a synthetic dataset as JSONL, one dask task per shard.

Every shard draws from its own random stream, derived from ``(seed, shard index)``,
so the output does not depend on how many workers generated it.
"""

from __future__ import annotations

import numpy as np
import pandas as pd

import hsa_lab.file_io as lab_io
from hsa_lab.datagen.arguments import GenerateArguments
from hsa_lab.datagen.corpus import mixture_generators
from hsa_lab.datagen.resume_plan import GenerateResumePlan
from hsa_lab.datagen.tasks import TASKS, Sample, generate_probe, validate_sample
from hsa_lab.pipeline_resume_plan import print_task_failure
from hsa_lab.runtime_arguments import tool_version

SAMPLES_FILE = "samples.jsonl"
SUMMARY_FILE = "summary.csv"
PROVENANCE_FILE = "generation.json"


def make_sample(
    task: str,
    length: int,
    depth: float | None,
    rng: np.random.Generator,
    task_options: dict | None = None,
    effective_length: int | None = None,
) -> Sample:
    """One sample of a probe task or corpus component."""
    if task in TASKS:
        return generate_probe(task, length, depth, rng, **(task_options or {}))
    return mixture_generators(effective_length)[task](length, rng)


# pylint: disable=too-many-arguments
def generate_shard(
    task: str,
    length: int,
    depth: float | None,
    n_samples: int,
    seed: int,
    shard_index: int,
    shard_key: str,
    output_file,
    resume_path,
    task_options: dict | None = None,
    effective_length: int | None = None,
    validate: bool = True,
):
    """Generate one shard of samples and write it as JSONL."""
    try:
        rng = np.random.default_rng([seed, shard_index])
        records = []
        for _ in range(n_samples):
            sample = make_sample(task, length, depth, rng, task_options, effective_length)
            if validate and "answer_start" in sample.meta:
                validate_sample(sample)
            record = sample.to_record()
            record["meta"] = dict(record["meta"], shard=shard_key, requested_depth=depth)
            records.append(record)
        lab_io.make_directory(lab_io.get_upath(output_file).parent, exist_ok=True)
        pd.DataFrame(records).to_json(str(output_file), orient="records", lines=True)
        GenerateResumePlan.generating_key_done(resume_path, shard_key, n_samples)
    except Exception as exception:  # pylint: disable=broad-exception-caught
        print_task_failure(f"Failed GENERATING stage for shard: {shard_key}", exception)
        raise exception


def load_samples(path) -> list[Sample]:
    """Read samples back from a JSONL file written by ``run``."""
    frame = pd.read_json(str(path), orient="records", lines=True, dtype=False)
    return [Sample.from_record(record) for record in frame.to_dict("records")]


def run(args, client=None):
    """Run dataset generation pipeline.

    Args:
        args (GenerateArguments): generation arguments
        client (dask.distributed.Client): shards are submitted as futures when
            provided, otherwise they are generated in this process
    Returns:
        path to the combined ``samples.jsonl``
    """
    if not args:
        raise TypeError("args is required and should be type GenerateArguments")
    if not isinstance(args, GenerateArguments):
        raise TypeError("args must be type GenerateArguments")

    resume_plan = GenerateResumePlan(args)
    shard_kwargs = []
    for key, length, depth, count in resume_plan.shards:
        shard_kwargs.append(
            {
                "task": args.task,
                "length": length,
                "depth": depth,
                "n_samples": count,
                "seed": args.seed,
                "shard_index": resume_plan.shard_index[key],
                "shard_key": key,
                "output_file": resume_plan.shard_file(key),
                "resume_path": resume_plan.tmp_path,
                "task_options": args.task_options,
                "effective_length": args.effective_length,
                "validate": args.validate,
            }
        )

    if shard_kwargs and client is not None:
        futures = [client.submit(generate_shard, **kwargs) for kwargs in shard_kwargs]
        resume_plan.wait_for_generating(futures)
    elif shard_kwargs:
        for kwargs in resume_plan.print_progress(shard_kwargs, stage_name="Generating"):
            generate_shard(**kwargs)
        resume_plan.wait_for_generating([])

    with resume_plan.print_progress(total=3, stage_name="Finishing") as step_progress:
        lines = []
        summary = []
        markers = resume_plan.read_markers(GenerateResumePlan.GENERATING_STAGE)
        for key, length, depth, _ in args.shard_plan():
            text = lab_io.load_text_file(resume_plan.shard_file(key))
            lines.extend(line for line in text.splitlines() if line.strip())
            summary.append({"shard": key, "length": length, "depth": depth, "n_samples": int(markers[key])})
        samples_path = args.run_path / SAMPLES_FILE
        lab_io.write_string_to_file(samples_path, "\n".join(lines) + "\n")
        step_progress.update(1)
        pd.DataFrame(summary).to_csv(str(args.run_path / SUMMARY_FILE), index=False)
        lab_io.write_json_file(
            args.run_path / PROVENANCE_FILE,
            {**args.provenance_dict(), "n_samples": len(lines), "tool_version": tool_version()},
            canonical=True,
        )
        step_progress.update(1)
        resume_plan.clean_resume_files()
        step_progress.update(1)
    return samples_path
