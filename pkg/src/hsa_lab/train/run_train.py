"""Run the phase ladder: warm-up, pre-training and mid-training on shared weights.

Every training step draws its batch from its own random stream, derived from
``(seed, phase index, step)``. Together with the optimizer moments stored in each
checkpoint, this makes a resumed run bitwise identical to an uninterrupted one.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

import hsa_lab.file_io as lab_io
from hsa_lab.datagen.corpus import sample_batch
from hsa_lab.datagen.tasks import generate_probe
from hsa_lab.evaluation.niah import score_sample
from hsa_lab.manifest import RunManifest
from hsa_lab.model.checkpoint import load_checkpoint, read_header, save_checkpoint
from hsa_lab.model.decoder import HSAModel
from hsa_lab.model.params import init_params
from hsa_lab.numerics.tensor import default_dtype, precision
from hsa_lab.train.arguments import TrainArguments
from hsa_lab.train.optimizer import AdamW, learning_rate
from hsa_lab.train.resume_plan import TrainResumePlan, find_checkpoints
from hsa_lab.train.step import train_step

SWEEP_THRESHOLDS = (0.8, 0.85, 0.9, 0.95, 0.99)
PROBE_STREAM = 1
RUN_CONFIG_FILE = "run_config.json"


def detect_warmup_done(accuracies, threshold: float = 0.95, consecutive: int = 2) -> bool:
    """True when the last ``consecutive`` probe accuracies all reach ``threshold``.

    >>> detect_warmup_done([0.2, 0.3])
    False
    >>> detect_warmup_done([0.96, 0.97])
    True
    """
    accuracies = list(accuracies)
    if consecutive < 1 or len(accuracies) < consecutive:
        return False
    return all(accuracy >= threshold for accuracy in accuracies[-consecutive:])


def threshold_sweep(accuracies, consecutive: int = 2) -> dict[str, bool]:
    """Completion decision at each audit threshold."""
    return {
        f"{threshold:.2f}": detect_warmup_done(accuracies, threshold, consecutive)
        for threshold in SWEEP_THRESHOLDS
    }


def probe_accuracy(model: HSAModel, phase, seed: int, phase_index: int, step: int) -> float:
    """Exact-match accuracy on held-out probes at the phase's probe length.

    Probes come from a stream separate from the training batches, at depths spread
    evenly over [0, 1].
    """
    length = phase.resolved_probe_length
    probe_model = HSAModel(phase.runtime_config(model.config, length), model.params)
    rng = np.random.default_rng([seed, phase_index, step, PROBE_STREAM])
    depths = np.linspace(0.0, 1.0, phase.probe_samples)
    correct = 0
    for index, depth in enumerate(depths):
        task = phase.probe_tasks[index % len(phase.probe_tasks)]
        sample = generate_probe(task, length, float(depth), rng)
        correct += score_sample(probe_model, sample).correct
    return correct / phase.probe_samples


def append_metrics(path, records: list[dict]):
    """Append records to a JSONL metrics file."""
    if not records:
        return
    text = pd.DataFrame(records).to_json(orient="records", lines=True)
    path = lab_io.get_upath(path)
    lab_io.make_directory(path.parent, exist_ok=True)
    with path.open("a", encoding="utf-8") as file_handle:
        file_handle.write(text if text.endswith("\n") else text + "\n")


def read_metrics(path) -> pd.DataFrame:
    path = lab_io.get_upath(path)
    if not path.exists() or not lab_io.load_text_file(path).strip():
        return pd.DataFrame()
    return pd.read_json(str(path), orient="records", lines=True)


def truncate_metrics(path, phase_index: int, step: int):
    """Drop records written after the checkpoint a run resumes from.

    Kept lines are left byte-for-byte as written.
    """
    path = lab_io.get_upath(path)
    if not path.exists():
        return
    kept = []
    for line in lab_io.load_text_file(path).splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        if (record["phase_index"], record["step"]) <= (phase_index, step):
            kept.append(line + "\n")
    lab_io.write_string_to_file(path, "".join(kept))


@dataclass
class PhaseResult:
    """Outcome of running (part of) one phase."""

    phase_index: int
    name: str
    steps_run: int
    """steps executed by this call"""
    step: int
    """completed steps of the phase so far"""
    phase_done: bool
    """the phase reached its budget or its completion criterion"""
    completion_criterion_met: bool | None
    """None when the phase has no completion criterion"""
    checkpoint: str
    probe_history: list[float] = field(default_factory=list)


# pylint: disable=too-many-arguments,too-many-locals
def run_phase(
    args: TrainArguments,
    resume_plan: TrainResumePlan,
    phase_index: int,
    model: HSAModel,
    optimizer: AdamW,
    start_step: int = 0,
    probe_history: list[float] | None = None,
    step_budget: int | None = None,
) -> PhaseResult:
    """Train one phase from ``start_step`` until its budget, its completion criterion,
    or ``step_budget`` further steps.

    Writes one metrics record per step and checkpoints at the configured interval
    and at the end. If the completion criterion never fires within the budget, a
    warning is issued and recorded in the metrics.
    """
    run_config = args.run_config
    phase = run_config.phases[phase_index]
    runtime_model = HSAModel(phase.runtime_config(model.config), model.params)
    optimizer.weight_decay = phase.weight_decay
    history = list(probe_history or [])
    total = phase.total_steps
    completed = False
    steps_run = 0
    step = start_step
    checkpoint = ""
    saved_step = None

    def save(phase_done: bool):
        nonlocal saved_step
        saved_step = step
        path = resume_plan.checkpoint_path(phase_index, phase.name, step)
        save_checkpoint(
            path,
            model.config,
            model.params,
            extra={
                "phase_index": phase_index,
                "phase_name": phase.name,
                "step": step,
                "phase_done": phase_done,
                "completion_criterion_met": completed,
                "probe_history": history,
                "optimizer_step": optimizer.step_count,
                "run_config_hash": run_config.config_hash(),
                "seed": args.seed,
            },
            optimizer_arrays=optimizer.state_arrays(),
        )
        return str(path)

    steps = range(start_step, total)
    for index in resume_plan.print_progress(steps, stage_name=phase.name, total=len(steps)):
        if step_budget is not None and steps_run >= step_budget:
            break
        rng = np.random.default_rng([args.seed, phase_index, index])
        batch = sample_batch(
            phase.mixture,
            phase.context_length,
            phase.batch_size,
            rng,
            probe_probability=phase.probe_probability,
            probe_tasks=tuple(phase.probe_tasks),
            effective_length=phase.effective_length,
        )
        lr = learning_rate(index, phase.lr, phase.warmup_steps, total, phase.schedule, phase.min_lr_ratio)
        result = train_step(runtime_model, batch, optimizer, lr, phase.max_grad_norm, dump_dir=args.run_path)
        step = index + 1
        steps_run += 1
        record = {
            "phase": phase.name,
            "phase_index": phase_index,
            "step": step,
            "loss": result.loss,
            "grad_norm": result.grad_norm,
            "clipped_grad_norm": result.clipped_grad_norm,
            "lr": lr,
            "tokens": result.n_tokens,
            "injected_probes": sum(bool(sample.meta.get("injected")) for sample in batch),
            "swa_window": runtime_model.config.swa_window,
            "top_k": runtime_model.config.top_k,
        }
        if phase.probe_every and step % phase.probe_every == 0:
            accuracy = probe_accuracy(model, phase, args.seed, phase_index, step)
            history.append(accuracy)
            record[f"probe_acc@{phase.resolved_probe_length}"] = accuracy
            record["threshold_sweep"] = threshold_sweep(history, phase.completion_consecutive)
            if phase.completion_threshold is not None:
                completed = detect_warmup_done(
                    history, phase.completion_threshold, phase.completion_consecutive
                )
        append_metrics(args.metrics_file, [record])

        finished = completed or step == total
        if finished or (phase.checkpoint_every and step % phase.checkpoint_every == 0):
            checkpoint = save(finished)
        if completed:
            break

    phase_done = completed or step == total
    if saved_step != step and steps_run:
        checkpoint = save(phase_done)

    criterion = None if phase.completion_threshold is None else completed
    if phase_done:
        end_record = {
            "phase": phase.name,
            "phase_index": phase_index,
            "step": step,
            "event": "phase_end",
            "completion_criterion_met": criterion,
        }
        if criterion is False:
            message = (
                f"phase {phase.name} used its {total}-step budget without reaching probe accuracy "
                f"{phase.completion_threshold} at length {phase.resolved_probe_length}"
            )
            warnings.warn(message)
            end_record["warning"] = message
        append_metrics(args.metrics_file, [end_record])
        resume_plan.phase_key_done(phase_index, checkpoint)

    return PhaseResult(
        phase_index=phase_index,
        name=phase.name,
        steps_run=steps_run,
        step=step,
        phase_done=phase_done,
        completion_criterion_met=criterion,
        checkpoint=checkpoint,
        probe_history=history,
    )


def build_manifest(args: TrainArguments) -> RunManifest:
    """Index every checkpoint of the run, with the latest state of each phase."""
    run_config = args.run_config
    checkpoints = find_checkpoints(args.checkpoint_dir)
    phases = []
    for index, phase in enumerate(run_config.phases):
        own = [path for phase_index, _, path in checkpoints if phase_index == index]
        entry = {"name": phase.name, "steps_run": 0, "completed": False, "completion_criterion_met": None}
        if own:
            extra = read_header(own[-1]).get("extra", {})
            entry.update(
                steps_run=extra.get("step", 0),
                completed=extra.get("phase_done", False),
                completion_criterion_met=(
                    extra.get("completion_criterion_met") if phase.completion_threshold is not None else None
                ),
                checkpoint=f"checkpoints/{own[-1].name}",
            )
        phases.append(entry)
    return RunManifest(
        command="train",
        config_hash=run_config.config_hash(),
        architecture_hash=run_config.model.architecture_hash(),
        seed=args.seed,
        phases=phases,
        checkpoints=[f"checkpoints/{path.name}" for _, _, path in checkpoints],
        metrics=[args.metrics_file.name],
        records=[RUN_CONFIG_FILE],
    )


def run(args, client=None):  # pylint: disable=unused-argument
    """Run the training phase ladder.

    Training is a serial transaction per step, so a dask client is accepted for
    interface symmetry but not used.

    Returns:
        the run's :class:`RunManifest`
    """
    if not args:
        raise TypeError("args is required and should be type TrainArguments")
    if not isinstance(args, TrainArguments):
        raise TypeError("args must be type TrainArguments")

    resume_plan = TrainResumePlan(args)
    run_config = args.run_config
    lab_io.write_json_file(args.run_path / RUN_CONFIG_FILE, run_config.to_dict(), canonical=True)

    with precision(args.precision):
        start_phase, start_step, history = 0, 0, []
        if resume_plan.latest is not None:
            phase_index, step, path = resume_plan.latest
            checkpoint = load_checkpoint(path, expected_config=run_config.model)
            params = checkpoint.params.astype(default_dtype())
            optimizer = AdamW(params)
            optimizer.load_state_arrays(checkpoint.optimizer_arrays, checkpoint.extra["optimizer_step"])
            if checkpoint.extra.get("phase_done"):
                start_phase = phase_index + 1
            else:
                start_phase, start_step = phase_index, step
                history = list(checkpoint.extra.get("probe_history", []))
            truncate_metrics(args.metrics_file, phase_index, step)
            print(f"Resuming from {path.name} (phase {phase_index}, step {step}).")
        else:
            params = init_params(run_config.model, args.seed)
            optimizer = AdamW(params)
        model = HSAModel(run_config.model, params)

        budget = args.max_steps
        for phase_index in range(start_phase, len(run_config.phases)):
            if budget is not None and budget <= 0:
                break
            result = run_phase(
                args,
                resume_plan,
                phase_index,
                model,
                optimizer,
                start_step=start_step if phase_index == start_phase else 0,
                probe_history=history if phase_index == start_phase else None,
                step_budget=budget,
            )
            if budget is not None:
                budget -= result.steps_run
            if not result.phase_done:
                break

    manifest = build_manifest(args)
    manifest.write(args.run_path)
    if all(phase["completed"] for phase in manifest.phases):
        resume_plan.clean_resume_files()
    return manifest
