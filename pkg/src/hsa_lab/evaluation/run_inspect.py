"""Inspect a checkpoint: header and manifest, parameter statistics, retrieval behaviour."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd

import hsa_lab.file_io as lab_io
from hsa_lab.datagen.tasks import generate_probe
from hsa_lab.evaluation.arguments import InspectArguments
from hsa_lab.manifest import RunManifest
from hsa_lab.model.checkpoint import load_checkpoint, read_header
from hsa_lab.model.decoder import HSAModel
from hsa_lab.model.params import ModelParams
from hsa_lab.numerics.tensor import no_grad, precision
from hsa_lab.pipeline_resume_plan import print_progress

HEADER_FILE = "checkpoint_header.json"
TRAIN_MANIFEST_FILE = "train_manifest.json"
PARAM_STATS_FILE = "param_stats.csv"
RETRIEVAL_STATS_FILE = "retrieval_stats.csv"
PROBE_STREAM = 2
STAT_KEYS = ("entropy", "distance", "top_weight", "count")


def param_stats(params: ModelParams) -> pd.DataFrame:
    """One row per parameter tensor: shape, size and value statistics."""
    rows = []
    for name, param in params.items():
        values = np.asarray(param.data, dtype=np.float64)
        rows.append(
            {
                "name": name,
                "shape": "x".join(str(size) for size in values.shape),
                "size": values.size,
                "mean": values.mean(),
                "std": values.std(),
                "min": values.min(),
                "max": values.max(),
                "l2_norm": float(np.linalg.norm(values.ravel())),
            }
        )
    return pd.DataFrame(rows)


def default_probe_length(model: HSAModel) -> int:
    """Long enough that answers sit several chunks beyond the sliding window."""
    return max(256, model.config.swa_window + 4 * model.config.chunk_size)


def retrieval_stats(model: HSAModel, task: str, length: int, n_probes: int, seed: int = 0) -> pd.DataFrame:
    """Per HSA layer: fusion-weight entropy, top weight and distance of the selected chunks.

    Averaged over every token with a non-empty selection in ``n_probes`` probes
    at depths spread over [0, 1].
    """
    rng = np.random.default_rng([seed, PROBE_STREAM])
    collected: dict[int, dict[str, list]] = {}
    for depth in np.linspace(0.0, 1.0, n_probes):
        sample = generate_probe(task, length, float(depth), rng)
        tokens = sample.tokens[:-1]
        with no_grad():
            _, trace = model.forward(tokens, return_trace=True)
        positions = np.arange(len(tokens))
        for layer, selection in sorted(trace.selections.items()):
            stats = collected.setdefault(layer, {key: [] for key in STAT_KEYS})
            active = selection.counts > 0
            weights = np.asarray(selection.weights.data, dtype=np.float64)
            stats["entropy"].append(selection.entropy()[active])
            stats["distance"].append(selection.chunk_distance(positions, model.config.chunk_size)[active])
            stats["top_weight"].append(weights.max(axis=-1)[active])
            stats["count"].append(selection.counts[active])
    rows = []
    for layer, stats in collected.items():
        tokens = sum(len(values) for values in stats["entropy"])
        means = {key: float(np.concatenate(stats[key]).mean()) if tokens else np.nan for key in STAT_KEYS}
        rows.append(
            {
                "layer": layer,
                "tokens": tokens,
                "mean_entropy": means["entropy"],
                "max_entropy": float(np.log(model.config.top_k)),
                "mean_top_weight": means["top_weight"],
                "mean_chunk_distance": means["distance"],
                "mean_selected": means["count"],
            }
        )
    return pd.DataFrame(rows)


@dataclass
class InspectResult:
    header: dict
    param_stats: pd.DataFrame
    retrieval_stats: pd.DataFrame

    def summary(self) -> str:
        extra = self.header.get("extra", {})
        lines = [
            f"checkpoint: phase {extra.get('phase_name', '?')} step {extra.get('step', '?')}, "
            f"tool version {self.header.get('tool_version', '?')}",
            f"parameters: {int(self.param_stats['size'].sum())}",
            self.retrieval_stats.to_string(index=False),
        ]
        return "\n".join(lines)


def run(args, client=None) -> InspectResult:  # pylint: disable=unused-argument
    """Write the checkpoint header, parameter statistics and retrieval statistics."""
    if not args:
        raise TypeError("args is required and should be type InspectArguments")
    if not isinstance(args, InspectArguments):
        raise TypeError("args must be type InspectArguments")

    with print_progress(
        total=3,
        stage_name="Inspecting",
        pipeline_name="inspect",
        use_progress_bar=args.progress_bar,
        simple_progress_bar=args.simple_progress_bar,
        tqdm_kwargs=args.tqdm_kwargs,
    ) as step_progress:
        header = read_header(args.checkpoint_path)
        manifest = RunManifest(
            command="inspect",
            seed=args.seed,
            source_checkpoint=str(args.checkpoint_path),
            records=[HEADER_FILE],
        )
        lab_io.write_json_file(args.run_path / HEADER_FILE, header)
        train_dir = args.checkpoint_path.parent.parent
        if RunManifest.exists(train_dir):
            lab_io.write_json_file(args.run_path / TRAIN_MANIFEST_FILE, asdict(RunManifest.read(train_dir)))
            manifest.records.append(TRAIN_MANIFEST_FILE)
        step_progress.update(1)

        with precision(args.precision):
            checkpoint = load_checkpoint(args.checkpoint_path)
            model = checkpoint.model
            if args.top_k is not None:
                model = model.with_runtime(top_k=args.top_k)
            manifest.architecture_hash = model.config.architecture_hash()
            manifest.config_hash = checkpoint.config.config_hash()
            parameters = param_stats(checkpoint.params)
            parameters.to_csv(str(args.run_path / PARAM_STATS_FILE), index=False)
            manifest.metrics.append(PARAM_STATS_FILE)
            step_progress.update(1)

            length = args.probe_length or default_probe_length(model)
            retrieval = retrieval_stats(model, args.task, length, args.n_probes, args.seed)
        retrieval.to_csv(str(args.run_path / RETRIEVAL_STATS_FILE), index=False)
        manifest.metrics.append(RETRIEVAL_STATS_FILE)
        manifest.write(args.run_path)
        step_progress.update(1)

    result = InspectResult(header=header, param_stats=parameters, retrieval_stats=retrieval)
    print(result.summary())
    return result
