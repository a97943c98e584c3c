"""Command-line entry point: ``hsa-lab {gen,train,eval,cost,inspect}``."""

from __future__ import annotations

import argparse
import sys

from hsa_lab.datagen.arguments import GenerateArguments
from hsa_lab.evaluation.arguments import CostArguments, EvalArguments, InspectArguments
from hsa_lab.pipeline import pipeline
from hsa_lab.train.arguments import TrainArguments

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERIC = 2
EXIT_IO = 3


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--out-dir", default="runs", help="base directory for run outputs")
    parser.add_argument("--name", default="", help="run directory name under --out-dir")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--precision", type=int, choices=(32, 64), default=32)
    parser.add_argument("--resume", action="store_true", help="continue from existing intermediate files")
    parser.add_argument("--workers", type=int, default=1, help="dask workers")
    parser.add_argument("--threads", type=int, default=1, help="threads per dask worker")
    parser.add_argument("--no-progress", action="store_true", help="hide progress bars")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hsa-lab", description=__doc__)
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen", help="emit a synthetic dataset as JSONL")
    _add_common(gen)
    gen.add_argument("--task", default="sniah")
    gen.add_argument("--lengths", default="1024")
    gen.add_argument("--depths", default=None)
    gen.add_argument("--samples-per-cell", type=int, default=50)
    gen.add_argument("--samples-per-shard", type=int, default=50)
    gen.add_argument("--effective-length", type=int, default=None)

    train = commands.add_parser("train", help="run a phase ladder from a run config")
    _add_common(train)
    train.add_argument("--config", required=True, help="run config file or preset name")
    train.add_argument("--max-steps", type=int, default=None)

    evaluate = commands.add_parser("eval", help="evaluate a checkpoint on a length x depth grid")
    _add_common(evaluate)
    evaluate.add_argument("--checkpoint", required=True, help="checkpoint file or training run directory")
    evaluate.add_argument("--config", default=None, help="run config the checkpoint must match")
    evaluate.add_argument("--task", default=None)
    evaluate.add_argument("--lengths", default=None)
    evaluate.add_argument("--depths", default=None)
    evaluate.add_argument("--samples-per-cell", type=int, default=None)
    evaluate.add_argument("--top-k", type=int, default=None)
    evaluate.add_argument("--eval-top-k", default=None, help="comma-separated top-k values to sweep")
    evaluate.add_argument("--max-length", type=int, default=None)
    evaluate.add_argument("--ppl-text", default=None, help="text file for perplexity of its last tokens")
    evaluate.add_argument("--last-n", type=int, default=512)

    cost = commands.add_parser("cost", help="analytical FLOP and memory cost model")
    _add_common(cost)
    cost.add_argument("--config", required=True, help="run config file or preset name")
    cost.add_argument("--lengths", default=None)

    inspect = commands.add_parser("inspect", help="parameter and retrieval statistics of a checkpoint")
    _add_common(inspect)
    inspect.add_argument("--checkpoint", required=True, help="checkpoint file or training run directory")
    inspect.add_argument("--task", default="sniah")
    inspect.add_argument("--probe-length", type=int, default=None)
    inspect.add_argument("--n-probes", type=int, default=4)
    inspect.add_argument("--top-k", type=int, default=None)
    return parser


def make_arguments(namespace: argparse.Namespace):
    """Build the arguments object of the selected command."""
    common = {
        "output_path": namespace.out_dir,
        "output_artifact_name": namespace.name,
        "precision": namespace.precision,
        "resume": namespace.resume,
        "progress_bar": not namespace.no_progress,
        "dask_n_workers": namespace.workers,
        "dask_threads_per_worker": namespace.threads,
    }
    seed = {} if namespace.seed is None else {"seed": namespace.seed}
    if namespace.command == "gen":
        common["output_artifact_name"] = namespace.name or f"gen_{namespace.task}"
        return GenerateArguments(
            **common,
            **seed,
            task=namespace.task,
            lengths=namespace.lengths,
            depths=namespace.depths,
            samples_per_cell=namespace.samples_per_cell,
            samples_per_shard=namespace.samples_per_shard,
            effective_length=namespace.effective_length,
        )
    if namespace.command == "train":
        return TrainArguments(**common, **seed, config=namespace.config, max_steps=namespace.max_steps)
    if namespace.command == "eval":
        return EvalArguments(
            **common,
            **seed,
            checkpoint=namespace.checkpoint,
            config=namespace.config,
            task=namespace.task,
            lengths=namespace.lengths,
            depths=namespace.depths,
            samples_per_cell=namespace.samples_per_cell,
            top_k=namespace.top_k,
            eval_top_k=namespace.eval_top_k,
            max_length=namespace.max_length,
            ppl_text=namespace.ppl_text,
            last_n=namespace.last_n,
        )
    if namespace.command == "cost":
        return CostArguments(**common, **seed, config=namespace.config, lengths=namespace.lengths)
    return InspectArguments(
        **common,
        **seed,
        checkpoint=namespace.checkpoint,
        task=namespace.task,
        probe_length=namespace.probe_length,
        n_probes=namespace.n_probes,
        top_k=namespace.top_k,
    )


def main(argv: list[str] | None = None) -> int:
    """Run one command and map failures to exit codes.

    0 success, 1 invalid arguments or config, 2 numeric failure, 3 I/O failure.
    """
    namespace = build_parser().parse_args(argv)
    try:
        pipeline(make_arguments(namespace))
    except (ValueError, TypeError) as error:
        print(f"hsa-lab: error: {error}", file=sys.stderr)
        return EXIT_VALIDATION
    except ArithmeticError as error:
        print(f"hsa-lab: numeric failure: {error}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as error:
        print(f"hsa-lab: I/O error: {error}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
