"""Flow control and pipeline entry points."""

from dask.distributed import Client

import hsa_lab.datagen.run_generate as generate_runner
import hsa_lab.evaluation.run_cost as cost_runner
import hsa_lab.evaluation.run_eval as eval_runner
import hsa_lab.evaluation.run_inspect as inspect_runner
import hsa_lab.train.run_train as train_runner
from hsa_lab.datagen.arguments import GenerateArguments
from hsa_lab.evaluation.arguments import CostArguments, EvalArguments, InspectArguments
from hsa_lab.runtime_arguments import RuntimeArguments
from hsa_lab.train.arguments import TrainArguments

# pragma: no cover

INLINE_ARGUMENTS = (TrainArguments, CostArguments, InspectArguments)
"""commands that never distribute work, so no client is started for them"""


def pipeline(args: RuntimeArguments):
    """Pipeline that creates its own client from the provided runtime arguments"""
    if isinstance(args, INLINE_ARGUMENTS):
        return pipeline_with_client(args, None)
    with Client(
        local_directory=args.dask_tmp,
        n_workers=args.dask_n_workers,
        threads_per_worker=args.dask_threads_per_worker,
    ) as client:
        return pipeline_with_client(args, client)


def pipeline_with_client(args: RuntimeArguments, client: Client | None):
    """Pipeline that is run using an existing client.

    This can be useful in tests, or when a dask client requires some more complex
    configuration.
    """
    if not args:
        raise ValueError("args is required and should be subclass of RuntimeArguments")

    if isinstance(args, GenerateArguments):
        return generate_runner.run(args, client)
    if isinstance(args, TrainArguments):
        return train_runner.run(args)
    if isinstance(args, EvalArguments):
        return eval_runner.run(args, client)
    if isinstance(args, CostArguments):
        return cost_runner.run(args)
    if isinstance(args, InspectArguments):
        return inspect_runner.run(args)
    raise ValueError("unknown args type")
