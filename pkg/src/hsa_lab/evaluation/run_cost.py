"""Write the analytical cost model of a configuration: table, figure and manifest."""

from __future__ import annotations

import hsa_lab.file_io as lab_io
from hsa_lab.evaluation.arguments import CostArguments
from hsa_lab.evaluation.cost_model import CostReport, cost_model
from hsa_lab.evaluation.figures import cost_figure, save_svg
from hsa_lab.manifest import RunManifest
from hsa_lab.pipeline_resume_plan import print_progress

COST_FILE = "cost.csv"
COST_FIGURE = "cost.svg"
CROSSOVER_FILE = "crossover.json"


def run(args, client=None) -> CostReport:  # pylint: disable=unused-argument
    """Compute the cost report for every requested length."""
    if not args:
        raise TypeError("args is required and should be type CostArguments")
    if not isinstance(args, CostArguments):
        raise TypeError("args must be type CostArguments")

    with print_progress(
        total=3,
        stage_name="Costing",
        pipeline_name="cost",
        use_progress_bar=args.progress_bar,
        simple_progress_bar=args.simple_progress_bar,
        tqdm_kwargs=args.tqdm_kwargs,
    ) as step_progress:
        report = cost_model(args.model_config, args.lengths, args.precision)
        report.to_frame().to_csv(str(args.run_path / COST_FILE), index=False)
        step_progress.update(1)
        save_svg(cost_figure(report), args.run_path / COST_FIGURE)
        step_progress.update(1)
        lab_io.write_json_file(
            args.run_path / CROSSOVER_FILE,
            {
                "crossover": report.crossover,
                "precision": args.precision,
                "model": args.model_config.to_dict(),
            },
            canonical=True,
        )
        RunManifest(
            command="cost",
            config_hash=args.model_config.config_hash(),
            architecture_hash=args.model_config.architecture_hash(),
            seed=args.seed,
            grids=[COST_FILE],
            figures=[COST_FIGURE],
            records=[CROSSOVER_FILE],
        ).write(args.run_path)
        step_progress.update(1)

    print(report.summary())
    return report
