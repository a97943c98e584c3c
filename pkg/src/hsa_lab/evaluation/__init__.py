"""Length-generalization grids, perplexity, the analytical cost model and figures."""

from .arguments import CostArguments, EvalArguments, InspectArguments
from .cost_model import CostReport, cost_model, crossover_length
from .niah import AccuracyGrid, eval_cell, eval_niah, greedy_decode, score_sample
from .perplexity import eval_ppl
