"""Utility to hold all arguments required throughout dataset generation"""

from __future__ import annotations

from dataclasses import dataclass, field

from hsa_lab.datagen.corpus import MIXTURE_COMPONENTS
from hsa_lab.datagen.tasks import TASKS
from hsa_lab.runtime_arguments import RuntimeArguments, parse_float_list, parse_int_list

DEFAULT_DEPTHS = [0.0, 0.25, 0.5, 0.75, 1.0]


@dataclass
class GenerateArguments(RuntimeArguments):
    """Data class for holding dataset generation arguments"""

    ## Dataset
    task: str = "sniah"
    """probe task (sniah, mqniah, vartrack, selfcopy) or corpus component
    (lm, effective, copy) to generate"""
    lengths: list[int] | str = field(default_factory=lambda: [1024])
    """sample lengths in tokens; a comma-separated string is accepted"""
    depths: list[float] | str | None = None
    """needle depths for probe tasks. Defaults to 0, 0.25, 0.5, 0.75, 1.
    Ignored for corpus components, whose samples have no depth."""
    samples_per_cell: int = 50
    """number of samples for every (length, depth) combination"""
    samples_per_shard: int = 50
    """maximum number of samples generated by one task. Shards are the unit of
    parallelism and of resumption."""

    ## Task options
    n_queries: int = 2
    """mqniah: number of queried keys"""
    n_kv: int = 6
    """mqniah: number of key-value needles"""
    chain_length: int = 3
    """vartrack: variables in the queried chain"""
    n_distractor_chains: int = 1
    """vartrack: additional chains holding other values"""
    effective_length: int | None = None
    """effective: minimum distance between a fact and its recall"""
    validate: bool = True
    """check every probe's stored answer against the independent solver"""

    def __post_init__(self):
        self._check_arguments()

    def _check_arguments(self):
        super()._check_arguments()
        known = set(TASKS) | set(MIXTURE_COMPONENTS)
        if self.task not in known:
            raise ValueError(f"task should be one of {sorted(known)}")
        self.lengths = parse_int_list(self.lengths, "lengths")
        if self.is_probe_task and self.task != "selfcopy":
            self.depths = parse_float_list(
                self.depths if self.depths is not None else DEFAULT_DEPTHS, "depths"
            )
        else:
            self.depths = [None]
        if self.samples_per_cell <= 0:
            raise ValueError("samples_per_cell should be greater than 0")
        if self.samples_per_shard <= 0:
            raise ValueError("samples_per_shard should be greater than 0")
        if not 1 <= self.n_queries <= self.n_kv:
            raise ValueError("n_queries should be between 1 and n_kv")
        if self.chain_length < 2:
            raise ValueError("chain_length should be at least 2")

    @property
    def is_probe_task(self) -> bool:
        return self.task in TASKS

    @property
    def task_options(self) -> dict:
        """Keyword options forwarded to the probe generator."""
        return {
            "n_queries": self.n_queries,
            "n_kv": self.n_kv,
            "chain_length": self.chain_length,
            "n_distractor_chains": self.n_distractor_chains,
        }

    def shard_plan(self) -> list[tuple[str, int, float | None, int]]:
        """Every shard as ``(key, length, depth, n_samples)``, in a fixed order.

        Shard keys are stable given the arguments, so a resumed run regenerates
        exactly the missing shards.
        """
        shards = []
        index = 0
        for length in self.lengths:
            for depth in self.depths:
                remaining = self.samples_per_cell
                while remaining > 0:
                    count = min(remaining, self.samples_per_shard)
                    shards.append((f"shard_{index}", length, depth, count))
                    remaining -= count
                    index += 1
        return shards

    def provenance_dict(self) -> dict:
        """Generation parameters written next to the dataset."""
        return {
            "task": self.task,
            "lengths": self.lengths,
            "depths": self.depths,
            "samples_per_cell": self.samples_per_cell,
            "samples_per_shard": self.samples_per_shard,
            "seed": self.seed,
            **(self.task_options if self.is_probe_task else {"effective_length": self.effective_length}),
        }
