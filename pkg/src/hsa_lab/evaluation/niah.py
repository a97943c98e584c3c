"""Needle-in-a-haystack accuracy: scoring, greedy decoding and length x depth grids."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from hsa_lab.datagen.tasks import Sample, generate_probe, solve
from hsa_lab.datagen.tokenizer import decode
from hsa_lab.model.decoder import HSAModel
from hsa_lab.model.incremental import IncrementalDecoder
from hsa_lab.numerics.tensor import no_grad
from hsa_lab.pipeline_resume_plan import print_progress

GRID_COLUMNS = ["task", "length", "depth", "accuracy", "n_samples"]


@dataclass
class ScoredSample:
    """Outcome of scoring one probe."""

    correct: bool
    """every answer token is the greedy choice given the correct prefix"""
    expected: str
    predicted: str
    """greedy output up to and including the first wrong token"""
    first_divergence: int | None
    """index into the answer of the first wrong token, None when correct"""
    meta: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "correct": self.correct,
            "expected": self.expected,
            "predicted": self.predicted,
            "first_divergence": self.first_divergence,
            **{key: self.meta[key] for key in ("task", "depths", "queries") if key in self.meta},
        }


def check_answer(sample: Sample) -> np.ndarray:
    """Stored answer tokens, after confirming them with the independent solver."""
    expected = sample.answer_tokens
    if not np.array_equal(solve(sample), expected):
        raise ValueError(f"stored answer of a {sample.task} sample disagrees with the solver")
    return expected


def score_sample(model: HSAModel, sample: Sample) -> ScoredSample:
    """Exact-match score from one forward pass over prompt and answer.

    Greedy decoding reproduces the answer iff, at every answer position, the
    argmax given the correct prefix is the answer token. One forward pass over the
    sample therefore decides the greedy outcome.
    """
    expected = check_answer(sample)
    start, stop = sample.answer_span
    with no_grad():
        logits = model.forward(sample.tokens[: stop - 1]).data
    predicted = np.argmax(logits[start - 1 : stop - 1], axis=-1)
    wrong = np.flatnonzero(predicted != expected)
    first = int(wrong[0]) if len(wrong) else None
    shown = predicted if first is None else predicted[: first + 1]
    return ScoredSample(
        correct=first is None,
        expected=decode(expected, show_special=False),
        predicted=decode(shown),
        first_divergence=first,
        meta=sample.meta,
    )


def greedy_decode(model: HSAModel, prompt, max_new_tokens: int, stop_tokens=()) -> np.ndarray:
    """Generate up to ``max_new_tokens`` by argmax, streaming through the incremental decoder."""
    decoder = IncrementalDecoder(model)
    logits = decoder.feed(prompt)[-1]
    generated = []
    for _ in range(max_new_tokens):
        token = int(np.argmax(logits))
        generated.append(token)
        if token in stop_tokens or len(generated) == max_new_tokens:
            break
        logits = decoder.step(token)
    return np.asarray(generated, dtype=np.int64)


@dataclass
class CellResult:
    task: str
    length: int
    depth: float
    accuracy: float
    n_samples: int
    records: list[dict] = field(default_factory=list)
    skipped: str = ""
    """reason the cell was not evaluated; empty when it was"""


def cell_rng(seed: int, length: int, depth: float) -> np.random.Generator:
    """Random stream of one grid cell; independent of evaluation order."""
    return np.random.default_rng([seed, length, int(round(depth * 1000))])


def eval_cell(
    model: HSAModel,
    task: str,
    length: int,
    depth: float,
    samples_per_cell: int,
    seed: int = 0,
    task_options: dict | None = None,
) -> CellResult:
    """Accuracy of ``samples_per_cell`` fresh probes at one (length, depth)."""
    rng = cell_rng(seed, length, depth)
    records = []
    for index in range(samples_per_cell):
        sample = generate_probe(task, length, depth, rng, **(task_options or {}))
        scored = score_sample(model, sample)
        records.append({"length": length, "depth": depth, "index": index, **scored.to_record()})
    correct = sum(record["correct"] for record in records)
    return CellResult(
        task=task,
        length=length,
        depth=depth,
        accuracy=correct / samples_per_cell,
        n_samples=samples_per_cell,
        records=records,
    )


def skipped_cell(task: str, length: int, depth: float, reason: str) -> CellResult:
    return CellResult(
        task=task, length=length, depth=depth, accuracy=float("nan"), n_samples=0, skipped=reason
    )


@dataclass
class AccuracyGrid:
    """Accuracy per (length, depth) cell of one task.

    Skipped cells keep their place with NaN accuracy and zero samples.
    """

    task: str
    lengths: list[int]
    depths: list[float]
    accuracy: np.ndarray
    """(len(lengths), len(depths))"""
    n_samples: np.ndarray
    """(len(lengths), len(depths))"""
    in_domain_boundary: int | None = None
    """training context length; longer lengths are out of domain"""
    top_k: int | None = None
    """retrieval top-k the grid was evaluated with"""
    skipped: dict = field(default_factory=dict)
    """(length, depth) -> reason"""

    def __post_init__(self):
        self.accuracy = np.asarray(self.accuracy, dtype=np.float64)
        self.n_samples = np.asarray(self.n_samples, dtype=np.int64)
        shape = (len(self.lengths), len(self.depths))
        if self.accuracy.shape != shape or self.n_samples.shape != shape:
            raise ValueError(f"grid arrays should have shape {shape}")
        evaluated = ~np.isnan(self.accuracy)
        if np.any((self.accuracy[evaluated] < 0) | (self.accuracy[evaluated] > 1)):
            raise ValueError("accuracy should be within [0, 1]")

    @classmethod
    def from_cells(
        cls,
        cells: list[CellResult],
        lengths: list[int],
        depths: list[float],
        in_domain_boundary: int | None = None,
        top_k: int | None = None,
    ) -> AccuracyGrid:
        accuracy = np.full((len(lengths), len(depths)), np.nan)
        n_samples = np.zeros((len(lengths), len(depths)), dtype=np.int64)
        skipped = {}
        task = cells[0].task if cells else ""
        for cell in cells:
            row, column = lengths.index(cell.length), depths.index(cell.depth)
            accuracy[row, column] = cell.accuracy
            n_samples[row, column] = cell.n_samples
            if cell.skipped:
                skipped[(cell.length, cell.depth)] = cell.skipped
        return cls(
            task=task,
            lengths=list(lengths),
            depths=list(depths),
            accuracy=accuracy,
            n_samples=n_samples,
            in_domain_boundary=in_domain_boundary,
            top_k=top_k,
            skipped=skipped,
        )

    def is_out_of_domain(self, length: int) -> bool:
        return self.in_domain_boundary is not None and length > self.in_domain_boundary

    def to_frame(self) -> pd.DataFrame:
        """One row per cell: task, length, depth, accuracy, n_samples."""
        rows = [
            {
                "task": self.task,
                "length": length,
                "depth": depth,
                "accuracy": self.accuracy[row, column],
                "n_samples": int(self.n_samples[row, column]),
            }
            for row, length in enumerate(self.lengths)
            for column, depth in enumerate(self.depths)
        ]
        return pd.DataFrame(rows, columns=GRID_COLUMNS)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, in_domain_boundary: int | None = None) -> AccuracyGrid:
        lengths = sorted(int(length) for length in frame["length"].unique())
        depths = sorted(float(depth) for depth in frame["depth"].unique())
        accuracy = np.full((len(lengths), len(depths)), np.nan)
        n_samples = np.zeros((len(lengths), len(depths)), dtype=np.int64)
        for row in frame.itertuples():
            accuracy[lengths.index(int(row.length)), depths.index(float(row.depth))] = row.accuracy
            n_samples[lengths.index(int(row.length)), depths.index(float(row.depth))] = row.n_samples
        skipped = {
            (length, depth): "skipped"
            for i, length in enumerate(lengths)
            for j, depth in enumerate(depths)
            if n_samples[i, j] == 0
        }
        task = str(frame["task"].iloc[0]) if len(frame) else ""
        return cls(task, lengths, depths, accuracy, n_samples, in_domain_boundary, skipped=skipped)

    def mean_by_length(self) -> pd.Series:
        """Accuracy averaged over depths, per length (skipped cells ignored)."""
        with np.errstate(invalid="ignore"):
            means = [np.nanmean(row) if not np.all(np.isnan(row)) else np.nan for row in self.accuracy]
        return pd.Series(means, index=self.lengths, name="accuracy")

    def summary(self) -> str:
        """Plain-text table; out-of-domain lengths are marked with ``*``."""
        frame = pd.DataFrame(
            [
                [
                    "skipped" if (length, depth) in self.skipped else f"{self.accuracy[row, column]:.2f}"
                    for column, depth in enumerate(self.depths)
                ]
                for row, length in enumerate(self.lengths)
            ],
            index=[f"{length}{'*' if self.is_out_of_domain(length) else ''}" for length in self.lengths],
            columns=[f"{depth:g}" for depth in self.depths],
        )
        frame.index.name = "length"
        lines = [f"{self.task} accuracy (rows: length, columns: depth)"]
        if self.top_k is not None:
            lines[0] += f", top_k={self.top_k}"
        lines.append(frame.to_string())
        if self.in_domain_boundary is not None:
            lines.append(f"* out of domain (beyond the {self.in_domain_boundary}-token training context)")
        return "\n".join(lines)


def eval_niah(
    model: HSAModel,
    task: str,
    lengths: list[int],
    depths: list[float],
    samples_per_cell: int = 50,
    seed: int = 0,
    in_domain_boundary: int | None = None,
    max_length: int | None = None,
    task_options: dict | None = None,
    progress_bar: bool = False,
) -> AccuracyGrid:
    """Evaluate every (length, depth) cell in this process.

    Cells longer than ``max_length``, or that run out of memory, are kept in the
    grid as skipped.
    """
    cells = []
    plan = [(length, depth) for length in lengths for depth in depths]
    for length, depth in print_progress(plan, stage_name="Evaluating", use_progress_bar=progress_bar):
        if max_length is not None and length > max_length:
            cells.append(skipped_cell(task, length, depth, f"length exceeds max_length {max_length}"))
            continue
        try:
            cells.append(eval_cell(model, task, length, depth, samples_per_cell, seed, task_options))
        except MemoryError:
            cells.append(skipped_cell(task, length, depth, "out of memory"))
    return AccuracyGrid.from_cells(cells, list(lengths), list(depths), in_domain_boundary, model.config.top_k)
