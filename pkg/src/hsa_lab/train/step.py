"""One optimizer step: masked cross-entropy, backward, clipping, AdamW update."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

import hsa_lab.file_io as lab_io
from hsa_lab.datagen.tasks import Sample
from hsa_lab.model.decoder import HSAModel
from hsa_lab.train.optimizer import AdamW, clip_grad_norm

DUMP_FILE = "nonfinite_dump.json"


class NonFiniteLossError(FloatingPointError):
    """Training produced a NaN or infinite loss. ``batch_meta`` describes the offending batch."""

    def __init__(self, message: str, batch_meta: list[dict], dump_path=None):
        super().__init__(message)
        self.batch_meta = batch_meta
        self.dump_path = dump_path


@dataclass
class StepResult:
    loss: float
    """token-weighted mean cross-entropy of the batch"""
    grad_norm: float
    """global gradient norm before clipping"""
    clipped_grad_norm: float
    """global gradient norm after clipping"""
    lr: float
    n_tokens: int
    """loss-bearing positions in the batch"""


def batch_loss_tokens(sample: Sample) -> int:
    """Positions contributing to the loss: targets at index >= 1."""
    return int(np.count_nonzero(sample.loss_mask[1:]))


def train_step(
    model: HSAModel,
    batch: list[Sample],
    optimizer: AdamW,
    lr: float | None = None,
    max_grad_norm: float = 1.0,
    dump_dir=None,
) -> StepResult:
    """Forward and backward every sequence of the batch, then update once.

    Each sequence's mean loss is weighted by its share of the batch's
    loss-bearing tokens, so the step minimizes the mean over all target tokens.

    Raises:
        ValueError: if sequences differ in length or no position carries loss
        NonFiniteLossError: if the loss is not finite; parameters are left untouched
            and the batch metadata is written to ``nonfinite_dump.json`` in ``dump_dir``
    """
    if not batch:
        raise ValueError("batch should not be empty")
    lengths = {len(sample) for sample in batch}
    if len(lengths) != 1:
        raise ValueError(f"batch sequences should have equal length, got {sorted(lengths)}")
    counts = [batch_loss_tokens(sample) for sample in batch]
    total = sum(counts)
    if not total:
        raise ValueError("batch has no loss-bearing positions")

    optimizer.zero_grad()
    loss_value = 0.0
    for sample, count in zip(batch, counts):
        if not count:
            continue
        loss = model.loss(sample.tokens, sample.loss_mask) * (count / total)
        loss_value += float(loss.item())
        if not np.isfinite(loss_value):
            break
        loss.backward()

    if not np.isfinite(loss_value):
        optimizer.zero_grad()
        batch_meta = [dict(sample.meta, length=len(sample)) for sample in batch]
        dump_path = None
        if dump_dir is not None:
            dump_path = lab_io.append_paths_to_pointer(dump_dir, DUMP_FILE)
            lab_io.write_json_file(
                dump_path, {"loss": repr(loss_value), "step": optimizer.step_count, "batch": batch_meta}
            )
        message = f"non-finite loss {loss_value} at step {optimizer.step_count}"
        raise NonFiniteLossError(message, batch_meta, dump_path)

    grad_norm, clipped = clip_grad_norm(model.params, max_grad_norm)
    optimizer.step(lr)
    return StepResult(
        loss=loss_value,
        grad_norm=grad_norm,
        clipped_grad_norm=clipped,
        lr=optimizer.lr if lr is None else lr,
        n_tokens=total,
    )
