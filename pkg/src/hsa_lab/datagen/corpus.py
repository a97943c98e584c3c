"""Training streams: filler documents, packing, probe injection and mixture batches."""

from __future__ import annotations

from collections.abc import Iterable, Iterator, Mapping
from functools import partial

import numpy as np

from hsa_lab.datagen.filler import filler_text, filler_tokens
from hsa_lab.datagen.tasks import TASKS, Sample, gen_selfcopy_filler, generate_probe, place_items
from hsa_lab.datagen.tokenizer import BOS, SEP, encode

FACT_TEMPLATE = "Note: the code of {name} is {code}. "
RECALL_TEMPLATE = "Recall: the code of {name} is {code}. "
MAX_FACT_PAIRS = 8


def _lm_sample(tokens: np.ndarray, meta: dict) -> Sample:
    loss_mask = np.ones(len(tokens), dtype=bool)
    loss_mask[0] = False
    return Sample(tokens=tokens, loss_mask=loss_mask, meta=meta)


def lm_document(length: int, rng: np.random.Generator) -> Sample:
    """``<bos>`` followed by filler, loss on every position after the first."""
    if length < 2:
        raise ValueError("documents need length >= 2")
    tokens = np.concatenate([[BOS], filler_tokens(length - 1, rng)]).astype(np.int64)
    return _lm_sample(tokens, {"task": "lm"})


def effective_length_document(length: int, distance: int, rng: np.random.Generator) -> Sample:
    """Filler with coreferent facts planted at least ``distance`` tokens apart.

    Each fact ``Note: the code of NAME is DIGITS.`` is repeated later as
    ``Recall: ...``, so predicting the recalled digits needs context spanning
    ``distance`` tokens or more.
    """
    if distance < 1:
        raise ValueError("distance should be positive")
    n_pairs = int(min(MAX_FACT_PAIRS, max(1, length // (2 * distance))))
    names = ["".join(chr(97 + c) for c in rng.integers(0, 26, 6)) for _ in range(n_pairs)]
    codes = [f"{int(rng.integers(0, 10**6)):06d}" for _ in range(n_pairs)]
    items = []
    for name, code in zip(names, codes):
        items += [FACT_TEMPLATE.format(name=name, code=code), RECALL_TEMPLATE.format(name=name, code=code)]
    filler_length = length - 1 - sum(len(item) for item in items)
    if filler_length < distance:
        raise ValueError(f"length {length} is too small for facts {distance} tokens apart")
    depths = []
    for _ in range(n_pairs):
        start = int(rng.integers(0, filler_length - distance + 1))
        stop = start + distance + int(rng.integers(0, filler_length - distance - start + 1))
        depths += [start / filler_length, stop / filler_length]
    haystack, starts = place_items(items, depths, filler_length, rng)
    tokens = np.concatenate([[BOS], encode(haystack)]).astype(np.int64)
    meta = {
        "task": "effective",
        "distance": distance,
        "codes": dict(zip(names, codes)),
        "fact_positions": [1 + start for start in starts[0::2]],
        "recall_positions": [1 + start for start in starts[1::2]],
    }
    return _lm_sample(tokens, meta)


def copy_document(length: int, rng: np.random.Generator, segment_length: int = 256) -> Sample:
    """One filler segment repeated (separated by ``<sep>``) until ``length`` is filled.

    Later repeats are predictable only with context reaching back to the first copy.
    """
    if length < 2:
        raise ValueError("documents need length >= 2")
    segment = np.concatenate([encode(filler_text(max(1, segment_length), rng)), [SEP]])
    repeats = int(np.ceil((length - 1) / len(segment)))
    tokens = np.concatenate([[BOS], np.tile(segment, repeats)[: length - 1]]).astype(np.int64)
    return _lm_sample(tokens, {"task": "copy", "segment_length": len(segment)})


def pack_documents(samples: Iterable[Sample], context_length: int) -> Iterator[Sample]:
    """Concatenate documents with a ``<sep>`` between them and cut fixed-length rows.

    No cross-document masking is applied. The trailing partial row is dropped.
    """
    if context_length < 1:
        raise ValueError("context_length should be positive")
    token_buffer: list[np.ndarray] = []
    mask_buffer: list[np.ndarray] = []
    tasks: list[str] = []
    buffered = 0
    for sample in samples:
        if buffered:
            token_buffer.append(np.array([SEP], dtype=np.int64))
            mask_buffer.append(np.array([False]))
            buffered += 1
        token_buffer.append(sample.tokens)
        mask_buffer.append(sample.loss_mask)
        tasks.append(sample.task)
        buffered += len(sample)
        while buffered >= context_length:
            tokens = np.concatenate(token_buffer)
            mask = np.concatenate(mask_buffer)
            yield Sample(
                tokens=tokens[:context_length],
                loss_mask=mask[:context_length],
                meta={"task": "packed", "sources": sorted(set(tasks))},
            )
            token_buffer, mask_buffer = [tokens[context_length:]], [mask[context_length:]]
            buffered = len(token_buffer[0])
            tasks = [sample.task] if buffered else []


def packed_lm(length: int, rng: np.random.Generator, min_document: int = 64) -> Sample:
    """One row of ``length`` tokens packed from filler documents of random lengths."""

    def documents():
        while True:
            yield lm_document(int(rng.integers(min(min_document, length), length + 1)), rng)

    return next(pack_documents(documents(), length))


def probe_generator(task: str):
    """``(length, rng) -> Sample`` for a probe task at a random depth."""
    if task not in TASKS:
        raise ValueError(f"unknown probe task {task!r}")
    return partial(_random_depth_probe, task)


def _random_depth_probe(task: str, length: int, rng: np.random.Generator) -> Sample:
    return generate_probe(task, length, None, rng)


def inject_probes(
    stream: Iterable[Sample],
    probability: float = 0.01,
    rng: np.random.Generator | None = None,
    probe_tasks: tuple[str, ...] = ("sniah",),
) -> Iterator[Sample]:
    """Independently replace each sample with a probe of the same length.

    Args:
        stream: samples to pass through
        probability (float): chance that any one sample is converted
        rng: random generator; one draw per sample decides the conversion
        probe_tasks: probe kinds to choose from, uniformly
    Raises:
        ValueError: if ``probability`` is outside [0, 1], or a converted sample is
            too short to hold the probe
    """
    if not 0.0 <= probability <= 1.0:
        raise ValueError("probability should be within [0, 1]")
    if not probe_tasks:
        raise ValueError("probe_tasks should not be empty")
    rng = rng if rng is not None else np.random.default_rng()
    generators = [probe_generator(task) for task in probe_tasks]
    for sample in stream:
        if rng.random() < probability:
            generator = generators[int(rng.integers(0, len(generators)))]
            probe = generator(len(sample), rng)
            probe.meta["injected"] = True
            yield probe
        else:
            yield sample


def mixture_generators(effective_length: int | None = None) -> dict:
    """Name -> ``(length, rng) -> Sample`` for every mixture component."""

    def effective(length, rng):
        return effective_length_document(length, effective_length or max(1, length // 4), rng)

    return {
        "lm": packed_lm,
        "effective": effective,
        "copy": copy_document,
        "selfcopy": gen_selfcopy_filler,
        "sniah": probe_generator("sniah"),
        "mqniah": probe_generator("mqniah"),
        "vartrack": probe_generator("vartrack"),
    }


MIXTURE_COMPONENTS = tuple(mixture_generators())


def check_mixture(mixture: Mapping[str, float]) -> dict[str, float]:
    """Normalized weights; unknown names, negative or all-zero weights are rejected."""
    unknown = sorted(set(mixture) - set(MIXTURE_COMPONENTS))
    if unknown:
        raise ValueError(
            f"unknown mixture components {unknown} (expected some of {list(MIXTURE_COMPONENTS)})"
        )
    if any(weight < 0 for weight in mixture.values()):
        raise ValueError("mixture weights should be non-negative")
    total = float(sum(mixture.values()))
    if total <= 0:
        raise ValueError("mixture weights should not all be zero")
    return {name: float(weight) / total for name, weight in sorted(mixture.items())}


def sample_batch(
    mixture: Mapping[str, float],
    context_length: int,
    batch_size: int,
    rng: np.random.Generator,
    probe_probability: float = 0.0,
    probe_tasks: tuple[str, ...] = ("sniah",),
    effective_length: int | None = None,
) -> list[Sample]:
    """``batch_size`` rows of exactly ``context_length`` tokens drawn from the mixture."""
    weights = check_mixture(mixture)
    generators = mixture_generators(effective_length)
    names = list(weights)
    probabilities = np.array([weights[name] for name in names])

    def rows():
        for _ in range(batch_size):
            name = names[int(rng.choice(len(names), p=probabilities))]
            yield generators[name](context_length, rng)

    return list(inject_probes(rows(), probe_probability, rng, probe_tasks))

