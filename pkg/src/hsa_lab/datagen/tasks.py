"""Synthetic probe tasks (needle-in-a-haystack, variable tracking, self-copy) and their
independent solvers.

Every sample is laid out as::

    <bos> haystack <query> question <answer> answer

(self-copy samples are ``seq <sep> seq``). The loss mask flags positions whose
token is a training target; position ``i`` is predicted from positions ``< i``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from hsa_lab.datagen.filler import filler_text
from hsa_lab.datagen.tokenizer import ANSWER, BOS, QUERY, SEP, decode, encode

NEEDLE_TEMPLATE = "One of the special magic numbers for {key} is: {value}. "
NEEDLE_PATTERN = re.compile(r"One of the special magic numbers for (\d{6}) is: (\d{6})\. ")
ASSIGN_VALUE_TEMPLATE = "VAR {name} = {value}. "
ASSIGN_ALIAS_TEMPLATE = "VAR {name} = VAR {source}. "
ASSIGN_PATTERN = re.compile(r"VAR ([A-Z]{5}) = (?:(\d{5})|VAR ([A-Z]{5}))\. ")

TASKS = ("sniah", "mqniah", "vartrack", "selfcopy")


@dataclass
class Sample:
    """Token sequence plus loss mask plus task metadata."""

    tokens: np.ndarray
    """token ids, (n,)"""
    loss_mask: np.ndarray
    """True where the token is a loss target, (n,)"""
    meta: dict = field(default_factory=dict)
    """task kind, needles, depths, expected answer and its position"""

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        self.loss_mask = np.asarray(self.loss_mask, dtype=bool)
        if self.tokens.ndim != 1 or self.tokens.shape != self.loss_mask.shape:
            raise ValueError(f"tokens {self.tokens.shape} and loss_mask {self.loss_mask.shape} should match")

    def __len__(self):
        return len(self.tokens)

    @property
    def task(self) -> str:
        return self.meta.get("task", "")

    @property
    def answer_span(self) -> tuple[int, int]:
        """(start, stop) token positions of the expected answer."""
        start = self.meta["answer_start"]
        return start, start + self.meta["answer_length"]

    @property
    def answer_tokens(self) -> np.ndarray:
        start, stop = self.answer_span
        return self.tokens[start:stop]

    def to_record(self) -> dict:
        """JSON-ready ``{tokens, loss_mask, meta}``."""
        return {
            "tokens": self.tokens.tolist(),
            "loss_mask": self.loss_mask.astype(int).tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_record(cls, record: dict) -> Sample:
        return cls(tokens=record["tokens"], loss_mask=record["loss_mask"], meta=dict(record.get("meta", {})))


## Layout helpers


def _prompt_tokens(question: str, answer: str) -> tuple[np.ndarray, np.ndarray]:
    prompt = np.concatenate([[QUERY], encode(question), [ANSWER]])
    return prompt.astype(np.int64), encode(answer)


def place_items(items: list[str], depths: list[float], filler_length: int, rng: np.random.Generator):
    """Insert text items into ``filler_length`` bytes of filler at fractional depths.

    Returns the haystack text and each item's start offset in it.
    """
    filler = filler_text(filler_length, rng)
    offsets = [int(round(depth * filler_length)) for depth in depths]
    order = sorted(range(len(items)), key=lambda i: (offsets[i], i))
    pieces = []
    starts = [0] * len(items)
    cursor = 0
    shift = 0
    for i in order:
        pieces.append(filler[cursor : offsets[i]])
        starts[i] = offsets[i] + shift
        pieces.append(items[i])
        shift += len(items[i])
        cursor = offsets[i]
    pieces.append(filler[cursor:])
    return "".join(pieces), starts


def _assemble(haystack: str, question: str, answer: str, meta: dict) -> Sample:
    prompt, answer_tokens = _prompt_tokens(question, answer)
    tokens = np.concatenate([[BOS], encode(haystack), prompt, answer_tokens]).astype(np.int64)
    loss_mask = np.zeros(len(tokens), dtype=bool)
    answer_start = len(tokens) - len(answer_tokens)
    loss_mask[answer_start:] = True
    meta = dict(meta, answer=answer, answer_start=answer_start, answer_length=len(answer_tokens))
    return Sample(tokens=tokens, loss_mask=loss_mask, meta=meta)


def _random_name(rng: np.random.Generator) -> str:
    return "".join(chr(65 + c) for c in rng.integers(0, 26, 5))


def _random_digits(rng: np.random.Generator, width: int) -> str:
    return f"{int(rng.integers(0, 10**width)):0{width}d}"


def _distinct(rng: np.random.Generator, count: int, make) -> list[str]:
    """``count`` distinct strings from ``make(rng)``, redrawing on collision."""
    seen: list[str] = []
    while len(seen) < count:
        candidate = make(rng)
        if candidate not in seen:
            seen.append(candidate)
    return seen


def _niah_question(keys: list[str]) -> str:
    if len(keys) == 1:
        return f"What is the special magic number for {keys[0]}?"
    listed = ", ".join(keys[:-1]) + f" and {keys[-1]}"
    return f"What are the special magic numbers for {listed}?"


## Generators


def gen_mqniah(
    length: int,
    rng: np.random.Generator,
    n_queries: int = 2,
    n_kv: int = 6,
    query_depth: float | None = None,
    task: str = "mqniah",
) -> Sample:
    """Multi-query needle-in-a-haystack.

    ``n_kv`` key-value needles with distinct 6-digit keys are placed at random
    depths; ``n_queries`` of them are asked for, and the answer lists their values
    in query order.

    Args:
        length (int): total sample length in tokens
        rng: random generator
        n_queries (int): how many of the keys are queried
        n_kv (int): number of needles
        query_depth (float): if given, the first queried needle is placed at this depth
        task (str): task name recorded in the metadata
    Raises:
        ValueError: if ``n_queries > n_kv`` or ``length`` cannot hold the needles and prompt
    """
    if not 1 <= n_queries <= n_kv:
        raise ValueError(f"n_queries should be between 1 and n_kv ({n_kv}), got {n_queries}")
    keys = _distinct(rng, n_kv, lambda r: _random_digits(r, 6))
    values = [_random_digits(rng, 6) for _ in range(n_kv)]
    queried = [int(i) for i in rng.choice(n_kv, size=n_queries, replace=False)]
    depths = [float(depth) for depth in rng.random(n_kv)]
    if query_depth is not None:
        if not 0.0 <= query_depth <= 1.0:
            raise ValueError("depth should be within [0, 1]")
        depths[queried[0]] = float(query_depth)

    needles = [NEEDLE_TEMPLATE.format(key=key, value=value) for key, value in zip(keys, values)]
    question = _niah_question([keys[i] for i in queried])
    answer = " ".join(values[i] for i in queried)
    fixed = 1 + sum(len(needle) for needle in needles) + len(encode(question)) + 2 + len(answer)
    filler_length = length - fixed
    if filler_length < 0:
        raise ValueError(f"length {length} is too small for the needles and prompt (need >= {fixed})")
    haystack, starts = place_items(needles, depths, filler_length, rng)
    meta = {
        "task": task,
        "keys": keys,
        "values": values,
        "queries": [keys[i] for i in queried],
        "depths": depths,
        "needle_positions": [1 + start for start in starts],
        "filler_length": filler_length,
    }
    return _assemble(haystack, question, answer, meta)


def gen_sniah(length: int, depth: float, rng: np.random.Generator) -> Sample:
    """Single needle at fractional ``depth`` of the filler; the answer is its 6-digit value."""
    return gen_mqniah(length, rng, n_queries=1, n_kv=1, query_depth=depth, task="sniah")


def gen_vartrack(
    length: int,
    chain_length: int,
    rng: np.random.Generator,
    n_distractor_chains: int = 0,
    shuffle: bool = False,
    start_depth: float | None = None,
) -> Sample:
    """Variable tracking: ``X1 = v; X2 = X1; ...`` scattered through filler.

    The question asks for every variable equal to ``v``; the answer lists them in
    sorted order. Distractor chains hold other values.

    Args:
        length (int): total sample length in tokens
        chain_length (int): number of variables in the queried chain (>= 2)
        rng: random generator
        n_distractor_chains (int): additional chains with different values
        shuffle (bool): place statements in random order instead of chain order
        start_depth (float): if given, the queried chain starts at this depth
    """
    if chain_length < 2:
        raise ValueError("chain_length should be at least 2")
    n_chains = 1 + n_distractor_chains
    names = _distinct(rng, chain_length * n_chains, _random_name)
    values = _distinct(rng, n_chains, lambda r: _random_digits(r, 5))

    statements: list[str] = []
    depths: list[float] = []
    for chain in range(n_chains):
        chain_names = names[chain * chain_length : (chain + 1) * chain_length]
        lower = start_depth if (chain == 0 and start_depth is not None) else 0.0
        chain_depths = lower + (1.0 - lower) * rng.random(chain_length)
        if not shuffle:
            chain_depths = np.sort(chain_depths)
        if chain == 0 and start_depth is not None:
            chain_depths[np.argmin(chain_depths)] = start_depth
        for position, name in enumerate(chain_names):
            if position == 0:
                statements.append(ASSIGN_VALUE_TEMPLATE.format(name=name, value=values[chain]))
            else:
                statements.append(ASSIGN_ALIAS_TEMPLATE.format(name=name, source=chain_names[position - 1]))
        depths.extend(float(depth) for depth in chain_depths)

    value = values[0]
    question = f"Find all variables that are assigned the value {value} in the text above."
    answer = " ".join(sorted(names[:chain_length]))
    fixed = 1 + sum(len(statement) for statement in statements) + len(encode(question)) + 2 + len(answer)
    filler_length = length - fixed
    if filler_length < 0:
        raise ValueError(f"length {length} is too small for the assignments and prompt (need >= {fixed})")
    haystack, starts = place_items(statements, depths, filler_length, rng)
    meta = {
        "task": "vartrack",
        "chain": names[:chain_length],
        "value": value,
        "distractor_values": values[1:],
        "depths": depths[:chain_length],
        "needle_positions": [1 + start for start in starts[:chain_length]],
        "filler_length": filler_length,
    }
    return _assemble(haystack, question, answer, meta)


def gen_selfcopy(seq) -> Sample:
    """``seq <sep> seq`` with the loss on the second copy only."""
    seq = np.asarray(seq, dtype=np.int64)
    if seq.ndim != 1 or seq.size == 0:
        raise ValueError("self-copy needs a non-empty 1-d sequence")
    if (seq == SEP).any():
        raise ValueError("self-copy sequence should not contain the separator token")
    tokens = np.concatenate([seq, [SEP], seq])
    loss_mask = np.zeros(len(tokens), dtype=bool)
    loss_mask[len(seq) + 1 :] = True
    meta = {"task": "selfcopy", "answer_start": len(seq) + 1, "answer_length": len(seq)}
    return Sample(tokens=tokens, loss_mask=loss_mask, meta=meta)


def gen_selfcopy_filler(length: int, rng: np.random.Generator) -> Sample:
    """A self-copy sample of exactly ``length`` tokens built from filler text."""
    half = (length - 1) // 2
    if half < 1:
        raise ValueError("self-copy samples need length >= 3")
    sample = gen_selfcopy(encode(filler_text(half, rng)))
    pad = length - len(sample)
    if not pad:
        return sample
    meta = dict(sample.meta, answer_start=sample.meta["answer_start"] + pad)
    return Sample(
        tokens=np.concatenate([[BOS] * pad, sample.tokens]),
        loss_mask=np.concatenate([np.zeros(pad, dtype=bool), sample.loss_mask]),
        meta=meta,
    )


## Independent solvers: they read only the tokens


def _split_prompt(tokens: np.ndarray) -> tuple[str, str]:
    """Haystack text and question text of a probe sample."""
    tokens = np.asarray(tokens)
    query_at = np.flatnonzero(tokens == QUERY)
    answer_at = np.flatnonzero(tokens == ANSWER)
    if len(query_at) != 1 or len(answer_at) != 1 or answer_at[0] < query_at[0]:
        raise ValueError("sample does not contain exactly one query/answer prompt")
    haystack = decode(tokens[: query_at[0]], show_special=False)
    question = decode(tokens[query_at[0] + 1 : answer_at[0]], show_special=False)
    return haystack, question


def solve_niah(tokens) -> str:
    """Read every needle in the haystack and answer the question."""
    haystack, question = _split_prompt(tokens)
    found: dict[str, str] = {}
    for key, value in NEEDLE_PATTERN.findall(haystack):
        if found.get(key, value) != value:
            raise ValueError(f"conflicting needles for key {key}")
        found[key] = value
    asked = re.findall(r"\d{6}", question)
    if not asked:
        raise ValueError("question names no key")
    missing = [key for key in asked if key not in found]
    if missing:
        raise ValueError(f"no needle for keys {missing}")
    return " ".join(found[key] for key in asked)


def solve_vartrack(tokens) -> str:
    """Follow every assignment chain and list the variables holding the queried value."""
    haystack, question = _split_prompt(tokens)
    direct: dict[str, str] = {}
    alias: dict[str, str] = {}
    for name, value, source in ASSIGN_PATTERN.findall(haystack):
        if value:
            direct[name] = value
        else:
            alias[name] = source
    resolved = dict(direct)
    changed = True
    while changed:
        changed = False
        for name, source in alias.items():
            if name not in resolved and source in resolved:
                resolved[name] = resolved[source]
                changed = True
    match = re.search(r"value (\d{5})", question)
    if not match:
        raise ValueError("question names no value")
    return " ".join(sorted(name for name, value in resolved.items() if value == match.group(1)))


def solve_selfcopy(tokens) -> np.ndarray:
    """The copy target: everything between the start and the first separator."""
    tokens = np.asarray(tokens)
    separators = np.flatnonzero(tokens == SEP)
    if not len(separators):
        raise ValueError("self-copy sample has no separator")
    prefix = tokens[: separators[0]]
    return prefix[prefix != BOS]


def solve(sample: Sample) -> np.ndarray:
    """Expected answer tokens recomputed from the sample's tokens alone."""
    if sample.task in ("sniah", "mqniah"):
        return encode(solve_niah(sample.tokens))
    if sample.task == "vartrack":
        return encode(solve_vartrack(sample.tokens))
    if sample.task == "selfcopy":
        return solve_selfcopy(sample.tokens)
    raise ValueError(f"no solver for task {sample.task!r}")


def validate_sample(sample: Sample):
    """Check the stored answer against the independent solver and the token positions.

    Raises:
        ValueError: on any disagreement
    """
    expected = sample.answer_tokens
    if len(expected) != sample.meta["answer_length"]:
        raise ValueError("answer span runs past the end of the sample")
    if "answer" in sample.meta and not np.array_equal(expected, encode(sample.meta["answer"])):
        raise ValueError("recorded answer text does not match the answer tokens")
    solved = solve(sample)
    if not np.array_equal(solved, expected):
        raise ValueError(f"solver answer {decode(solved)!r} differs from stored answer {decode(expected)!r}")
    start, stop = sample.answer_span
    if not sample.loss_mask[start:stop].all():
        raise ValueError("answer positions are not all loss-bearing")


def measure_depths(sample: Sample) -> list[float]:
    """Depth of each needle (or queried-chain statement) measured from the tokens.

    Depth is the fraction of filler preceding the item, so 0 means at the start
    of the haystack and 1 means immediately before the prompt.
    """
    haystack, _ = _split_prompt(sample.tokens)
    pattern = NEEDLE_PATTERN if sample.task in ("sniah", "mqniah") else ASSIGN_PATTERN
    spans = [(m.start(), m.end()) for m in pattern.finditer(haystack)]
    filler_length = len(haystack) - sum(end - start for start, end in spans)
    depths = []
    consumed = 0
    for start, end in spans:
        depths.append((start - consumed) / filler_length if filler_length else 0.0)
        consumed += end - start
    return depths


def generate_probe(
    task: str, length: int, depth: float | None, rng: np.random.Generator, **options
) -> Sample:
    """One probe sample of ``task`` with its (first queried) item at ``depth``.

    ``options`` are forwarded to the generator (``n_queries``, ``n_kv`` for
    mqniah; ``chain_length``, ``n_distractor_chains``, ``shuffle`` for vartrack).
    A ``depth`` of None draws a random depth.
    """
    if depth is None:
        depth = float(rng.random())
    if task == "sniah":
        return gen_sniah(length, depth, rng)
    if task == "mqniah":
        return gen_mqniah(
            length, rng, n_queries=options.get("n_queries", 2), n_kv=options.get("n_kv", 6), query_depth=depth
        )
    if task == "vartrack":
        return gen_vartrack(
            length,
            options.get("chain_length", 3),
            rng,
            n_distractor_chains=options.get("n_distractor_chains", 1),
            shuffle=options.get("shuffle", False),
            start_depth=depth,
        )
    if task == "selfcopy":
        return gen_selfcopy_filler(length, rng)
    raise ValueError(f"unknown task {task!r} (expected one of {list(TASKS)})")
