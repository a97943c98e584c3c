"""Byte-level vocabulary: 256 byte ids followed by 8 special tokens."""

from __future__ import annotations

import numpy as np

SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<sep>", "<query>", "<answer>", "<needle>", "<doc>")
BYTE_VOCAB = 256
VOCAB_SIZE = BYTE_VOCAB + len(SPECIAL_TOKENS)

PAD, BOS, EOS, SEP, QUERY, ANSWER, NEEDLE, DOC = range(BYTE_VOCAB, VOCAB_SIZE)


def encode(text: str) -> np.ndarray:
    """UTF-8 bytes of ``text`` as token ids.

    >>> encode("Hi").tolist()
    [72, 105]
    """
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.int64)


def decode(tokens, show_special: bool = True) -> str:
    """Text of a token sequence. Special tokens render as ``<name>`` or are dropped.

    >>> decode([BOS, 72, 105])
    '<bos>Hi'
    """
    pieces = []
    buffer = bytearray()
    for token in np.asarray(tokens, dtype=np.int64).tolist():
        if token < BYTE_VOCAB:
            buffer.append(token)
            continue
        if token >= VOCAB_SIZE:
            raise ValueError(f"token id {token} is outside the vocabulary")
        pieces.append(buffer.decode("utf-8", errors="replace"))
        buffer = bytearray()
        if show_special:
            pieces.append(SPECIAL_TOKENS[token - BYTE_VOCAB])
    pieces.append(buffer.decode("utf-8", errors="replace"))
    return "".join(pieces)


def special_token_id(name: str) -> int:
    """Id of a special token given its ``<name>``."""
    try:
        return BYTE_VOCAB + SPECIAL_TOKENS.index(name)
    except ValueError as error:
        raise ValueError(f"unknown special token {name}") from error
