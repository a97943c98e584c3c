"""Seeded filler text: random sentences over a small word list, with no digits."""

from __future__ import annotations

import numpy as np

from hsa_lab.datagen.tokenizer import encode

WORDS = (
    "the", "grass", "is", "green", "sky", "blue", "sun", "warm", "river", "flows", "slowly",
    "toward", "sea", "a", "small", "bird", "sings", "in", "morning", "light", "old", "tree",
    "stands", "near", "quiet", "house", "children", "play", "by", "stone", "wall", "wind",
    "carries", "scent", "of", "rain", "across", "open", "field", "mountain", "rises", "above",
    "valley", "clouds", "drift", "over", "hills", "farmer", "walks", "along", "road", "dog",
    "sleeps", "under", "porch", "market", "opens", "early", "bread", "smells", "fresh", "lamp",
    "glows", "window", "night", "falls", "soft", "snow", "covers", "roof", "boat", "rests",
    "shore", "waves", "break", "gently", "path", "winds", "through", "forest", "fox", "hides",
    "behind", "rock", "bell", "rings", "distant", "town", "bridge", "crosses", "stream",
    "garden", "blooms", "spring", "moon", "shines", "bright", "autumn", "leaves", "turn", "gold",
)  # fmt: skip


def filler_sentence(rng: np.random.Generator, min_words: int = 4, max_words: int = 10) -> str:
    """One capitalized sentence ending with a period and a space."""
    count = int(rng.integers(min_words, max_words + 1))
    words = [WORDS[i] for i in rng.integers(0, len(WORDS), size=count)]
    return " ".join(words).capitalize() + ". "


def filler_text(n_bytes: int, rng: np.random.Generator) -> str:
    """Exactly ``n_bytes`` characters of filler (the last sentence may be cut)."""
    if n_bytes < 0:
        raise ValueError("filler length should be non-negative")
    pieces = []
    total = 0
    while total < n_bytes:
        sentence = filler_sentence(rng)
        pieces.append(sentence)
        total += len(sentence)
    return "".join(pieces)[:n_bytes]


def filler_tokens(n_tokens: int, rng: np.random.Generator) -> np.ndarray:
    """Exactly ``n_tokens`` byte tokens of filler."""
    return encode(filler_text(n_tokens, rng))
