"""Sliding-window attention and hierarchical sparse attention."""

from .chunk_store import ChunkStore
from .hsa import (
    RetrievalSelection,
    fusion_weights,
    hsa_attend,
    hsa_reference,
    score_chunks,
    select_chunks,
    select_topk,
)
from .rope import RopeTable
from .sliding_window import swa_attend, windowed_attention
