"""Deterministic synthetic data: byte tokenizer, probe tasks, training corpus streams."""

from .arguments import GenerateArguments
from .corpus import (
    copy_document,
    effective_length_document,
    inject_probes,
    lm_document,
    pack_documents,
    sample_batch,
)
from .run_generate import load_samples
from .tasks import (
    Sample,
    gen_mqniah,
    gen_selfcopy,
    gen_selfcopy_filler,
    gen_sniah,
    gen_vartrack,
    generate_probe,
    measure_depths,
    solve,
    validate_sample,
)
from .tokenizer import VOCAB_SIZE, decode, encode
