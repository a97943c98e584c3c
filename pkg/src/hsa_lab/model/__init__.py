"""The hybrid SWA+HSA decoder, its chunk encoder, checkpoints and streaming inference."""

from .checkpoint import Checkpoint, CheckpointMismatchError, ChecksumError, load_checkpoint, save_checkpoint
from .config import ConfigValidationError, ModelConfig
from .decoder import ForwardTrace, HSAModel, forward, sequence_loss
from .encoder import ChunkEncoderOutput, encode_chunks, run_chunk_encoder
from .incremental import IncrementalDecoder
from .params import ModelParams, init_params
