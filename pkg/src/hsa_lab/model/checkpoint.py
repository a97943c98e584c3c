"""Single-file checkpoints: canonical JSON header plus raw little-endian tensor blobs.

Layout::

    b"HSALAB1\\n" | header length (8 bytes, little-endian) | header JSON | blobs

The header records the model config, one entry per tensor (name, shape, dtype,
offset, nbytes), free-form ``extra`` metadata, and a sha256 checksum of the blob
section.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from packaging.version import Version
from upath import UPath

import hsa_lab.file_io as lab_io
from hsa_lab.model.config import ModelConfig, canonical_json
from hsa_lab.model.decoder import HSAModel
from hsa_lab.model.params import ModelParams
from hsa_lab.numerics.tensor import Parameter
from hsa_lab.runtime_arguments import tool_version

MAGIC = b"HSALAB1\n"
FORMAT_VERSION = 1
OPTIMIZER_PREFIX = "optim."


class ChecksumError(OSError):
    """The checkpoint file is truncated, corrupted or not a checkpoint."""


class CheckpointMismatchError(ValueError):
    """The checkpoint was written for a different architecture than the one requested."""


@dataclass
class Checkpoint:
    """Everything read back from a checkpoint file."""

    config: ModelConfig
    params: ModelParams
    extra: dict = field(default_factory=dict)
    """free-form metadata (phase, step, probe history, run config hash, ...)"""
    optimizer_arrays: dict[str, np.ndarray] = field(default_factory=dict)
    """optimizer moment arrays, keyed without the ``optim.`` prefix"""
    tool_version: str = ""

    @property
    def model(self) -> HSAModel:
        return HSAModel(self.config, self.params)


def _blob_dtype(array: np.ndarray) -> np.dtype:
    if array.dtype == np.float64:
        return np.dtype("<f8")
    return np.dtype("<f4")


def save_checkpoint(
    path: str | Path | UPath,
    config: ModelConfig,
    params: ModelParams,
    extra: dict | None = None,
    optimizer_arrays: dict[str, np.ndarray] | None = None,
) -> UPath:
    """Write config, parameters and optional optimizer state to one file.

    Parameters are stored as little-endian 32-bit floats, or 64-bit when the model
    runs at 64-bit precision. The file is written to a temporary name and renamed,
    so an interrupted save never leaves a partial checkpoint behind.
    """
    path = lab_io.get_upath(path)
    arrays = [(name, param.data) for name, param in params.items()]
    arrays += [(OPTIMIZER_PREFIX + name, array) for name, array in (optimizer_arrays or {}).items()]

    entries = []
    blobs = []
    offset = 0
    digest = hashlib.sha256()
    for name, array in arrays:
        blob = np.ascontiguousarray(array, dtype=_blob_dtype(array)).tobytes()
        entries.append(
            {
                "name": name,
                "shape": list(array.shape),
                "dtype": _blob_dtype(array).str,
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        digest.update(blob)
        blobs.append(blob)
        offset += len(blob)

    header = {
        "format_version": FORMAT_VERSION,
        "tool_version": tool_version(),
        "config": config.to_dict(),
        "architecture_hash": config.architecture_hash(),
        "tensors": entries,
        "extra": extra or {},
        "checksum": digest.hexdigest(),
    }
    header_bytes = canonical_json(header).encode("utf-8")

    path.parent.mkdir(parents=True, exist_ok=True)
    partial = path.with_name(path.name + ".partial")
    try:
        with partial.open("wb") as file_handle:
            file_handle.write(MAGIC)
            file_handle.write(struct.pack("<Q", len(header_bytes)))
            file_handle.write(header_bytes)
            for blob in blobs:
                file_handle.write(blob)
        partial.rename(path)
    except BaseException:
        partial.unlink(missing_ok=True)
        raise
    return path


def read_header(path: str | Path | UPath) -> dict:
    """Read only the JSON header of a checkpoint."""
    with lab_io.get_upath(path).open("rb") as file_handle:
        header, _ = _read_header(file_handle)
    return header


def _read_header(file_handle) -> tuple[dict, int]:
    magic = file_handle.read(len(MAGIC))
    if magic != MAGIC:
        raise ChecksumError("not an hsa-lab checkpoint (bad magic bytes)")
    length_bytes = file_handle.read(8)
    if len(length_bytes) != 8:
        raise ChecksumError("truncated checkpoint header")
    (length,) = struct.unpack("<Q", length_bytes)
    header_bytes = file_handle.read(length)
    if len(header_bytes) != length:
        raise ChecksumError("truncated checkpoint header")
    try:
        header = json.loads(header_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as error:
        raise ChecksumError("unreadable checkpoint header") from error
    if Version(str(header.get("format_version", 0))) > Version(str(FORMAT_VERSION)):
        raise ValueError(f"checkpoint format {header.get('format_version')} is newer than supported")
    return header, len(MAGIC) + 8 + length


def load_checkpoint(
    path: str | Path | UPath,
    expected_config: ModelConfig | None = None,
) -> Checkpoint:
    """Read a checkpoint, verifying its checksum.

    Args:
        path: checkpoint file
        expected_config (ModelConfig): if provided, the checkpoint's architecture must
            match it (runtime knobs such as window and top-k may differ)
    Raises:
        FileNotFoundError: if there is no file at ``path``
        ChecksumError: if the file is corrupted or truncated
        CheckpointMismatchError: if the architecture differs from ``expected_config``
    """
    path = lab_io.get_upath(path)
    if not path.exists():
        raise FileNotFoundError(f"no checkpoint found at {path}")
    with path.open("rb") as file_handle:
        header, _ = _read_header(file_handle)
        payload = file_handle.read()

    if hashlib.sha256(payload).hexdigest() != header.get("checksum"):
        raise ChecksumError(f"checksum mismatch in {path}")
    config = ModelConfig.from_dict(header["config"])
    if expected_config is not None and expected_config.architecture_hash() != config.architecture_hash():
        raise CheckpointMismatchError(
            f"checkpoint {path} was written for a different architecture than the requested config"
        )

    params = ModelParams()
    optimizer_arrays = {}
    for entry in header["tensors"]:
        start, stop = entry["offset"], entry["offset"] + entry["nbytes"]
        array = np.frombuffer(payload[start:stop], dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        name = entry["name"]
        if name.startswith(OPTIMIZER_PREFIX):
            optimizer_arrays[name[len(OPTIMIZER_PREFIX) :]] = array.copy()
        else:
            params.add(Parameter(array.copy(), name=name, dtype=array.dtype.newbyteorder("=")))
    return Checkpoint(
        config=config,
        params=params,
        extra=header.get("extra", {}),
        optimizer_arrays=optimizer_arrays,
        tool_version=header.get("tool_version", ""),
    )
