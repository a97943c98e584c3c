"""Run manifest: the index of every artifact a command wrote."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

from upath import UPath

import hsa_lab.file_io as lab_io
from hsa_lab.runtime_arguments import tool_version

MANIFEST_FILE = "manifest.json"


@dataclass
class RunManifest:
    """Provenance and artifact paths of one command's output directory.

    Paths are stored relative to the directory holding the manifest.
    """

    command: str
    """train, eval, gen, cost or inspect"""
    config_hash: str = ""
    architecture_hash: str = ""
    seed: int = 0
    phases: list[dict] = field(default_factory=list)
    """per phase: name, steps_run, completed, completion_criterion_met, checkpoint"""
    checkpoints: list[str] = field(default_factory=list)
    metrics: list[str] = field(default_factory=list)
    grids: list[str] = field(default_factory=list)
    figures: list[str] = field(default_factory=list)
    records: list[str] = field(default_factory=list)
    source_checkpoint: str = ""
    """checkpoint an eval/inspect command read"""
    tool_version: str = field(default_factory=tool_version)

    def artifacts(self) -> list[str]:
        return [*self.checkpoints, *self.metrics, *self.grids, *self.figures, *self.records]

    def write(self, directory: str | Path | UPath) -> UPath:
        path = lab_io.append_paths_to_pointer(directory, MANIFEST_FILE)
        lab_io.write_json_file(path, asdict(self))
        return path

    @classmethod
    def read(cls, directory: str | Path | UPath) -> RunManifest:
        """Read ``manifest.json`` from a run directory.

        Raises:
            FileNotFoundError: if the directory holds no manifest
        """
        path = lab_io.append_paths_to_pointer(directory, MANIFEST_FILE)
        if not path.exists():
            raise FileNotFoundError(f"no manifest found in {directory}")
        return cls(**lab_io.load_json_file(path))

    @classmethod
    def exists(cls, directory: str | Path | UPath) -> bool:
        return lab_io.append_paths_to_pointer(directory, MANIFEST_FILE).exists()
