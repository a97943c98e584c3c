"""Data class to hold common runtime arguments for every hsa-lab command."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

from upath import UPath

import hsa_lab.file_io as lab_io

# pylint: disable=too-many-instance-attributes

THREADS_ENV_VAR = "HSA_LAB_THREADS"


@dataclass
class RuntimeArguments:
    """Data class for holding runtime arguments"""

    ## Output
    output_path: str | Path | UPath | None = None
    """base path where new run artifacts should be output"""
    output_artifact_name: str = ""
    """short, convenient name for the run (directory name under ``output_path``)"""

    ## Execution
    seed: int = 0
    """root seed; every random stream of the command is derived from it"""
    precision: int = 32
    """element precision for tensors, in bits. 32 (default) or 64."""
    tmp_dir: str | Path | UPath | None = None
    """path for storing intermediate files"""
    resume: bool = True
    """continue from existing intermediate files and checkpoints. when False, the run
    directory is cleared first"""
    progress_bar: bool = True
    """display tqdm progress bars for long-running stages"""
    simple_progress_bar: bool = False
    """use the text-only tqdm bar, for notebooks where ipywidgets cannot be used"""
    tqdm_kwargs: dict | None = None
    """extra arguments for every tqdm progress bar"""
    dask_tmp: str | Path | UPath | None = None
    """local directory for dask worker space; also holds intermediate files when set"""
    dask_n_workers: int = 1
    """number of workers for the dask client"""
    dask_threads_per_worker: int = 1
    """number of threads per dask worker"""
    delete_resume_log_files: bool = True
    """remove the intermediate directory once the command has finished"""

    run_path: UPath | None = None
    """<output_path>/<output_artifact_name>, where every artifact of the run is written"""
    tmp_path: UPath | None = None
    """intermediate files: under tmp_dir, else dask_tmp, else run_path"""
    tmp_base_path: UPath | None = None
    """run-specific directory under tmp_dir or dask_tmp, removed when the run finishes"""

    def __post_init__(self):
        self._check_arguments()

    def _check_arguments(self):
        if not self.output_path:
            raise ValueError("output_path is required")
        if not self.output_artifact_name:
            raise ValueError("output_artifact_name is required")
        if re.search(r"[^A-Za-z0-9\._\-\\]", self.output_artifact_name):
            raise ValueError("output_artifact_name contains invalid characters")
        if self.precision not in (32, 64):
            raise ValueError("precision should be one of 32 or 64")

        if self.dask_n_workers <= 0:
            raise ValueError("dask_n_workers should be greater than 0")
        if self.dask_threads_per_worker <= 0:
            raise ValueError("dask_threads_per_worker should be greater than 0")
        self.dask_n_workers, self.dask_threads_per_worker = cap_worker_concurrency(
            self.dask_n_workers, self.dask_threads_per_worker
        )

        self.run_path = lab_io.get_upath(self.output_path) / self.output_artifact_name
        self._prepare_run_path()

        if self.tmp_dir and str(self.tmp_dir) != str(self.output_path):
            self.tmp_path = lab_io.append_paths_to_pointer(
                self.tmp_dir, self.output_artifact_name, "intermediate"
            )
            self.tmp_base_path = lab_io.append_paths_to_pointer(self.tmp_dir, self.output_artifact_name)
        elif self.dask_tmp and str(self.dask_tmp) != str(self.output_path):
            self.tmp_path = lab_io.append_paths_to_pointer(
                self.dask_tmp, self.output_artifact_name, "intermediate"
            )
            self.tmp_base_path = lab_io.append_paths_to_pointer(self.dask_tmp, self.output_artifact_name)
        else:
            self.tmp_path = lab_io.append_paths_to_pointer(self.run_path, "intermediate")
        if not self.resume:
            lab_io.remove_directory(self.tmp_path, ignore_errors=True)
        lab_io.make_directory(self.tmp_path, exist_ok=True)

    def _prepare_run_path(self):
        """Create the run directory, clearing it first when we are not resuming."""
        if not self.resume:
            lab_io.remove_directory(self.run_path, ignore_errors=True)
        lab_io.make_directory(self.run_path, exist_ok=True)

    def resume_kwargs_dict(self):
        """Convenience method to convert fields for resume functionality."""
        return {
            "resume": self.resume,
            "progress_bar": self.progress_bar,
            "simple_progress_bar": self.simple_progress_bar,
            "tmp_path": self.tmp_path,
            "tmp_base_path": self.tmp_base_path,
            "delete_resume_log_files": self.delete_resume_log_files,
            "tqdm_kwargs": self.tqdm_kwargs,
        }


def tool_version() -> str:
    """Installed version of hsa-lab, for provenance in manifests and checkpoints."""
    try:
        return version("hsa-lab")
    except PackageNotFoundError:
        return "0.0.0"


def cap_worker_concurrency(n_workers: int, threads_per_worker: int) -> tuple[int, int]:
    """Limit ``n_workers * threads_per_worker`` to the ``HSA_LAB_THREADS`` environment cap.

    Threads per worker are reduced first, then the worker count.

    Args:
        n_workers (int): requested number of dask workers
        threads_per_worker (int): requested threads per worker
    Returns:
        (n_workers, threads_per_worker) after applying the cap
    Raises:
        ValueError: if the environment variable is set to something other than a positive int
    """
    cap = os.environ.get(THREADS_ENV_VAR)
    if not cap:
        return n_workers, threads_per_worker
    try:
        cap_value = int(cap)
    except ValueError as error:
        raise ValueError(f"{THREADS_ENV_VAR} should be a positive integer, got {cap!r}") from error
    if cap_value <= 0:
        raise ValueError(f"{THREADS_ENV_VAR} should be a positive integer, got {cap!r}")
    threads_per_worker = max(1, min(threads_per_worker, cap_value))
    n_workers = max(1, min(n_workers, cap_value // threads_per_worker))
    return n_workers, threads_per_worker


def parse_int_list(text: str | list | None, field_name: str) -> list[int]:
    """Parse a comma-separated list of positive integers (e.g. ``"1024,2048"``)."""
    values = _split_list(text)
    try:
        parsed = [int(value) for value in values]
    except (TypeError, ValueError) as error:
        raise ValueError(f"{field_name} should be a list of integers") from error
    if not parsed:
        raise ValueError(f"{field_name} should not be empty")
    if any(value <= 0 for value in parsed):
        raise ValueError(f"{field_name} should contain only positive values")
    return parsed


def parse_float_list(text: str | list | None, field_name: str, lower=0.0, upper=1.0) -> list[float]:
    """Parse a comma-separated list of floats within ``[lower, upper]`` (e.g. ``"0,0.5,1"``)."""
    values = _split_list(text)
    try:
        parsed = [float(value) for value in values]
    except (TypeError, ValueError) as error:
        raise ValueError(f"{field_name} should be a list of numbers") from error
    if not parsed:
        raise ValueError(f"{field_name} should not be empty")
    if any(not lower <= value <= upper for value in parsed):
        raise ValueError(f"{field_name} should be between {lower} and {upper}")
    return parsed


def _split_list(text):
    if text is None:
        return []
    if isinstance(text, str):
        return [part.strip() for part in text.split(",") if part.strip()]
    return list(text)
