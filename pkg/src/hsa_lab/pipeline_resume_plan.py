"""Stage tracking shared by every resumable command.

A stage (generating, evaluating, training) keeps one marker file per finished task
under ``<tmp_path>/<stage>/``, and a single ``<stage>_done`` file once every task
has finished. The presence of a marker is the signal; its content is an optional
payload read back on resume.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from dask.distributed import as_completed, get_worker
from dask.distributed import print as dask_print
from tqdm.auto import tqdm as auto_tqdm
from tqdm.std import tqdm as std_tqdm
from upath import UPath

import hsa_lab.file_io as lab_io

MARKER_PATTERN = re.compile(r"(.+)_done")


@dataclass
class PipelineResumePlan:
    """Container class for holding the state of a resumable run."""

    tmp_path: UPath
    """path for any intermediate files"""
    tmp_base_path: str | Path | UPath | None = None
    """run-specific directory under ``tmp_dir`` or ``dask_tmp``, if either was provided"""
    resume: bool = True
    """keep existing intermediate files and continue from them"""
    progress_bar: bool = True
    """display a tqdm progress bar per stage"""
    simple_progress_bar: bool = False
    """use the text-only tqdm bar, for environments without ipywidgets"""
    tqdm_kwargs: dict | None = None
    """extra arguments for every tqdm progress bar"""
    pipeline_name: str | None = None
    """command name shown in front of every stage name"""
    delete_resume_log_files: bool = True
    """remove the intermediate directory once the run has finished"""

    def safe_to_resume(self):
        """Prepare the intermediate directory.

        Existing intermediate files are kept when resuming, and removed otherwise.
        """
        if lab_io.directory_has_contents(self.tmp_path):
            if not self.resume:
                lab_io.remove_directory(self.tmp_path, ignore_errors=True)
            else:
                print(f"tmp_path ({self.tmp_path}) contains intermediate files; resuming prior progress.")
        lab_io.make_directory(self.tmp_path, exist_ok=True)

    def _stage_done_path(self, stage_name):
        return lab_io.append_paths_to_pointer(self.tmp_path, f"{stage_name}_done")

    def done_file_exists(self, stage_name) -> bool:
        """Has the whole stage finished?"""
        return self._stage_done_path(stage_name).exists()

    def touch_stage_done_file(self, stage_name):
        """Mark the whole stage as finished."""
        Path(self._stage_done_path(stage_name)).touch()

    @classmethod
    def write_marker_file(cls, tmp_path, stage_name, key, value=""):
        """Mark one task of a stage as finished, with an optional payload.

        Called on dask workers, so this only needs the path, not the plan.

        Args:
            tmp_path: where to write intermediate files
            stage_name (str): name of the stage (e.g. generating, evaluating)
            key (str): unique key of the task (e.g. "cell_k00_004096_0.50")
            value (str): payload read back by ``read_markers``
        """
        marker = lab_io.append_paths_to_pointer(tmp_path, stage_name, f"{key}_done")
        lab_io.write_string_to_file(marker, value)

    def read_markers(self, stage_name: str) -> dict[str, str]:
        """Payload of every finished task of a stage, keyed by task key.

        Raises:
            ValueError: if the stage directory holds a file that is not a marker
        """
        stage_path = lab_io.append_paths_to_pointer(self.tmp_path, stage_name)
        markers = {}
        for file_path in lab_io.find_files_matching_path(stage_path, "*_done"):
            match = MARKER_PATTERN.fullmatch(file_path.name)
            if not match:
                raise ValueError(f"Unexpected file found: {file_path.name}")
            markers[match.group(1)] = lab_io.load_text_file(file_path)
        return markers

    def read_done_keys(self, stage_name) -> list[str]:
        """Keys of every finished task of a stage, sorted."""
        return sorted(self.read_markers(stage_name))

    def clean_resume_files(self):
        """Remove the intermediate directory, unless asked to keep it."""
        if self.delete_resume_log_files:
            path = self.tmp_base_path if self.tmp_base_path is not None else self.tmp_path
            lab_io.remove_directory(path, ignore_errors=True)

    def wait_for_futures(self, futures, stage_name):
        """Wait for every future of a stage, then fail if any of them errored.

        Failures are not raised as they happen: the remaining tasks still finish
        and write their markers, so a resumed run only repeats the failed ones.

        Raises:
            RuntimeError: if any future finished with an error.
        """
        failed = 0
        for future in self.print_progress(as_completed(futures), stage_name=stage_name, total=len(futures)):
            if future.status == "error":
                failed += 1
        if failed:
            raise RuntimeError(f"{failed} of {len(futures)} {stage_name} tasks failed. See above exceptions.")

    def print_progress(self, iterable=None, total=None, stage_name=None):
        """``print_progress`` with this plan's display settings."""
        return print_progress(
            iterable=iterable,
            total=total,
            stage_name=stage_name,
            pipeline_name=self.pipeline_name,
            use_progress_bar=self.progress_bar,
            simple_progress_bar=self.simple_progress_bar,
            tqdm_kwargs=self.tqdm_kwargs,
        )


def print_task_failure(custom_message, exception):
    """Report a task failure in the worker's logs and in the client's output.

    The worker address is included when the task ran on a dask worker.
    """
    dask_print(custom_message)
    try:
        dask_print("  worker address:", get_worker().address)
    except ValueError:
        ## not running on a worker
        pass
    dask_print(exception)


def get_formatted_stage_name(stage_name, pipeline_name=None) -> str:
    """Stage name padded to a common width, so stacked progress bars line up.

    >>> get_formatted_stage_name("planning", "eval")
    'Eval: Planning  '
    """
    stage = f"{(stage_name or 'progress').capitalize(): <10}"
    return f"{pipeline_name.capitalize()}: {stage}" if pipeline_name else stage


def print_progress(
    iterable=None,
    total=None,
    stage_name=None,
    pipeline_name=None,
    use_progress_bar=True,
    simple_progress_bar=False,
    tqdm_kwargs=None,
):
    """Create a progress bar for one stage of a command.

    Args:
        iterable (iterable): Optional. provides iterations to progress updates.
        total (int): Optional. Expected iterations.
        stage_name (str): name of the stage, formatted with ``get_formatted_stage_name``
        pipeline_name (str): name of the command, shown before the stage
        use_progress_bar (bool): display anything at all
        simple_progress_bar (bool): use the text-only bar instead of the notebook widget
        tqdm_kwargs (dict): extra arguments passed to tqdm
    """
    bar_class = std_tqdm if simple_progress_bar else auto_tqdm
    return bar_class(
        iterable,
        desc=get_formatted_stage_name(stage_name, pipeline_name),
        total=total,
        disable=not use_progress_bar,
        **(tqdm_kwargs or {}),
    )
