from __future__ import annotations

import json
import shutil
from pathlib import Path

from upath import UPath


def get_upath(pointer: str | Path | UPath) -> UPath:
    """Wrap a string or local path in a UPath, leaving existing UPaths alone."""
    if isinstance(pointer, UPath):
        return pointer
    return UPath(pointer)


def append_paths_to_pointer(pointer: str | Path | UPath, *paths: str) -> UPath:
    """Append directories and/or a file name to a specified file pointer.

    Parameters
    ----------
    pointer : str | Path | UPath
        `FilePointer` object to add path to
    *paths: str
        any number of directory names optionally followed by a file name to append to the
        pointer

    Returns
    -------
    UPath
        New file pointer to path given by joining given pointer and path names
    """
    pointer = get_upath(pointer)
    return pointer.joinpath(*paths)


def find_files_matching_path(pointer: str | Path | UPath, *paths: str) -> list[UPath]:
    """Find files or directories matching the provided path parts.

    Parameters
    ----------
    pointer : str | Path | UPath
        base File Pointer in which to find contents
    *paths: str
        any number of directory names optionally followed by a file name.
        directory or file names may be replaced with `*` as a matcher.

    Returns
    -------
    list[UPath]
        New file pointers to files found matching the path
    """
    pointer = get_upath(pointer)

    if len(paths) == 0:
        return [pointer]
    if not pointer.exists():
        return []

    matcher = pointer.fs.sep.join(paths)
    contents = sorted(pointer.glob(matcher))
    return contents


def directory_has_contents(pointer: str | Path | UPath) -> bool:
    """Checks if a directory already has some contents (any files or subdirectories)

    Parameters
    ----------
    pointer : str | Path | UPath
        File Pointer to check for existing contents

    Returns
    -------
    bool
        True if there are any files or subdirectories below this directory.
    """
    pointer = get_upath(pointer)
    if not pointer.exists():
        return False
    return next(pointer.rglob("*"), None) is not None


def make_directory(pointer: str | Path | UPath, exist_ok: bool = False):
    """Create a directory (and any missing parents) at the pointer."""
    get_upath(pointer).mkdir(parents=True, exist_ok=exist_ok)


def remove_directory(pointer: str | Path | UPath, ignore_errors: bool = False):
    """Remove a directory and everything below it."""
    pointer = get_upath(pointer)
    if pointer.protocol in ("", "file", "local"):
        shutil.rmtree(pointer.path, ignore_errors=ignore_errors)
        return
    try:
        pointer.fs.rm(pointer.path, recursive=True)
    except FileNotFoundError:
        if not ignore_errors:
            raise


def write_string_to_file(pointer: str | Path | UPath, value: str):
    """Write a string to the file at the pointer, creating the parent directory."""
    pointer = get_upath(pointer)
    pointer.parent.mkdir(parents=True, exist_ok=True)
    with pointer.open("w", encoding="utf-8") as file_handle:
        file_handle.write(value)


def load_text_file(pointer: str | Path | UPath) -> str:
    """Read the full contents of a text file."""
    with get_upath(pointer).open("r", encoding="utf-8") as file_handle:
        return file_handle.read()


def write_json_file(pointer: str | Path | UPath, contents: dict, canonical: bool = False):
    """Write a dictionary as JSON.

    Args:
        pointer: destination file
        contents (dict): json-serializable dictionary
        canonical (bool): if True, keys are sorted and no whitespace is emitted, so that
            identical dictionaries always produce byte-identical files.
    """
    if canonical:
        text = json.dumps(contents, sort_keys=True, separators=(",", ":"))
    else:
        text = json.dumps(contents, sort_keys=True, indent=2)
    write_string_to_file(pointer, text + "\n")


def load_json_file(pointer: str | Path | UPath) -> dict:
    """Read a JSON file into a dictionary."""
    return json.loads(load_text_file(pointer))
