"""
This file implements all RAIL data handles used to pass guidelines,
checkpoints, traces and evaluation reports between the stunt stages.
"""

from __future__ import annotations

import json
from typing import TYPE_CHECKING

import h5py
from pandas import read_csv

from rail.core.data import DataHandle
from rail.lineride.guideline import read_guideline, write_guideline
from rail.lineride.policy import Checkpoint, load_checkpoint, save_checkpoint

if TYPE_CHECKING:
    from typing import Any, TextIO

    from pandas import DataFrame

    from rail.lineride.guideline import Guideline, KeyOrientationSet

__all__ = [
    "CheckpointHandle",
    "GuidelineHandle",
    "ReportHandle",
    "TraceHandle",
]


class GuidelineHandle(DataHandle):
    """
    Class to act as a handle for a guideline and its key-orientations,
    associating them with a guideline file and providing tools to read & write
    it.

    Parameters
    ----------
    tag : str
        The tag under which this data handle can be found in the store.
    data : any or None
        The associated data, a tuple of `Guideline` and `KeyOrientationSet`.
    path : str or None
        The path to the associated file.
    creator : str or None
        The name of the stage that created this data handle.
    """

    data: tuple[Guideline, KeyOrientationSet]
    suffix = "json"

    @classmethod
    def _open(cls, path: str, **kwargs) -> TextIO:
        return open(path, **kwargs)

    @classmethod
    def _read(cls, path: str, **kwargs) -> tuple[Guideline, KeyOrientationSet]:
        return read_guideline(path)

    @classmethod
    def _write(cls, data: tuple[Guideline, KeyOrientationSet], path: str, **kwargs) -> None:
        gl, keys = data
        write_guideline(path, gl, keys)


class CheckpointHandle(DataHandle):
    """
    Class to act as a handle for a policy `Checkpoint`, associating it with an
    HDF5 file and providing tools to read and write the data.

    Parameters
    ----------
    tag : str
        The tag under which this data handle can be found in the store.
    data : any or None
        The associated data.
    path : str or None
        The path to the associated file.
    creator : str or None
        The name of the stage that created this data handle.
    """

    data: Checkpoint
    suffix = "hdf5"

    @classmethod
    def _open(cls, path: str, **kwargs) -> h5py.File:
        return h5py.File(path, **kwargs)

    @classmethod
    def _read(cls, path: str, **kwargs) -> Checkpoint:
        return load_checkpoint(path)

    @classmethod
    def _write(cls, data: Checkpoint, path: str, **kwargs) -> None:
        save_checkpoint(path, data.policy, data.normalizer, step=data.step, metadata=data.metadata)


class TraceHandle(DataHandle):
    """Handle for a per-step trace table stored as CSV."""

    data: DataFrame
    suffix = "csv"

    @classmethod
    def _open(cls, path: str, **kwargs) -> TextIO:
        return open(path, **kwargs)

    @classmethod
    def _read(cls, path: str, **kwargs) -> DataFrame:
        return read_csv(path)

    @classmethod
    def _write(cls, data: DataFrame, path: str, **kwargs) -> None:
        data.to_csv(path, index=False)


class ReportHandle(DataHandle):
    """Handle for an evaluation summary stored as JSON."""

    data: dict[str, Any]
    suffix = "json"

    @classmethod
    def _open(cls, path: str, **kwargs) -> TextIO:
        return open(path, **kwargs)

    @classmethod
    def _read(cls, path: str, **kwargs) -> dict[str, Any]:
        with cls._open(path) as f:
            return json.load(f)

    @classmethod
    def _write(cls, data: dict[str, Any], path: str, **kwargs) -> None:
        with cls._open(path, mode="w") as f:
            json.dump(data, f, indent=2)
            f.write("\n")
