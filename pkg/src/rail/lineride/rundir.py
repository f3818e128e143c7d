"""
This file implements the run directory that holds all outputs of one command
together with the manifest describing how they were produced. Run
directories are created with `RunDirectory.create` and marked by a flag file,
so that only valid run directories are ever overwritten.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from importlib.metadata import PackageNotFoundError, version
from shutil import rmtree
from typing import Any

__all__ = [
    "RunDirectory",
    "RunManifest",
    "package_versions",
]

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1


def normalise_path(path: str) -> str:
    """Substitute UNIX style home directories and environment variables in path
    names."""
    return os.path.expandvars(os.path.expanduser(path))


def package_versions() -> dict[str, str]:
    """Installed versions of the packages that determine the results."""
    versions = {}
    for name in ("rail-lineride", "numpy", "scipy", "torch", "gymnasium"):
        try:
            versions[name] = version(name)
        except PackageNotFoundError:
            versions[name] = "unknown"
    return versions


@dataclass
class RunManifest:
    """
    Everything needed to reproduce a command.

    Parameters
    ----------
    command : str
        Name of the command, e.g. `train`.
    arguments : dict
        The parsed command arguments.
    config_paths : dict
        Configuration files used, by role.
    seed : int or None
        Random seed of the run.
    output_dir : str
        The run directory.
    versions : dict
        Package versions at the time of the run.
    """

    command: str
    arguments: dict[str, Any] = field(default_factory=dict)
    config_paths: dict[str, str] = field(default_factory=dict)
    seed: int | None = None
    output_dir: str = "."
    versions: dict[str, str] = field(default_factory=package_versions)
    version: int = MANIFEST_VERSION

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> RunManifest:
        data = json.loads(text)
        if data.get("version") != MANIFEST_VERSION:
            raise ValueError(f"unsupported manifest version: {data.get('version')}")
        return cls(**data)


class RunDirectory:
    """
    Directory holding the outputs of one run and its `manifest.json`.

    Parameters
    ----------
    path : str
        Path of the run directory, must exist and has to be created with the
        `create` method.
    """

    _flag_path = ".lineride_run"  # file to mark a valid run directory
    manifest_name = "manifest.json"
    path: str
    """Path of the run directory."""

    def __init__(self, path: str) -> None:
        self.path = normalise_path(path)

        if not os.path.exists(self.path):
            raise FileNotFoundError(self.path)
        if not self.is_valid(self.path):
            raise FileNotFoundError(f"not a valid run directory: {self.path}")

    @classmethod
    def is_valid(cls, path: str) -> bool:
        """Whether the provided path is a valid run directory."""
        indicator_path = os.path.join(path, cls._flag_path)
        return os.path.exists(indicator_path)

    @classmethod
    def create(cls, path: str, overwrite: bool = False) -> RunDirectory:
        """
        Create an empty run directory at the specifed path.

        Parameters
        ----------
        path : str
            Path of the new run directory.
        overwrite : bool, optional
            Whether to overwrite an existing run directory.

        Returns
        -------
        RunDirectory
            The newly created run directory.

        Raises
        ------
        FileExistsError
            If the path exists and `overwrite` is not set.
        OSError
            If the path exists but is not a run directory.
        """
        normalised = normalise_path(path)

        if os.path.exists(normalised):
            if not overwrite:
                raise FileExistsError(normalised)
            # only ever delete directories created by this class
            try:
                tmp_run = cls(path)
            except FileNotFoundError as err:
                raise OSError("can only overwrite existing run directories") from err
            tmp_run.drop()

        logger.info("creating new run directory '%s'", normalised)
        os.makedirs(normalised)
        with open(os.path.join(normalised, cls._flag_path), "w"):
            pass
        return cls(path)

    def __str__(self) -> str:
        return f"{type(self).__name__}(path='{self.path}')"

    def file(self, name: str) -> str:
        """Path of a file inside the run directory."""
        return os.path.join(self.path, name)

    @property
    def manifest_path(self) -> str:
        return self.file(self.manifest_name)

    def write_manifest(self, manifest: RunManifest) -> None:
        manifest.output_dir = self.path
        with open(self.manifest_path, "w") as f:
            f.write(manifest.to_json())

    def read_manifest(self) -> RunManifest:
        """
        Raises
        ------
        FileNotFoundError
            If no manifest was written yet.
        """
        with open(self.manifest_path) as f:
            return RunManifest.from_json(f.read())

    def drop(self) -> None:
        """Delete the entire run directory."""
        logger.info("dropping run directory '%s'", self.path)
        rmtree(self.path)
