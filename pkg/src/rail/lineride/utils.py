"""
Logging helpers and the common base class of the stunt stages, which adds
the run verbosity and safe access to optional stage inputs to `RailStage`.
"""

from __future__ import annotations

import logging
import sys
from abc import ABC, abstractmethod
from functools import wraps
from typing import TYPE_CHECKING

from rail.core.stage import RailStage
from rail.lineride import stage_config

if TYPE_CHECKING:
    from collections.abc import Container
    from typing import Any

    from ceci.config import StageParameter

    from rail.core.data import DataHandle

__all__ = [
    "LineRideStage",
    "init_logger",
    "lineride_logged",
]

LOGGER_NAME = "rail.lineride"
LOG_FORMAT = "%(levelname)-8s| %(message)s"


def handle_has_path(handle: DataHandle) -> bool:
    """Whether a handle points to a file, `ceci` uses the string `"None"` for unset paths."""
    return handle.path is not None and handle.path.lower() != "none"


class LineRideStage(ABC, RailStage):
    """
    Common base of the stunt stages.

    Subclasses pass their stage parameters as `config_items` when they are
    defined. These are merged into a copy of `RailStage.config_options`
    together with the `verbose` parameter, which sets the level of the
    `rail.lineride` log messages printed while the stage runs. The stage name
    is the class name, and the added parameter names are kept in
    `algo_parameters`.

    Examples
    --------
    >>> class Rollout(
    ...     LineRideStage,
    ...     config_items=dict(
    ...         episodes=StageParameter(dtype=int, default=10)
    ...     ),
    ... ):
    """

    algo_parameters: set[str]
    """Names of the parameters given as `config_items`."""

    def __init_subclass__(
        cls, config_items: dict[str, StageParameter] | None = None, **kwargs
    ):
        cls.name = cls.__name__  # standard RAIL practice

        config_items = {} if config_items is None else dict(config_items)
        cls.algo_parameters = set(config_items)

        cls.config_options = super().config_options.copy()
        cls.config_options.update(config_items)
        cls.config_options["verbose"] = stage_config.lineride_verbose

        super().__init_subclass__(**kwargs)  # delegate back to rail/ceci

    def get_algo_config_dict(
        self, exclude: Container[str] | None = None
    ) -> dict[str, Any]:
        """
        Current values of the parameters listed in `algo_parameters`.

        Parameters
        ----------
        exclude : Container of str, optional
            Parameter names to leave out.
        """
        exclude = exclude or ()
        return {
            key: value
            for key, value in self.get_config_dict(reduce_config=True).items()
            if key in self.algo_parameters and key not in exclude
        }

    def get_optional_handle(self, tag: str, **kwargs) -> DataHandle | None:
        """Handle of an optional input, `None` unless it has data or a path."""
        handle = self.get_handle(tag, **dict(kwargs, allow_missing=True))
        if handle_has_path(handle) or handle.data is not None:
            return handle
        return None

    def get_optional_data(self, tag: str, **kwargs) -> Any | None:
        """Data of an optional input, read from disk if necessary."""
        handle = self.get_optional_handle(tag, **kwargs)
        if handle is None:
            return None
        if handle.data is not None:
            return handle.data
        return handle.read()

    @abstractmethod
    def run(self) -> None:
        pass  # pragma: no cover


def init_logger(level: str | int = "info") -> logging.Logger:
    """
    Attach a handler to the `rail.lineride` logger that writes messages to
    stdout at the given level.
    """
    if isinstance(level, str):
        level = level.upper()
    logger = logging.getLogger(LOGGER_NAME)
    handler = logging.StreamHandler(sys.stdout)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler.setLevel(level)
    logger.addHandler(handler)
    logger.setLevel(level)
    return logger


def remove_handlers(logger: logging.Logger) -> None:
    for handler in logger.handlers[:]:
        handler.close()
        logger.removeHandler(handler)


def lineride_logged(method):
    """
    Decorator that creates a temporary logger for a method of a
    `LineRideStage` that redirects messages of this package to stdout.
    """

    @wraps(method)
    def impl(self: LineRideStage, *args, **kwargs):
        logger = init_logger(level=self.get_config_dict()["verbose"])
        try:
            return method(self, *args, **kwargs)
        finally:
            remove_handlers(logger)

    return impl
