"""Artifact writing helpers: atomic replace and lossless float text."""

import contextlib
import logging
import os
import tempfile
from pathlib import Path
from typing import Iterator, TextIO, Union

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]


def fmt_float(value: float) -> str:
    """Shortest text that parses back to the identical double."""
    return repr(float(value))


@contextlib.contextmanager
def atomic_write(path: PathLike) -> Iterator[TextIO]:
    """Open a temporary sibling of ``path`` for writing and rename it into place on success.

    An interrupted write leaves the previous file (or nothing) at ``path``.
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            yield handle
        os.replace(tmp_name, target)
        logger.debug(f"ARTIFACT: wrote {target}")
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp_name)
        raise
