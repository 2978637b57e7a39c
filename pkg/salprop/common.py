# salprop/common.py
"""
Shared helpers used by every stage of the proposal pipeline.

Contains:
    - The error hierarchy and the exit code each family maps to.
    - Logging setup and the single fallback announcement helper.
    - Atomic file writing and '#'-comment aware CSV reading.
"""

import csv
import io
import logging
import os
import tempfile
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional

logger = logging.getLogger(__name__)

# Exit codes used by the command-line front end.
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_DATA = 3


class SalPropError(Exception):
    """Base class for every error raised on purpose by salprop."""

    exit_code = EXIT_DATA


class UsageError(SalPropError):
    """Bad command-line usage or an invalid configuration value."""

    exit_code = EXIT_USAGE


class DataError(SalPropError, ValueError):
    """Input data is malformed, inconsistent or degenerate."""

    exit_code = EXIT_DATA


class DecodeError(DataError):
    pass


class TooSmall(DataError):
    pass


class BadMagic(DataError):
    pass


class Truncated(DataError):
    pass


class BadValue(DataError):
    pass


class AlreadySparse(DataError):
    pass


class NotSparse(DataError):
    pass


class EmptyInput(DataError):
    pass


class SizeMismatch(DataError):
    pass


class TooLarge(DataError):
    pass


class EmptyTrainingSet(DataError):
    pass


class NonFinite(DataError):
    pass


class BadVersion(DataError):
    pass


class ParseError(DataError):
    pass


class MissingField(DataError):
    pass


class NoGroundTruth(DataError):
    pass


class IdMismatch(DataError):
    pass


class ImageTooSmall(DataError):
    pass


def exit_code_for(error: BaseException) -> int:
    """
    Map an exception to the process exit code of the CLI.

    Parameters
    ----------
    error : BaseException
        The exception that stopped a command.

    Returns
    -------
    int
        1 for usage problems, 2 for file system problems, 3 for data problems.
    """
    if isinstance(error, SalPropError):
        return error.exit_code
    if isinstance(error, OSError):
        return EXIT_IO
    return EXIT_DATA


def configure_logging(verbosity: int = 0) -> None:
    """Configure root logging once: 0 → WARNING, 1 → INFO, 2+ → DEBUG."""
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)-7s %(name)s: %(message)s",
        datefmt="%H:%M:%S",
    )


def fallback_message(component: str, cause: object, fallback: str) -> None:
    """
    Log a clear, consistent message when a stage falls back to a default.

    Parameters
    ----------
    component : str
        Which stage could not run as requested ("Edge map", "Texture context", ...).
    cause : object
        The exception or a short reason string.
    fallback : str
        What the pipeline does instead.
    """
    logger.warning("[FALLBACK] %s unavailable → cause: %s → using %s", component, cause, fallback)


def atomic_write_text(path: os.PathLike, text: str) -> Path:
    """
    Write text to ``path`` through a temporary file and an atomic rename.

    Readers never observe a half-written file, even when several worker
    threads produce outputs into the same directory.
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp_name, target)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise
    return target


def atomic_write_bytes(path: os.PathLike, payload: bytes) -> Path:
    """Binary counterpart of :func:`atomic_write_text`."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp_name, target)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise
    return target


def header_comment(command: str, settings: Optional[Mapping[str, object]] = None) -> str:
    """Return the reproducibility comment line that opens every output CSV."""
    parts = [f"# salprop {command}"]
    for key, value in (settings or {}).items():
        parts.append(f"{key}={value}")
    return " ".join(parts) + "\n"


def render_csv(header: Iterable[str], rows: Iterable[Iterable[object]], comment: str = "") -> str:
    """Render a header plus rows as CSV text, optionally preceded by a comment line."""
    buf = io.StringIO()
    buf.write(comment)
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(header))
    for row in rows:
        writer.writerow(list(row))
    return buf.getvalue()


def read_csv_rows(path: os.PathLike) -> List[List[str]]:
    """
    Read a CSV file, skipping '#' comment lines and blank lines.

    Returns
    -------
    list of list of str
        Remaining rows, header included.
    """
    with open(path, "r", encoding="utf-8", newline="") as handle:
        lines = [ln for ln in handle if ln.strip() and not ln.lstrip().startswith("#")]
    return [row for row in csv.reader(lines)]


def read_header_settings(path: os.PathLike) -> Dict[str, str]:
    """key=value pairs of the ``# salprop <command>`` line that opens a CSV, empty if absent."""
    with open(path, "r", encoding="utf-8") as handle:
        first = handle.readline().strip()
    if not first.startswith("# salprop"):
        return {}
    pairs = (token.split("=", 1) for token in first.split()[3:] if "=" in token)
    return {key: value for key, value in pairs}
