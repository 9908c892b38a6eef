"""
CSV output for trial and experiment results, and reading it back.

Schemas:
    trials      protocol, n, seed, trial, stop_kind, interactions,
                parallel_time, converged_at, timed_out
    experiment  protocol, n, trials, mean_parallel_time, std_error, timeouts,
                speed_fault_rate, converged_before_stable, mean_gap,
                max_density
    fit         protocol, n, trials, mean_parallel_time, std_error, timeouts
"""
import io
import logging
import sys
from pathlib import Path
from typing import Iterable, Optional, TextIO, Union

import pandas as pd

logger = logging.getLogger(__name__)

TRIAL_COLUMNS = [
    'protocol', 'n', 'seed', 'trial', 'stop_kind', 'interactions',
    'parallel_time', 'converged_at', 'timed_out',
]
EXPERIMENT_COLUMNS = [
    'protocol', 'n', 'trials', 'mean_parallel_time', 'std_error', 'timeouts',
    'speed_fault_rate', 'converged_before_stable', 'mean_gap', 'max_density',
]
FIT_COLUMNS = EXPERIMENT_COLUMNS[:6]

# Fixed float rendering keeps repeated runs byte-identical
FLOAT_FORMAT = '%.10g'


class CSVError(Exception):
    """Base exception for CSV reading and writing errors"""
    pass


def require_columns(df: pd.DataFrame, columns: Iterable[str]) -> None:
    """
    Raises:
        CSVError: Naming the columns df lacks
    """
    missing = [column for column in columns if column not in df.columns]
    if missing:
        raise CSVError(f"Missing columns: {missing}")


def trial_frame(results: Iterable) -> pd.DataFrame:
    """One row per TrialResult in the trials schema."""
    return pd.DataFrame([r.to_row() for r in results], columns=TRIAL_COLUMNS)


def write_frame(df: pd.DataFrame, out: Optional[Union[str, Path]] = None,
                stream: Optional[TextIO] = None) -> None:
    """
    Write a frame as CSV to a file, or to stream (stdout by default)

    Raises:
        CSVError: If the file cannot be written
    """
    if out is None:
        df.to_csv(stream or sys.stdout, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
        return
    path = Path(out)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
        logger.info(f"Wrote {len(df)} rows to {path}")
    except OSError as e:
        logger.error(f"Error writing CSV {path}: {str(e)}")
        raise CSVError(f"cannot write {path}: {e.strerror or e}") from e


def detect_encoding(content: bytes) -> str:
    """
    Detect the encoding of CSV content

    Returns:
        str: utf-8-sig, utf-8 or latin-1

    Raises:
        CSVError: If no supported encoding decodes the content
    """
    for encoding in ('utf-8-sig', 'utf-8', 'latin-1'):
        try:
            content.decode(encoding)
            logger.debug(f"Successfully decoded content with {encoding} encoding")
            return encoding
        except UnicodeDecodeError:
            continue
    raise CSVError("Could not decode file content with any supported encoding")


def read_results(file: Union[str, Path, bytes]) -> pd.DataFrame:
    """
    Read a results CSV written by this package

    Args:
        file: Path or raw bytes

    Returns:
        pd.DataFrame: The rows; empty ``converged_at`` cells become NaN

    Raises:
        CSVError: If the file cannot be read or parsed
    """
    try:
        content = file if isinstance(file, bytes) else Path(file).read_bytes()
    except OSError as e:
        logger.error(f"Error reading CSV {file}: {str(e)}")
        raise CSVError(f"cannot read {file}: {e.strerror or e}") from e
    if not content.strip():
        raise CSVError("CSV file is empty")
    try:
        return pd.read_csv(io.BytesIO(content), encoding=detect_encoding(content))
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        logger.error(f"Error parsing CSV: {str(e)}")
        raise CSVError(f"cannot parse CSV: {str(e)}") from e
