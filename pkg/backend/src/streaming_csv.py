"""
Streaming CSV output for large exports (synthetic metering data, attributes,
bill exports) written block by block instead of from one in-memory frame.
"""

import csv
import gzip
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Generator, Optional, Sequence, Union

import pandas as pd

from exceptions import file_operation_error
from logging_config import setup_logging

logger = setup_logging(__name__)


@dataclass
class StreamingConfig:
    """Configuration for streaming CSV output."""
    chunk_size: int = 10000
    use_compression: bool = False


class StreamingCSVWriter:
    """Append-only CSV writer that flushes every ``chunk_size`` rows."""

    def __init__(self, path: Union[str, Path], headers: Sequence[str],
                 config: Optional[StreamingConfig] = None):
        self.path = Path(path)
        self.headers = list(headers)
        self.config = config or StreamingConfig()
        self.file_handle = None
        self.writer = None
        self.row_count = 0
        self._since_flush = 0

    def __enter__(self):
        self.open()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()

    @property
    def compressed(self) -> bool:
        return self.config.use_compression or self.path.suffix == ".gz"

    def open(self) -> "StreamingCSVWriter":
        """Create the file and write the header row."""
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            if self.compressed:
                self.file_handle = gzip.open(self.path, "wt", newline="", encoding="utf-8")
            else:
                self.file_handle = open(self.path, "w", newline="", encoding="utf-8")
        except OSError as e:
            raise file_operation_error(str(e), str(self.path), "open_csv")
        self.writer = csv.writer(self.file_handle, lineterminator="\n")
        self.writer.writerow(self.headers)
        return self

    def _count(self, rows: int):
        self.row_count += rows
        self._since_flush += rows
        if self._since_flush >= self.config.chunk_size:
            self.file_handle.flush()
            self._since_flush = 0
            logger.debug("Flushed buffer", extra={"path": str(self.path), "rows": self.row_count})

    def write_row(self, row: Sequence[Any]):
        """Write a single row."""
        if not self.writer:
            raise RuntimeError("Writer not initialized. Call open() first.")
        self.writer.writerow(row)
        self._count(1)

    def write_rows(self, rows: Sequence[Sequence[Any]]):
        for row in rows:
            self.write_row(row)

    def write_frame(self, frame: pd.DataFrame):
        """Append a DataFrame whose columns match the header."""
        if not self.writer:
            raise RuntimeError("Writer not initialized. Call open() first.")
        if list(frame.columns) != self.headers:
            raise ValueError(f"Frame columns {list(frame.columns)} do not match header {self.headers}")
        frame.to_csv(self.file_handle, header=False, index=False, lineterminator="\n")
        self._count(len(frame))

    def close(self):
        if self.file_handle:
            self.file_handle.close()
            self.file_handle = None
        self.writer = None


def frame_chunks(df: pd.DataFrame, chunk_size: int = 10000) -> Generator[pd.DataFrame, None, None]:
    """Yield consecutive row slices of ``df``."""
    for start_idx in range(0, len(df), chunk_size):
        yield df.iloc[start_idx:start_idx + chunk_size]


def write_frame_csv(path: Union[str, Path], frame: pd.DataFrame,
                    config: Optional[StreamingConfig] = None) -> int:
    """Write a whole frame through the streaming writer; returns the row count."""
    config = config or StreamingConfig()
    with StreamingCSVWriter(path, list(frame.columns), config) as writer:
        for chunk in frame_chunks(frame, config.chunk_size):
            writer.write_frame(chunk)
        logger.info("Wrote CSV", extra={"path": str(path), "rows": writer.row_count})
        return writer.row_count
