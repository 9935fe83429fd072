"""
CSV persistence of noise-level sweeps.

One row per sigma-point, columns in CSV_COLUMNS order. Floats are written with
their shortest round-trip representation so a file reads back into the exact
records; empty cells mark tracks that were aborted or failed. Flags are joined
with ';'.
"""
import csv
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Iterable, List, Optional

from shared.constants import CSV_COLUMNS
from shared.errors import MapTestError
from shared.simulation import SweepRecord

logger = logging.getLogger(__name__)

FLAG_SEPARATOR = ';'


def format_cell(value) -> str:
    if value is None:
        return ''
    if isinstance(value, tuple):
        return FLAG_SEPARATOR.join(value)
    return repr(float(value))


def record_to_row(record: SweepRecord) -> dict:
    values = asdict(record)
    return {column: format_cell(values[column]) for column in CSV_COLUMNS}


def row_to_record(row: dict, line: Optional[int] = None) -> SweepRecord:
    values = {}
    for column in CSV_COLUMNS:
        raw = (row.get(column) or '').strip()
        if column == 'flags':
            values[column] = tuple(raw.split(FLAG_SEPARATOR)) if raw else ()
        elif raw == '':
            if column == 'sigma':
                raise MapTestError(f"CSV row {line} has no sigma")
            values[column] = None
        else:
            try:
                values[column] = float(raw)
            except ValueError:
                raise MapTestError(f"CSV row {line}: cannot parse {column}={raw!r}") from None
    return SweepRecord(**values)


def write_sweep_csv(path: Path, records: Iterable[SweepRecord]) -> int:
    """Write all records, replacing the file; returns the row count"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS, lineterminator='\n')
        writer.writeheader()
        for record in records:
            writer.writerow(record_to_row(record))
            count += 1
    return count


def read_sweep_csv(path: Path) -> List[SweepRecord]:
    path = Path(path)
    with open(path, newline='', encoding='utf-8') as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != CSV_COLUMNS:
            raise MapTestError(f"{path} does not have the sweep header {','.join(CSV_COLUMNS)}")
        # header is line 1
        return [row_to_record(row, line) for line, row in enumerate(reader, start=2)]


def load_resume(path: Path) -> List[SweepRecord]:
    """Records of an earlier, possibly interrupted run; empty when there is nothing to resume"""
    path = Path(path)
    if not path.exists():
        return []
    try:
        records = read_sweep_csv(path)
    except MapTestError as exc:
        logger.warning("not resuming from %s: %s", path, exc)
        return []
    logger.info("resuming from %s with %d sigma-points", path, len(records))
    return records


class SweepCsvWriter:
    """
    Incremental writer: one flushed row per sigma-point.

    Opening rewrites the file with the header and the rows given as `existing`
    (the resumed prefix), so a truncated last line from an interrupted run is dropped.
    """

    def __init__(self, path: Path, existing: Iterable[SweepRecord] = ()):
        self.path = Path(path)
        self.existing = list(existing)
        self.rows = 0
        self._file = None
        self._writer = None

    def __enter__(self) -> 'SweepCsvWriter':
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._file = open(self.path, 'w', newline='', encoding='utf-8')
        self._writer = csv.DictWriter(self._file, fieldnames=CSV_COLUMNS, lineterminator='\n')
        self._writer.writeheader()
        for record in self.existing:
            self._writer.writerow(record_to_row(record))
            self.rows += 1
        self._file.flush()
        return self

    def write(self, record: SweepRecord):
        self._writer.writerow(record_to_row(record))
        self._file.flush()
        self.rows += 1

    def __exit__(self, exc_type, exc, tb):
        self._file.close()
        return False
