"""Tabular cohort ingestion, filtering, and deterministic file output.

Cohort files are UTF-8, tab-delimited, with a header row and long-format
records (person_id, time_index, clone_id, count).  Per-person-time
offsets are derived as the sum of counts over all clones at that
person-time, before any filtering, unless an explicit offsets sidecar is
supplied (simulated cohorts need one, because their counts are draws
around exogenous totals rather than a partition of them).

All writers emit a canonical row order and shortest round-trip float
formatting, and replace the target file atomically.
"""

from __future__ import annotations

import csv
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ParseError, ValidationError
from .model import CloneSeries
from .simulate import SimTruth

COHORT_COLUMNS = ("person_id", "time_index", "clone_id", "count")
OFFSETS_COLUMNS = ("person_id", "time_index", "total_reads")
STRATA_COLUMNS = ("person_id", "stratum")
TRUTH_COLUMNS = ("person_id", "clone_id", "dynamic")


@dataclass(frozen=True)
class CohortTable:
    """Validated long-format cohort with derived (or supplied) offsets."""

    rows: tuple[tuple[str, int, str, int], ...]
    offsets: dict[tuple[str, int], int]
    strata: dict[str, int] | None = None


def _read_rows(path: str | Path, columns: Sequence[str]) -> list[tuple[list[str], int]]:
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle, delimiter="\t")
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: file is empty") from None
        if header != list(columns):
            raise ParseError(
                f"{path}: expected header {list(columns)}, got {header}", line=1
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(columns):
                raise ParseError(f"{path}: expected {len(columns)} fields, got {len(row)}", lineno)
            rows.append((row, lineno))
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    return rows


def _parse_int(value: str, what: str, lineno: int, minimum: int = 0) -> int:
    try:
        parsed = int(value)
    except ValueError:
        raise ParseError(f"{what} is not an integer: {value!r}", lineno) from None
    if parsed < minimum:
        raise ParseError(f"{what} must be >= {minimum}, got {parsed}", lineno)
    return parsed


def read_strata(path: str | Path) -> dict[str, int]:
    strata: dict[str, int] = {}
    for (person, stratum), lineno in _read_rows(path, STRATA_COLUMNS):
        value = _parse_int(stratum, "stratum", lineno)
        if value not in (0, 1):
            raise ParseError(f"stratum must be 0 or 1, got {value}", lineno)
        if person in strata:
            raise ParseError(f"duplicate person {person!r}", lineno)
        strata[person] = value
    return strata


def read_offsets(path: str | Path) -> dict[tuple[str, int], int]:
    offsets: dict[tuple[str, int], int] = {}
    for (person, time, total), lineno in _read_rows(path, OFFSETS_COLUMNS):
        key = (person, _parse_int(time, "time_index", lineno))
        if key in offsets:
            raise ParseError(f"duplicate person-time {key}", lineno)
        offsets[key] = _parse_int(total, "total_reads", lineno, minimum=1)
    return offsets


def read_truth_labels(path: str | Path) -> dict[tuple[str, str], bool]:
    labels: dict[tuple[str, str], bool] = {}
    for (person, clone, dynamic), lineno in _read_rows(path, TRUTH_COLUMNS):
        key = (person, clone)
        if key in labels:
            raise ParseError(f"duplicate clone {key}", lineno)
        labels[key] = bool(_parse_int(dynamic, "dynamic", lineno))
    return labels


def ingest(
    path: str | Path,
    offsets_path: str | Path | None = None,
    strata_path: str | Path | None = None,
) -> CohortTable:
    """Read and validate a cohort table.

    Offsets are computed from the full, unfiltered table so they reflect
    the whole repertoire; an explicit offsets file overrides the derived
    sums (it must cover every person-time and dominate every count).
    """
    rows: list[tuple[str, int, str, int]] = []
    seen: set[tuple[str, int, str]] = set()
    derived: dict[tuple[str, int], int] = {}
    for (person, time, clone, count), lineno in _read_rows(Path(path), COHORT_COLUMNS):
        time_index = _parse_int(time, "time_index", lineno)
        count_value = _parse_int(count, "count", lineno)
        dup_key = (person, time_index, clone)
        if dup_key in seen:
            raise ParseError(f"duplicate (person_id, time_index, clone_id) {dup_key}", lineno)
        seen.add(dup_key)
        rows.append((person, time_index, clone, count_value))
        pt = (person, time_index)
        derived[pt] = derived.get(pt, 0) + count_value

    if offsets_path is not None:
        offsets = read_offsets(offsets_path)
        for person, time_index, clone, count_value in rows:
            total = offsets.get((person, time_index))
            if total is None:
                raise ValidationError(
                    f"offsets file does not cover person-time {(person, time_index)}"
                )
            if count_value > total:
                raise ValidationError(
                    f"count {count_value} for clone {clone!r} exceeds the "
                    f"offset {total} at {(person, time_index)}"
                )
    else:
        offsets = derived
        for pt, total in offsets.items():
            if total <= 0:
                raise ValidationError(
                    f"person-time {pt} has zero total reads; supply an explicit offsets file"
                )

    strata = read_strata(strata_path) if strata_path is not None else None
    return CohortTable(rows=tuple(rows), offsets=offsets, strata=strata)


def filter_clones(
    table: CohortTable,
    min_total_reads: int,
    absent_as_zero: bool = True,
) -> list[CloneSeries]:
    """Assemble per-clone series, keeping clones whose recorded counts sum
    to at least min_total_reads.

    With absent_as_zero, a kept clone also gets an explicit zero count at
    every person-time where its person was sampled but the clone had no
    row, so contractions to zero stay in the model.  Offsets always come
    from the unfiltered table.
    """
    if min_total_reads < 0:
        raise ValidationError("min_total_reads must be >= 0")

    person_times: dict[str, list[int]] = {}
    for person, time_index in table.offsets:
        person_times.setdefault(person, []).append(time_index)
    for times in person_times.values():
        times.sort()

    by_clone: dict[tuple[str, str], dict[int, int]] = {}
    for person, time_index, clone, count in table.rows:
        by_clone.setdefault((person, clone), {})[time_index] = count

    out: list[CloneSeries] = []
    for (person, clone) in sorted(by_clone):
        observed = by_clone[(person, clone)]
        if sum(observed.values()) < min_total_reads:
            continue
        times = person_times[person] if absent_as_zero else sorted(observed)
        counts = [observed.get(t, 0) for t in times]
        offsets = [table.offsets[(person, t)] for t in times]
        out.append(
            CloneSeries(
                clone_id=clone,
                person_id=person,
                counts=np.array(counts, dtype=np.int64),
                offsets=np.array(offsets, dtype=np.int64),
                times=np.array(times, dtype=np.int64),
            )
        )
    return out


def format_float(value: float) -> str:
    """Shortest decimal representation that round-trips the float."""
    return repr(float(value))


def atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def write_table(path: str | Path, columns: Sequence[str], rows: Iterable[Sequence[str]]) -> None:
    lines = ["\t".join(columns)]
    lines.extend("\t".join(row) for row in rows)
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_cohort(path: str | Path, table_or_series: CohortTable | Iterable[CloneSeries]) -> None:
    """Write cohort rows in canonical (person, time, clone) order."""
    if isinstance(table_or_series, CohortTable):
        rows = list(table_or_series.rows)
    else:
        rows = [
            (s.person_id, int(t), s.clone_id, int(c))
            for s in table_or_series
            for t, c in zip(s.times, s.counts)
        ]
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    write_table(path, COHORT_COLUMNS, ((p, str(t), c, str(n)) for p, t, c, n in rows))


def write_offsets(path: str | Path, offsets: Mapping[tuple[str, int], int]) -> None:
    write_table(
        path,
        OFFSETS_COLUMNS,
        ((p, str(t), str(offsets[(p, t)])) for p, t in sorted(offsets)),
    )


def offsets_from_series(series: Iterable[CloneSeries]) -> dict[tuple[str, int], int]:
    """Collect the per-person-time totals referenced by a series collection."""
    offsets: dict[tuple[str, int], int] = {}
    for s in series:
        for t, o in zip(s.times, s.offsets):
            key = (s.person_id, int(t))
            previous = offsets.setdefault(key, int(o))
            if previous != int(o):
                raise ValidationError(f"conflicting offsets recorded for person-time {key}")
    return offsets


def write_truth(path: str | Path, truth: SimTruth) -> None:
    write_table(
        path,
        TRUTH_COLUMNS,
        ((p, c, str(int(truth.labels[(p, c)]))) for p, c in sorted(truth.labels)),
    )


def write_strata(path: str | Path, strata: Mapping[str, int]) -> None:
    write_table(path, STRATA_COLUMNS, ((p, str(int(strata[p]))) for p in sorted(strata)))
