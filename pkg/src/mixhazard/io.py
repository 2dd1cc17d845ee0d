"""Spell and exit-rate table files.

Spell files have the header ``id,notice,duration,censored`` followed by any
number of ``x_<name>`` covariate columns.
"""

from __future__ import annotations

import csv
import math

import numpy as np

from mixhazard.core import ExitRateTable, SpellData

REQUIRED = ("id", "notice", "duration", "censored")


class SchemaError(ValueError):
    """Malformed input file; the message names the row and column."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.row = row
        self.column = column


def weeks_to_bins(weeks: int, width: int = 12) -> int:
    """Ceiling division into ``width``-week bins; week 0 (job-to-job) lands in bin 1."""
    return max(1, math.ceil(weeks / width))


def read_spells(path, notice_labels=None, bin_weeks: int | None = None) -> SpellData:
    """Read a spell CSV.

    ``notice_labels`` fixes the notice order (the first is the reference);
    by default labels are sorted.  With ``bin_weeks`` durations are week
    counts converted by :func:`weeks_to_bins`.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError("empty file", row=1) from None
        for col in REQUIRED:
            if col not in header:
                raise SchemaError("required column missing from header", row=1, column=col)
        extra = [h for h in header if h not in REQUIRED]
        for h in extra:
            if not h.startswith("x_") or len(h) < 3:
                raise SchemaError("unexpected column; covariates must be named x_<name>", row=1, column=h)
        if len(set(header)) != len(header):
            raise SchemaError("duplicate column names", row=1)
        pos = {h: i for i, h in enumerate(header)}
        ids, notices, durs, cens, X = [], [], [], [], []
        for rownum, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise SchemaError(f"expected {len(header)} fields, found {len(row)}", row=rownum)
            ids.append(row[pos["id"]].strip())
            lab = row[pos["notice"]].strip()
            if not lab:
                raise SchemaError("empty notice label", row=rownum, column="notice")
            notices.append(lab)
            raw = row[pos["duration"]].strip()
            try:
                d = int(raw)
            except ValueError:
                raise SchemaError(f"duration must be an integer, got {raw!r}", row=rownum, column="duration") from None
            if bin_weeks:
                if d < 0:
                    raise SchemaError(f"week count must be nonnegative, got {d}", row=rownum, column="duration")
                d = weeks_to_bins(d, bin_weeks)
            elif d < 1:
                raise SchemaError(f"duration must be a positive integer, got {d}", row=rownum, column="duration")
            durs.append(d)
            c = row[pos["censored"]].strip()
            if c not in ("0", "1"):
                raise SchemaError(f"censored must be 0 or 1, got {c!r}", row=rownum, column="censored")
            cens.append(c == "1")
            xs = []
            for h in extra:
                try:
                    v = float(row[pos[h]])
                except ValueError:
                    raise SchemaError(f"covariate must be numeric, got {row[pos[h]]!r}", row=rownum, column=h) from None
                if not math.isfinite(v):
                    raise SchemaError("covariate must be finite", row=rownum, column=h)
                xs.append(v)
            X.append(xs)
    found = sorted(set(notices))
    if notice_labels is None:
        notice_labels = found
    else:
        notice_labels = list(notice_labels)
        unknown = [lab for lab in found if lab not in notice_labels]
        if unknown:
            row = 2 + notices.index(unknown[0])
            raise SchemaError(f"notice label {unknown[0]!r} is not in the configured mapping {notice_labels}",
                              row=row, column="notice")
    code = {lab: i for i, lab in enumerate(notice_labels)}
    return SpellData(
        notice=np.array([code[lab] for lab in notices], dtype=np.int64),
        duration=np.array(durs, dtype=np.int64),
        censored=np.array(cens, dtype=bool),
        notice_labels=tuple(notice_labels),
        covariates=np.array(X, dtype=float).reshape(len(ids), len(extra)),
        covariate_names=tuple(h[2:] for h in extra),
        ids=np.array(ids, dtype=object),
    )


def _fmt(v: float) -> str:
    return repr(float(v)) if v != int(v) else str(int(v))


def write_spells(data: SpellData, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(REQUIRED) + [f"x_{c}" for c in data.covariate_names])
        for i in range(len(data)):
            w.writerow([data.ids[i], data.notice_labels[data.notice[i]], int(data.duration[i]),
                        int(data.censored[i])] + [_fmt(v) for v in data.covariates[i]])


def write_rows(rows, path, fieldnames=None):
    rows = list(rows)
    with open(path, "w", newline="") as fh:
        if not rows and not fieldnames:
            return
        fieldnames = fieldnames or list(rows[0])
        w = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in fieldnames})


def write_table(table: ExitRateTable, path):
    write_rows(table.rows(), path, ["notice", "d", "numerator", "denominator", "hazard", "exits", "at_risk"])


def read_table(path, notice_labels=None) -> ExitRateTable:
    """Exit-rate table from a CSV with columns ``notice,d,numerator,denominator``."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for col in ("notice", "d", "numerator", "denominator"):
            if col not in (reader.fieldnames or []):
                raise SchemaError("required column missing from header", row=1, column=col)
        cells = {}
        for rownum, row in enumerate(reader, start=2):
            try:
                d = int(row["d"])
            except ValueError:
                raise SchemaError("d must be an integer", row=rownum, column="d") from None
            vals = []
            for col in ("numerator", "denominator"):
                try:
                    vals.append(float(row[col]))
                except ValueError:
                    raise SchemaError(f"{col} must be numeric", row=rownum, column=col) from None
            cells[(row["notice"].strip(), d)] = vals
    labels = list(notice_labels) if notice_labels else sorted({k[0] for k in cells})
    Dbar = max(k[1] for k in cells)
    num = np.zeros((len(labels), Dbar))
    den = np.zeros((len(labels), Dbar))
    for l, lab in enumerate(labels):
        for d in range(1, Dbar + 1):
            if (lab, d) not in cells:
                raise SchemaError(f"missing cell for notice {lab!r} at d={d}")
            num[l, d - 1], den[l, d - 1] = cells[(lab, d)]
    return ExitRateTable(num, den, tuple(labels), "population")
