"""Study data container and its CSV schema.

A study dataset holds two populations in one table: target-population rows
(R = 1, covariates V and W observed, treatment/outcome unobserved) and trial
rows (R = 2, treatment A and outcome Y observed). Missing values are NaN in
memory and empty fields on disk.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = ["DataError", "StudyDataset", "read_study_csv", "read_two_file_csv",
           "write_study_csv"]

COLUMNS = ("R", "A", "Y", "V", "W")


class DataError(ValueError):
    """A dataset violates the schema; ``row`` is the 0-based offender if known."""

    def __init__(self, message: str, row: Optional[int] = None):
        super().__init__(message)
        self.row = row


def _binary_ok(values: np.ndarray) -> bool:
    observed = values[~np.isnan(values)]
    return bool(np.all((observed == 0.0) | (observed == 1.0)))


@dataclass(frozen=True, eq=False)
class StudyDataset:
    """Row-aligned arrays for both populations.

    Invariants (checked on construction):

    * all five arrays share one length, with at least one row per population;
    * R is 1 (target) or 2 (trial) everywhere;
    * trial rows have non-missing A and Y;
    * target rows have non-missing V and W;
    * A, Y, and W are 0/1 wherever observed.
    """

    r: np.ndarray
    a: np.ndarray
    y: np.ndarray
    v: np.ndarray
    w: np.ndarray

    def __post_init__(self) -> None:
        r = np.asarray(self.r, dtype=float)
        arrays = {"A": self.a, "Y": self.y, "V": self.v, "W": self.w}
        coerced = {k: np.asarray(arr, dtype=float).ravel() for k, arr in arrays.items()}
        r = r.ravel()
        n = r.size
        for name, arr in coerced.items():
            if arr.size != n:
                raise DataError(
                    f"column {name} has length {arr.size}, but R has length {n}"
                )
        if n == 0:
            raise DataError("dataset is empty")
        if np.any(np.isnan(r)) or not np.all((r == 1.0) | (r == 2.0)):
            bad = int(np.flatnonzero(np.isnan(r) | ((r != 1.0) & (r != 2.0)))[0])
            raise DataError(f"R must be 1 or 2 on every row", row=bad)
        target = r == 1.0
        trial = r == 2.0
        if not target.any():
            raise DataError("dataset has no target-population rows (R=1)")
        if not trial.any():
            raise DataError("dataset has no trial rows (R=2)")
        for name in ("A", "Y"):
            missing = trial & np.isnan(coerced[name])
            if missing.any():
                raise DataError(
                    f"trial rows (R=2) must have non-missing {name}",
                    row=int(np.flatnonzero(missing)[0]),
                )
        for name in ("V", "W"):
            missing = target & np.isnan(coerced[name])
            if missing.any():
                raise DataError(
                    f"target rows (R=1) must have non-missing {name}",
                    row=int(np.flatnonzero(missing)[0]),
                )
        for name in ("A", "Y", "W"):
            if not _binary_ok(coerced[name]):
                observed = coerced[name]
                bad_mask = ~np.isnan(observed) & (observed != 0.0) & (observed != 1.0)
                raise DataError(
                    f"column {name} must be 0 or 1 where observed",
                    row=int(np.flatnonzero(bad_mask)[0]),
                )
        object.__setattr__(self, "r", r.astype(np.int64))
        for name, attr in (("A", "a"), ("Y", "y"), ("V", "v"), ("W", "w")):
            object.__setattr__(self, attr, coerced[name])

    @property
    def n(self) -> int:
        return self.r.size

    @property
    def target(self) -> np.ndarray:
        """Boolean mask of target-population rows (R=1)."""
        return self.r == 1

    @property
    def trial(self) -> np.ndarray:
        """Boolean mask of trial rows (R=2)."""
        return self.r == 2

    @property
    def n_target(self) -> int:
        return int(self.target.sum())

    @property
    def n_trial(self) -> int:
        return int(self.trial.sum())

    def columns(self) -> dict[str, np.ndarray]:
        """Named covariate/outcome columns for design-matrix construction."""
        return {"A": self.a, "Y": self.y, "V": self.v, "W": self.w}

    def subset(self, mask: np.ndarray) -> "StudyDataset":
        """A new dataset restricted to ``mask`` (must keep both populations)."""
        mask = np.asarray(mask, dtype=bool)
        return StudyDataset(
            r=self.r[mask], a=self.a[mask], y=self.y[mask],
            v=self.v[mask], w=self.w[mask],
        )


def _parse_cell(text: str, column: str, line: int):
    text = text.strip()
    if text == "":
        return np.nan
    try:
        return float(text)
    except ValueError:
        raise DataError(
            f"line {line}: column {column} has non-numeric value {text!r}"
        ) from None


def _read_rows(path: str, required: tuple[str, ...]) -> dict[str, np.ndarray]:
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: file is empty (header row required)") from None
        names = [cell.strip() for cell in header]
        for column in required:
            if column not in names:
                raise DataError(
                    f"{path}: header {names} is missing required column {column!r}"
                )
        unknown = [c for c in names if c not in COLUMNS]
        if unknown:
            raise DataError(f"{path}: unknown columns {unknown}; expected {list(COLUMNS)}")
        index = {name: names.index(name) for name in names}
        values: dict[str, list[float]] = {name: [] for name in names}
        for line_no, row in enumerate(reader, start=2):
            if not row or all(cell.strip() == "" for cell in row):
                continue  # tolerate blank lines
            if len(row) != len(names):
                raise DataError(
                    f"{path} line {line_no}: expected {len(names)} fields, got {len(row)}"
                )
            for name in names:
                values[name].append(_parse_cell(row[index[name]], name, line_no))
    if not values[required[0]]:
        raise DataError(f"{path}: no data rows")
    return {name: np.asarray(vals, dtype=float) for name, vals in values.items()}


def _build(path: str, cols: dict[str, np.ndarray]) -> StudyDataset:
    n = cols["R"].size
    nan = np.full(n, np.nan)
    try:
        return StudyDataset(
            r=cols["R"],
            a=cols.get("A", nan),
            y=cols.get("Y", nan),
            v=cols.get("V", nan),
            w=cols.get("W", nan),
        )
    except DataError as exc:
        if exc.row is not None:
            raise DataError(f"{path} line {exc.row + 2}: {exc}") from None
        raise DataError(f"{path}: {exc}") from None


def read_study_csv(path: str) -> StudyDataset:
    """Read a combined two-population CSV (columns R, A, Y, V, W)."""
    cols = _read_rows(path, required=("R",))
    return _build(path, cols)


def read_two_file_csv(trial_path: str, target_path: str) -> StudyDataset:
    """Read separate trial and target CSVs; R is inferred per file.

    The trial file needs A, Y, V, W; the target file needs V, W. If either
    file carries an explicit R column it must match the inferred value.
    """
    parts = []
    for path, r_value, required in (
        (trial_path, 2.0, ("A", "Y", "V", "W")),
        (target_path, 1.0, ("V", "W")),
    ):
        cols = _read_rows(path, required=required)
        n = cols[required[0]].size
        if "R" in cols:
            mismatch = cols["R"] != r_value
            if mismatch.any():
                line = int(np.flatnonzero(mismatch)[0]) + 2
                raise DataError(
                    f"{path} line {line}: R={cols['R'][np.flatnonzero(mismatch)[0]]:g} "
                    f"conflicts with inferred R={r_value:g} for this file"
                )
        cols["R"] = np.full(n, r_value)
        nan = np.full(n, np.nan)
        parts.append({name: cols.get(name, nan) for name in COLUMNS})
    merged = {name: np.concatenate([part[name] for part in parts]) for name in COLUMNS}
    return _build(f"{trial_path}+{target_path}", merged)


def _format_cell(value: float) -> str:
    if np.isnan(value):
        return ""
    if value == int(value):
        return str(int(value))
    return repr(float(value))


def write_study_csv(data: StudyDataset, path: str) -> None:
    """Write the combined CSV representation (inverse of read_study_csv)."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(COLUMNS)
        for i in range(data.n):
            writer.writerow([
                str(int(data.r[i])),
                _format_cell(data.a[i]),
                _format_cell(data.y[i]),
                _format_cell(data.v[i]),
                _format_cell(data.w[i]),
            ])
