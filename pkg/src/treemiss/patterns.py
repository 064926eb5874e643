"""Missing-data patterns, their partial order, and pattern-tagged datasets."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .util import atomic_write_text

# Exhaustive pattern sets hold 2^d nodes, so they are only tractable for
# moderate d; explicit pattern sets taken from data may use the full mask width.
MAX_EXHAUSTIVE_D = 24
MAX_D = 64

MISSING_TOKENS = ("", "NA")


@dataclass(frozen=True)
class MissingPattern:
    """Observed/missing indicator over d coordinates.

    Bit j of ``mask`` is set when coordinate j (0-based) is observed.  The
    string form writes coordinate 1 leftmost, e.g. ``"101"`` observes
    coordinates 1 and 3 of a 3-vector.
    """

    d: int
    mask: int

    def __post_init__(self):
        if not 1 <= self.d <= MAX_D:
            raise ValueError(f"pattern dimension must be in [1, {MAX_D}], got {self.d}")
        if not 0 <= self.mask < (1 << self.d):
            raise ValueError(f"mask {self.mask} out of range for d={self.d}")

    @classmethod
    def from_bits(cls, bits: Sequence[int]) -> "MissingPattern":
        mask = 0
        for j, b in enumerate(bits):
            if b not in (0, 1):
                raise ValueError("pattern bits must be 0 or 1")
            mask |= int(b) << j
        return cls(len(bits), mask)

    @classmethod
    def from_string(cls, s: str) -> "MissingPattern":
        if not s or any(c not in "01" for c in s):
            raise ValueError(f"pattern string must be a nonempty run of 0/1, got {s!r}")
        return cls.from_bits([int(c) for c in s])

    @classmethod
    def full(cls, d: int) -> "MissingPattern":
        return cls(d, (1 << d) - 1)

    def bit(self, j: int) -> int:
        return (self.mask >> j) & 1

    @property
    def bits(self) -> tuple[int, ...]:
        return tuple((self.mask >> j) & 1 for j in range(self.d))

    @property
    def observed(self) -> tuple[int, ...]:
        """0-based indices of observed coordinates."""
        return tuple(j for j in range(self.d) if self.bit(j))

    @property
    def missing(self) -> tuple[int, ...]:
        return tuple(j for j in range(self.d) if not self.bit(j))

    @property
    def n_observed(self) -> int:
        return self.mask.bit_count()

    @property
    def n_missing(self) -> int:
        return self.d - self.n_observed

    @property
    def is_full(self) -> bool:
        return self.mask == (1 << self.d) - 1

    def __str__(self) -> str:
        return "".join("1" if self.bit(j) else "0" for j in range(self.d))

    def __repr__(self) -> str:
        return f"MissingPattern({self})"


def lex_sorted(patterns: Iterable[MissingPattern]) -> list[MissingPattern]:
    """Canonical ordering: lexicographic on the bit-string form."""
    return sorted(patterns, key=str)


def dominates(s: MissingPattern, r: MissingPattern) -> bool:
    """True iff every coordinate observed under r is also observed under s, strictly.

    Equal patterns return False so the relation is a strict partial order.
    """
    if s.d != r.d:
        raise ValueError(f"pattern dimension mismatch: {s.d} vs {r.d}")
    if s.mask == r.mask:
        return False
    return (r.mask & ~s.mask) == 0


def potential_parents(r: MissingPattern, patterns: Iterable[MissingPattern]) -> set[MissingPattern]:
    """All members of ``patterns`` that strictly dominate r."""
    pats = set(patterns)
    if r not in pats:
        raise ValueError(f"pattern {r} is not in the working pattern set")
    if r.is_full:
        raise ValueError("the fully observed pattern has no potential parents")
    return {s for s in pats if dominates(s, r)}


def all_patterns(d: int) -> list[MissingPattern]:
    """Every pattern on d coordinates, lexicographically ordered."""
    if not 1 <= d <= MAX_EXHAUSTIVE_D:
        raise ValueError(f"exhaustive pattern sets require 1 <= d <= {MAX_EXHAUSTIVE_D}")
    return lex_sorted(MissingPattern(d, m) for m in range(1 << d))


def pattern_of_row(row: np.ndarray) -> MissingPattern:
    return MissingPattern.from_bits([0 if np.isnan(v) else 1 for v in row])


@dataclass(frozen=True)
class IncompleteDataset:
    """Rows with NaN marking missing entries plus per-row pattern masks.

    NaN is the explicit absent-value marker; it is never a valid data value.
    """

    values: np.ndarray  # (n, d) float64, NaN exactly at missing coordinates
    masks: np.ndarray  # (n,) int64

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        masks = np.asarray(self.masks, dtype=np.int64)
        if values.ndim != 2 or values.shape[0] < 1:
            raise ValueError("dataset needs a 2-d value array with at least one row")
        if masks.shape != (values.shape[0],):
            raise ValueError("mask array must have one entry per row")
        derived = (~np.isnan(values)).astype(np.int64) @ (1 << np.arange(values.shape[1], dtype=np.int64))
        if not np.array_equal(derived, masks):
            bad = int(np.nonzero(derived != masks)[0][0])
            raise ValueError(f"row {bad}: defined entries do not match the declared pattern")
        values.setflags(write=False)
        masks.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "masks", masks)

    @classmethod
    def from_values(cls, values) -> "IncompleteDataset":
        values = np.asarray(values, dtype=float)
        if values.ndim != 2:
            raise ValueError("expected a 2-d array of values")
        masks = (~np.isnan(values)).astype(np.int64) @ (1 << np.arange(values.shape[1], dtype=np.int64))
        return cls(values, masks)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def pattern(self, i: int) -> MissingPattern:
        return MissingPattern(self.d, int(self.masks[i]))

    def pattern_counts(self) -> dict[MissingPattern, int]:
        out: dict[MissingPattern, int] = {}
        masks, counts = np.unique(self.masks, return_counts=True)
        for m, c in zip(masks, counts):
            out[MissingPattern(self.d, int(m))] = int(c)
        return dict(sorted(out.items(), key=lambda kv: str(kv[0])))

    def patterns(self, min_rows: int = 1) -> list[MissingPattern]:
        return [p for p, c in self.pattern_counts().items() if c >= min_rows]

    def row_indices(self, pattern: MissingPattern) -> np.ndarray:
        if pattern.d != self.d:
            raise ValueError("pattern dimension mismatch")
        return np.nonzero(self.masks == pattern.mask)[0]

    def rows_with(self, pattern: MissingPattern) -> np.ndarray:
        """Full-width rows (with NaNs) carrying the given pattern."""
        return np.array(self.values[self.row_indices(pattern)], copy=True)

    def observed_rows_with(self, pattern: MissingPattern) -> np.ndarray:
        """Rows for the pattern restricted to its observed coordinates."""
        rows = self.values[self.row_indices(pattern)]
        return np.array(rows[:, list(pattern.observed)], copy=True)

    def complete_values(self) -> np.ndarray:
        return self.rows_with(MissingPattern.full(self.d))


def read_data_csv(path) -> tuple[IncompleteDataset, list[str]]:
    """Load a dataset: header row of names, empty cells or "NA" mean missing."""
    with open(path, newline="") as fh:
        reader = csv.reader(row for row in fh if not row.startswith("#"))
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("empty CSV: expected a header row") from None
        d = len(header)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d:
                raise ValueError(f"row {lineno}: expected {d} cells, got {len(row)}")
            parsed = []
            for j, cell in enumerate(row):
                cell = cell.strip()
                if cell in MISSING_TOKENS:
                    parsed.append(np.nan)
                    continue
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise ValueError(
                        f"row {lineno}, column {header[j]!r}: cannot parse {cell!r} as a number"
                    ) from None
            rows.append(parsed)
    if not rows:
        raise ValueError("CSV has a header but no data rows")
    return IncompleteDataset.from_values(np.asarray(rows, dtype=float)), header


def format_cell(v: float) -> str:
    if np.isnan(v):
        return "NA"
    return format(float(v), ".17g")


def write_data_csv(path, values: np.ndarray, names: Sequence[str] | None = None) -> None:
    values = np.asarray(values, dtype=float)
    if names is None:
        names = [f"x{j + 1}" for j in range(values.shape[1])]
    lines = [",".join(names)]
    for row in values:
        lines.append(",".join(format_cell(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")
