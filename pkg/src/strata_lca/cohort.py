"""Loading, filtering and age stratification of binary condition data.

A cohort is a flat binary matrix (one row per individual, one column per
condition) together with an integer age per row. Column order is fixed by
the :class:`ConditionCatalog` and is the only source of condition indices
used downstream.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "CohortError",
    "CohortParseError",
    "CohortValidationError",
    "ConfigurationError",
    "ConditionCatalog",
    "IndividualRecord",
    "Cohort",
    "StrataSpec",
    "Stratum",
    "load_cohort",
    "dump_cohort",
    "filter_eligible",
    "stratify",
    "condition_prevalence",
    "prevalence_table",
    "write_prevalence_csv",
    "LTC40",
]

# Short names of the forty long-term conditions, in table order.
LTC40 = (
    "HypTens", "CHD", "StrokeTIA", "CKD", "PeriVascDis", "AtrFib", "HeartFail",
    "Diabetes", "COPD", "Asthma", "Bronchiectasis", "PainCond", "Depres",
    "Anxiety", "SchizBipol", "Dementia", "Eating", "LearnDisab", "Alcohol",
    "Substance", "Thyroid", "Arthritis", "HearImpr", "VisualImpr", "Cancer",
    "Dyspepsia", "IrritBSynd", "Consti", "Diverticlr", "InflmBDis", "Sinus",
    "ViralHepat", "ChronicLiverDisease", "Prostat", "Glaucoma", "Epilepsy",
    "Migraine", "Parkinsons", "MultScleros", "PsoriaEczma",
)


class CohortError(Exception):
    """Base class for cohort problems."""


class CohortParseError(CohortError, ValueError):
    """A row of the input CSV could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CohortValidationError(CohortError, ValueError):
    pass


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class ConditionCatalog:
    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if not names:
            raise CohortValidationError("condition catalog is empty")
        if any(not n for n in names):
            raise CohortValidationError("condition names must be non-empty")
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise CohortValidationError(f"duplicate condition names: {dupes}")

    @property
    def D(self) -> int:
        return len(self.names)

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)


@dataclass(frozen=True)
class IndividualRecord:
    id: str
    age: int
    conditions: tuple[int, ...]


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Cohort:
    """Individuals as rows of a read-only ``(N, D)`` uint8 matrix.

    ``ids`` and ``ages`` are aligned with the rows of ``conditions``.
    """

    catalog: ConditionCatalog
    ids: tuple[str, ...]
    ages: np.ndarray
    conditions: np.ndarray

    def __post_init__(self):
        ids = tuple(str(i) for i in self.ids)
        ages = np.asarray(self.ages, dtype=np.int64).reshape(-1)
        conditions = np.asarray(self.conditions, dtype=np.uint8)
        if conditions.size == 0:
            conditions = conditions.reshape(len(ids), self.catalog.D)
        if conditions.ndim != 2 or conditions.shape[1] != self.catalog.D:
            raise CohortValidationError(
                f"condition matrix has shape {conditions.shape}, "
                f"expected (N, {self.catalog.D})"
            )
        if not (len(ids) == ages.shape[0] == conditions.shape[0]):
            raise CohortValidationError("ids, ages and conditions differ in length")
        if conditions.size and conditions.max() > 1:
            raise CohortValidationError("condition values must be 0 or 1")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "ages", _frozen(ages.copy()))
        object.__setattr__(self, "conditions", _frozen(conditions.copy()))

    @classmethod
    def from_records(cls, catalog: ConditionCatalog,
                     records: Iterable[IndividualRecord]) -> "Cohort":
        records = list(records)
        for r in records:
            if len(r.conditions) != catalog.D:
                raise CohortValidationError(
                    f"record {r.id!r} has {len(r.conditions)} conditions, "
                    f"expected {catalog.D}"
                )
        return cls(
            catalog,
            [r.id for r in records],
            np.array([r.age for r in records], dtype=np.int64),
            np.array([r.conditions for r in records], dtype=np.uint8).reshape(
                len(records), catalog.D),
        )

    @property
    def records(self) -> list[IndividualRecord]:
        return [
            IndividualRecord(i, int(a), tuple(int(v) for v in row))
            for i, a, row in zip(self.ids, self.ages, self.conditions)
        ]

    @property
    def D(self) -> int:
        return self.catalog.D

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, mask: np.ndarray) -> "Cohort":
        mask = np.asarray(mask)
        idx = np.flatnonzero(mask) if mask.dtype == bool else mask
        return Cohort(self.catalog, [self.ids[i] for i in idx],
                      self.ages[idx], self.conditions[idx])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Cohort):
            return NotImplemented
        return (self.catalog == other.catalog and self.ids == other.ids
                and np.array_equal(self.ages, other.ages)
                and np.array_equal(self.conditions, other.conditions))

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class StrataSpec:
    age_min: int = 40
    age_max: int = 99
    width: int = 5

    def __post_init__(self):
        if self.width < 1:
            raise ConfigurationError(f"strata width must be >= 1, got {self.width}")
        span = self.age_max - self.age_min + 1
        if span < 1:
            raise ConfigurationError(
                f"empty age range [{self.age_min}, {self.age_max}]")
        if span % self.width:
            raise ConfigurationError(
                f"age range [{self.age_min}, {self.age_max}] is not divisible "
                f"into strata of width {self.width}"
            )

    @property
    def G(self) -> int:
        return (self.age_max - self.age_min + 1) // self.width

    def age_range(self, group: int) -> tuple[int, int]:
        """Inclusive age bounds of 1-based stratum ``group``."""
        if not 1 <= group <= self.G:
            raise ConfigurationError(f"group {group} outside 1..{self.G}")
        lo = self.age_min + (group - 1) * self.width
        return lo, lo + self.width - 1

    def group_of(self, age: int) -> int:
        if not self.age_min <= age <= self.age_max:
            raise ConfigurationError(f"age {age} outside [{self.age_min}, {self.age_max}]")
        return (age - self.age_min) // self.width + 1


@dataclass(frozen=True)
class Stratum:
    group_index: int
    age_range: tuple[int, int]
    cohort: Cohort = field(repr=False)

    @property
    def data(self) -> np.ndarray:
        return self.cohort.conditions

    def __len__(self) -> int:
        return len(self.cohort)


def load_cohort(source: IO[str] | IO[bytes] | str,
                catalog: ConditionCatalog | None = None) -> Cohort:
    """Parse a cohort CSV (``id,age,<cond_1>,...,<cond_D>``).

    ``source`` may be a text or binary stream, or a path. When ``catalog``
    is given, the header's condition columns must equal it exactly.
    """
    if isinstance(source, str):
        with open(source, "rb") as fh:
            return load_cohort(fh, catalog)
    if isinstance(source, io.TextIOBase) or hasattr(source, "encoding"):
        text = source
    else:
        text = io.TextIOWrapper(source, encoding="utf-8", newline="")

    reader = csv.reader(text)
    try:
        header = next(reader)
    except StopIteration:
        raise CohortParseError("missing header", line=1) from None
    if len(header) < 3 or header[0] != "id" or header[1] != "age":
        raise CohortParseError(
            "header must start with 'id,age' followed by condition names", line=1)
    try:
        header_catalog = ConditionCatalog(tuple(header[2:]))
    except CohortValidationError as exc:
        raise CohortParseError(str(exc), line=1) from None
    if catalog is not None and header_catalog != catalog:
        raise CohortParseError("header does not match the supplied catalog", line=1)
    catalog = header_catalog

    width = catalog.D + 2
    ids: list[str] = []
    ages: list[int] = []
    rows: list[list[int]] = []
    seen: dict[str, int] = {}
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        if len(row) != width:
            raise CohortParseError(
                f"expected {width} columns, found {len(row)}", line=line)
        rid, age_text = row[0], row[1]
        if not rid:
            raise CohortParseError("empty id", line=line)
        try:
            age = int(age_text, 10)
        except ValueError:
            raise CohortParseError(f"non-integer age {age_text!r}", line=line) from None
        values = []
        for name, cell in zip(catalog.names, row[2:]):
            if cell == "1":
                values.append(1)
            elif cell == "0":
                values.append(0)
            else:
                raise CohortParseError(
                    f"non-binary value {cell!r} for condition {name}", line=line)
        if rid in seen:
            raise CohortValidationError(
                f"duplicate id {rid!r} on lines {seen[rid]} and {line}")
        seen[rid] = line
        ids.append(rid)
        ages.append(age)
        rows.append(values)

    conditions = np.array(rows, dtype=np.uint8).reshape(len(rows), catalog.D)
    return Cohort(catalog, ids, np.array(ages, dtype=np.int64), conditions)


def dump_cohort(cohort: Cohort, sink: IO[str]) -> None:
    """Write ``cohort`` in the format read by :func:`load_cohort`."""
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(["id", "age", *cohort.catalog.names])
    for rid, age, row in zip(cohort.ids, cohort.ages, cohort.conditions):
        writer.writerow([rid, int(age), *(int(v) for v in row)])


def filter_eligible(cohort: Cohort, spec: StrataSpec = StrataSpec()) -> Cohort:
    """Keep records aged within ``spec`` that have at least one condition."""
    in_range = (cohort.ages >= spec.age_min) & (cohort.ages <= spec.age_max)
    has_condition = cohort.conditions.sum(axis=1) >= 1
    keep = in_range & has_condition
    kept = int(keep.sum())
    logger.info(
        "eligibility: kept %d of %d records (%d outside ages %d-%d, %d with no condition)",
        kept, len(cohort), int((~in_range).sum()), spec.age_min, spec.age_max,
        int((in_range & ~has_condition).sum()),
    )
    return cohort.subset(keep)


def stratify(cohort: Cohort, spec: StrataSpec = StrataSpec()) -> list[Stratum]:
    if len(cohort):
        lo, hi = int(cohort.ages.min()), int(cohort.ages.max())
        if lo < spec.age_min or hi > spec.age_max:
            raise ConfigurationError(
                f"cohort has ages in [{lo}, {hi}] outside the strata range "
                f"[{spec.age_min}, {spec.age_max}]; apply filter_eligible first"
            )
    groups = (cohort.ages - spec.age_min) // spec.width + 1
    return [
        Stratum(g, spec.age_range(g), cohort.subset(groups == g))
        for g in range(1, spec.G + 1)
    ]


def condition_prevalence(data: Stratum | Cohort | np.ndarray) -> np.ndarray:
    """Fraction of records carrying each condition."""
    if isinstance(data, Stratum):
        matrix = data.data
    elif isinstance(data, Cohort):
        matrix = data.conditions
    else:
        matrix = np.asarray(data)
    if matrix.shape[0] == 0:
        raise CohortValidationError("empty stratum")
    return matrix.sum(axis=0, dtype=np.int64) / matrix.shape[0]


def prevalence_table(strata: Sequence[Stratum], catalog: ConditionCatalog
                     ) -> list[list[str]]:
    """Rows of the per-stratum prevalence table, header first.

    Columns are the condition name, one column per group and ``total`` (the
    prevalence over the union of the strata). Empty strata give blank cells.
    """
    header = ["condition", *(f"g{s.group_index}" for s in strata), "total"]
    columns = []
    for s in strata:
        columns.append(condition_prevalence(s) if len(s) else None)
    nonempty = [s.data for s in strata if len(s)]
    total = condition_prevalence(np.vstack(nonempty)) if nonempty else None
    rows = [header]
    for d, name in enumerate(catalog.names):
        cells = ["" if col is None else f"{col[d]:.6f}" for col in columns]
        cells.append("" if total is None else f"{total[d]:.6f}")
        rows.append([name, *cells])
    return rows


def write_prevalence_csv(strata: Sequence[Stratum], catalog: ConditionCatalog,
                         sink: IO[str]) -> None:
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerows(prevalence_table(strata, catalog))
