"""Loading and preparation of QC-metric tables.

Reads delimited text files as produced by upstream image QC tools (one row
per image, '#'-prefixed metadata lines, header on the first data line),
collapses image rows to per-patient feature vectors, and standardizes the
result for embedding.
"""

from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .util import CohortSplitError

logger = logging.getLogger(__name__)

#: tokens treated as missing regardless of numeric parsability
_MISSING_TOKENS = {"", "na", "nan", "none", "null"}


@dataclass(frozen=True)
class MetricTable:
    """A parsed metrics file: raw text cells plus their numeric interpretation.

    ``values[i, j]`` is NaN wherever cell (i, j) does not parse as a finite
    number; the raw text is kept in ``text`` so that id/label/site/thumbnail
    columns survive.
    """

    column_names: list[str]
    image_ids: list[str]
    values: np.ndarray          # (n_rows, n_cols) float64, NaN = missing
    text: list[list[str]]       # raw cells, same shape
    delimiter: str
    source_path: str

    def __post_init__(self) -> None:
        for row in self.text:
            if len(row) != len(self.column_names):
                raise CohortSplitError(
                    f"{self.source_path}: row width {len(row)} != header width "
                    f"{len(self.column_names)}"
                )
        if len(set(self.image_ids)) != len(self.image_ids):
            dupes = sorted({i for i in self.image_ids if self.image_ids.count(i) > 1})
            raise CohortSplitError(f"duplicate image ids: {dupes[:5]}")

    @property
    def n_rows(self) -> int:
        return len(self.image_ids)

    def column_index(self, name: str) -> int:
        try:
            return self.column_names.index(name)
        except ValueError:
            raise CohortSplitError(f"no column named {name!r} in {self.source_path}") from None


@dataclass(frozen=True)
class PatientRecord:
    """One patient: member images and the aggregated metric vector."""

    patient_id: str
    image_ids: list[str]
    features: np.ndarray        # (n_metrics,) float64, NaN until imputation
    thumbnail_path: str | None = None
    label: str | None = None
    site: str | None = None

    def __post_init__(self) -> None:
        if not self.patient_id:
            raise CohortSplitError("empty patient_id")
        if not self.image_ids:
            raise CohortSplitError(f"patient {self.patient_id}: no member images")


@dataclass(frozen=True)
class FeatureMatrix:
    """Standardized per-patient features, one row per patient."""

    values: np.ndarray          # (n_patients, n_metrics) float64
    patient_ids: list[str]
    feature_names: list[str] | None = None

    def __post_init__(self) -> None:
        if self.values.ndim != 2:
            raise CohortSplitError("feature matrix must be 2-dimensional")
        if self.values.shape[0] != len(self.patient_ids):
            raise CohortSplitError("feature matrix rows != number of patient ids")
        if len(set(self.patient_ids)) != len(self.patient_ids):
            raise CohortSplitError("patient ids not unique")
        if not np.all(np.isfinite(self.values)):
            raise CohortSplitError("feature matrix contains non-finite values")


@dataclass(frozen=True)
class CohortConfig:
    """User-facing knobs for one run. Validated on construction."""

    test_ratio: float = 0.2
    n_clusters: int | None = None
    seed: int = 42
    included_columns: list[str] | None = None
    excluded_columns: list[str] = field(default_factory=list)
    patient_id_rule: str = "image"      # "image" | "column=NAME" | "regex=PATTERN"
    label_column: str | None = None
    site_column: str | None = None
    thumbnail_column: str | None = None
    output_dir: str = "."

    def __post_init__(self) -> None:
        if not (0.0 < self.test_ratio < 1.0):
            raise CohortSplitError(f"test_ratio must be in (0, 1), got {self.test_ratio}")
        if self.n_clusters is not None and self.n_clusters < 1:
            raise CohortSplitError(f"n_clusters must be >= 1, got {self.n_clusters}")
        if self.included_columns is not None:
            overlap = set(self.included_columns) & set(self.excluded_columns)
            if overlap:
                raise CohortSplitError(
                    f"columns both included and excluded: {sorted(overlap)}"
                )


def _parse_cell(cell: str) -> float:
    """Numeric value of a cell, NaN for anything non-finite or non-numeric."""
    s = cell.strip()
    if s.lower() in _MISSING_TOKENS:
        return math.nan
    try:
        v = float(s)
    except ValueError:
        return math.nan
    return v if math.isfinite(v) else math.nan


def load_metrics_table(path: str, delimiter: str = "\t") -> MetricTable:
    """Parse a delimited metrics file into a MetricTable.

    Lines starting with '#' are metadata comments and skipped wherever they
    appear; the first remaining line is the header. The first column holds
    the image identifier. Cells that do not parse as finite numbers are
    stored as missing; the raw text of every cell is retained.
    """
    try:
        with open(path, newline="") as fh:
            lines = [ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    except FileNotFoundError:
        raise CohortSplitError(f"metrics file not found: {path}") from None
    if not lines:
        raise CohortSplitError(f"{path}: no header line found")

    reader = csv.reader(lines, delimiter=delimiter)
    rows = list(reader)
    header = [h.strip() for h in rows[0]]
    data = rows[1:]
    text = [[c.strip() for c in row] for row in data]
    for row in text:
        if len(row) != len(header):
            raise CohortSplitError(
                f"{path}: row width {len(row)} != header width {len(header)}"
            )
    image_ids = [row[0] for row in text]
    values = np.array(
        [[_parse_cell(c) for c in row] for row in text], dtype=np.float64
    ).reshape(len(text), len(header))
    logger.info("loaded %s: %d rows, %d columns", path, len(text), len(header))
    return MetricTable(
        column_names=header,
        image_ids=image_ids,
        values=values,
        text=text,
        delimiter=delimiter,
        source_path=str(path),
    )


def _patient_id_of(rule: str, image_id: str, row_lookup) -> str:
    """Resolve one row's patient id under the configured rule."""
    if rule == "image":
        return image_id
    if rule.startswith("column="):
        return row_lookup(rule[len("column="):])
    if rule.startswith("regex="):
        pattern = rule[len("regex="):]
        m = re.search(pattern, image_id)
        if m is None or m.lastindex is None:
            raise CohortSplitError(
                f"patient-id regex {pattern!r} did not capture a group in {image_id!r}"
            )
        return m.group(1)
    raise CohortSplitError(f"bad patient_id_rule {rule!r}")


def _metadata_columns(table: MetricTable, config: CohortConfig) -> set[str]:
    """Columns that describe rather than measure: never usable as features."""
    meta = {table.column_names[0]}
    for col in (config.label_column, config.site_column, config.thumbnail_column):
        if col:
            meta.add(col)
    if config.patient_id_rule.startswith("column="):
        meta.add(config.patient_id_rule[len("column="):])
    return meta


def select_feature_columns(table: MetricTable, config: CohortConfig) -> list[str]:
    """Choose the metric columns used downstream.

    Starts from included_columns (or every column), then drops excluded and
    metadata columns, columns with no numeric content, and columns that are
    constant once aggregated to patients. Raises when nothing survives.
    """
    if config.included_columns is not None:
        for name in config.included_columns:
            table.column_index(name)
        candidates = list(config.included_columns)
    else:
        candidates = list(table.column_names)

    dropped: list[tuple[str, str]] = []
    meta = _metadata_columns(table, config)
    kept = []
    for name in candidates:
        if name in config.excluded_columns:
            dropped.append((name, "excluded"))
        elif name in meta:
            dropped.append((name, "metadata"))
        else:
            kept.append(name)

    # non-numeric: no cell parses as a finite number
    numeric = []
    for name in kept:
        col = table.values[:, table.column_index(name)]
        if np.any(np.isfinite(col)):
            numeric.append(name)
        else:
            dropped.append((name, "non-numeric"))

    # constant after patient aggregation carries no group signal
    pids = patient_ids_for_rows(table, config.patient_id_rule)
    selected = []
    for name in numeric:
        col = table.values[:, table.column_index(name)]
        per_patient = _aggregate_column(col, pids)
        finite = per_patient[np.isfinite(per_patient)]
        if finite.size == 0 or np.max(finite) == np.min(finite):
            dropped.append((name, "constant"))
        else:
            selected.append(name)

    for name, why in dropped:
        logger.info("column %r dropped (%s)", name, why)
    logger.info("selected %d feature columns: %s", len(selected), selected)
    if not selected:
        raise CohortSplitError("no usable features after column selection")
    return selected


def patient_ids_for_rows(table: MetricTable, rule: str) -> list[str]:
    """Patient id of every row, in row order."""
    out = []
    for i, image_id in enumerate(table.image_ids):
        row = table.text[i]

        def lookup(name: str, row=row) -> str:
            return row[table.column_index(name)]

        out.append(_patient_id_of(rule, image_id, lookup))
    return out


def _aggregate_column(col: np.ndarray, pids: list[str]) -> np.ndarray:
    """Mean of non-missing values per patient, NaN when a patient has none."""
    order: dict[str, int] = {}
    for p in pids:
        order.setdefault(p, len(order))
    sums = np.zeros(len(order))
    counts = np.zeros(len(order))
    for v, p in zip(col, pids):
        if math.isfinite(v):
            j = order[p]
            sums[j] += v
            counts[j] += 1
    with np.errstate(invalid="ignore"):
        return np.where(counts > 0, sums / np.maximum(counts, 1), math.nan)


def aggregate_to_patients(
    table: MetricTable,
    cols: list[str],
    rule: str,
    *,
    label_column: str | None = None,
    site_column: str | None = None,
    thumbnail_column: str | None = None,
) -> list[PatientRecord]:
    """Collapse image rows to one record per patient.

    Each feature becomes the arithmetic mean of the patient's non-missing
    image-level values (NaN when every image is missing it; see
    impute_missing). Label, site and thumbnail are the first non-empty value
    among the patient's rows. Record order is order of first appearance.
    """
    pids = patient_ids_for_rows(table, rule)
    col_idx = [table.column_index(c) for c in cols]
    extra_idx = {
        name: table.column_index(col)
        for name, col in (
            ("label", label_column),
            ("site", site_column),
            ("thumbnail", thumbnail_column),
        )
        if col
    }

    members: dict[str, list[int]] = {}
    for i, pid in enumerate(pids):
        members.setdefault(pid, []).append(i)

    records = []
    for pid, rows in members.items():
        # canonical member order: aggregation is then exactly invariant to
        # the order rows arrived in (float sums are order-sensitive)
        rows = sorted(rows, key=lambda r: table.image_ids[r])
        feats = np.empty(len(cols))
        for j, ci in enumerate(col_idx):
            vals = [table.values[r, ci] for r in rows if math.isfinite(table.values[r, ci])]
            feats[j] = float(np.mean(vals)) if vals else math.nan

        def first_nonempty(key: str, rows=rows) -> str | None:
            if key not in extra_idx:
                return None
            for r in rows:
                cell = table.text[r][extra_idx[key]].strip()
                if cell:
                    return cell
            return None

        records.append(
            PatientRecord(
                patient_id=pid,
                image_ids=[table.image_ids[r] for r in rows],
                features=feats,
                thumbnail_path=first_nonempty("thumbnail"),
                label=first_nonempty("label"),
                site=first_nonempty("site"),
            )
        )
    logger.info("aggregated %d image rows into %d patients", table.n_rows, len(records))
    return records


def impute_missing(records: list[PatientRecord]) -> list[PatientRecord]:
    """Replace fully-missing patient features with the cohort median.

    Every patient must be assignable downstream, so records are never
    dropped. Raises when a feature is missing for the whole cohort.
    """
    if not records:
        return records
    matrix = np.vstack([r.features for r in records])
    n_imputed = 0
    for j in range(matrix.shape[1]):
        col = matrix[:, j]
        missing = ~np.isfinite(col)
        if not missing.any():
            continue
        present = col[~missing]
        if present.size == 0:
            raise CohortSplitError(f"feature column {j} is missing for every patient")
        matrix[missing, j] = float(np.median(present))
        n_imputed += int(missing.sum())
    logger.info("imputed=%d", n_imputed)
    if n_imputed == 0:
        return records
    return [replace(r, features=matrix[i].copy()) for i, r in enumerate(records)]


def standardize_features(
    records: list[PatientRecord],
    feature_names: list[str] | None = None,
) -> tuple[FeatureMatrix, np.ndarray, np.ndarray]:
    """Z-score each feature over the cohort (sample sd, n-1 denominator).

    Returns the standardized matrix plus the per-feature means and sds so
    the transform can be reported and inverted.
    """
    if len(records) < 2:
        raise CohortSplitError("standardization needs at least 2 patients")
    matrix = np.vstack([r.features for r in records]).astype(np.float64)
    if not np.all(np.isfinite(matrix)):
        raise CohortSplitError("missing values remain; run impute_missing first")
    mean = matrix.mean(axis=0)
    sd = matrix.std(axis=0, ddof=1)
    if np.any(sd == 0):
        bad = [int(j) for j in np.flatnonzero(sd == 0)]
        raise CohortSplitError(f"zero variance in feature columns {bad}")
    fm = FeatureMatrix(
        values=(matrix - mean) / sd,
        patient_ids=[r.patient_id for r in records],
        feature_names=feature_names,
    )
    return fm, mean, sd
