"""Synthetic multi-site cohorts with controllable batch-effect strength.

Desk-scale stand-in for multi-scanner image cohorts: each site gets a
Gaussian metric profile, sites are pushed apart by a configurable multiple
of the within-site spread, and the label can optionally be confounded with
the site. Also provides the partition-quality scores used by the test and
acceptance suites.
"""

from __future__ import annotations

import csv
import os
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .ingest import PatientRecord
from .partitioning import TEST, PartitionAssignment
from .util import CohortSplitError, derive_seed


@dataclass(frozen=True)
class SyntheticCohortSpec:
    n_sites: int = 3
    patients_per_site: tuple[int, ...] = (30, 30, 30)
    n_metrics: int = 5
    site_separation: float = 5.0     # inter-site mean shift in within-site sd units
    confound_label: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_sites < 1:
            raise CohortSplitError("n_sites must be >= 1")
        if len(self.patients_per_site) != self.n_sites:
            raise CohortSplitError("patients_per_site length must equal n_sites")
        if any(c < 1 for c in self.patients_per_site):
            raise CohortSplitError("every site needs at least 1 patient")
        if self.n_metrics < 1:
            raise CohortSplitError("n_metrics must be >= 1")
        if self.site_separation < 0:
            raise CohortSplitError("site_separation must be >= 0")


def generate_synthetic_cohort(spec: SyntheticCohortSpec) -> tuple[list[PatientRecord], list[int]]:
    """One record per synthetic patient, plus the ground-truth site index.

    Site mean vectors are drawn once and rescaled so the minimum pairwise
    distance equals site_separation exactly (all means coincide at
    separation 0); patients are unit-sd Gaussians around their site mean.
    Deterministic given spec.seed.
    """
    rng = np.random.default_rng(spec.seed)
    if spec.n_sites == 1:
        means = np.zeros((1, spec.n_metrics))
    else:
        while True:
            raw = rng.normal(size=(spec.n_sites, spec.n_metrics))
            diffs = raw[:, None, :] - raw[None, :, :]
            d = np.sqrt((diffs**2).sum(axis=2))
            min_dist = d[np.triu_indices(spec.n_sites, k=1)].min()
            if min_dist > 0:
                break
        means = raw * (spec.site_separation / min_dist)

    records = []
    sites = []
    for s, count in enumerate(spec.patients_per_site):
        x = rng.normal(size=(count, spec.n_metrics)) + means[s]
        for i in range(count):
            records.append(
                PatientRecord(
                    patient_id=f"s{s}_p{i:03d}",
                    image_ids=[f"s{s}_p{i:03d}_img"],
                    features=x[i],
                    site=f"site{s}",
                )
            )
            sites.append(s)

    labels = _label_assignment(spec, sites, rng)
    records = [
        PatientRecord(
            patient_id=r.patient_id,
            image_ids=r.image_ids,
            features=r.features,
            thumbnail_path=r.thumbnail_path,
            label=labels[i],
            site=r.site,
        )
        for i, r in enumerate(records)
    ]
    return records, sites


def _label_assignment(spec: SyntheticCohortSpec, sites: list[int], rng) -> list[str]:
    if spec.confound_label:
        return [f"site{s}" for s in sites]
    # balanced two-class labels, shuffled independently of site
    n = len(sites)
    pool = ["x", "y"] * (n // 2 + 1)
    labels = pool[:n]
    perm = rng.permutation(n)
    return [labels[i] for i in perm]


def write_cohort_table(records: list[PatientRecord], path: str, delimiter: str = "\t") -> str:
    """Emit records in the ingest module's delimited format (one image row
    per patient, '#' preamble, metric columns m0..)."""
    n_metrics = records[0].features.shape[0]
    header = ["filename", "patient", "site", "label"] + [f"m{j}" for j in range(n_metrics)]
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write("#dataset: synthetic cohort\n")
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        writer.writerow(header)
        for r in records:
            for img in r.image_ids:
                writer.writerow(
                    [img, r.patient_id, r.site or "", r.label or ""]
                    + [format(v, ".10g") for v in r.features]
                )
    os.replace(tmp, path)
    return path


def adjusted_rand_index(a, b) -> float:
    """Chance-corrected agreement of two labelings via pair counting.

    1 means identical partitions up to relabeling, around 0 means
    independent; can go negative for systematic disagreement.
    """
    a = list(a)
    b = list(b)
    if len(a) != len(b):
        raise CohortSplitError(f"labelings differ in length: {len(a)} vs {len(b)}")
    n = len(a)

    def comb2(x: int) -> int:
        return x * (x - 1) // 2

    contingency = Counter(zip(a, b))
    sum_ij = sum(comb2(c) for c in contingency.values())
    sum_a = sum(comb2(c) for c in Counter(a).values())
    sum_b = sum(comb2(c) for c in Counter(b).values())
    total = comb2(n)
    if total == 0:
        return 1.0
    expected = sum_a * sum_b / total
    max_index = (sum_a + sum_b) / 2
    if max_index == expected:
        return 1.0
    return (sum_ij - expected) / (max_index - expected)


@dataclass(frozen=True)
class BalanceReport:
    """Per-site test fractions of a split and the worst deviation from the
    requested ratio."""

    per_site_test_fraction: dict
    max_deviation: float


def partition_balance_report(
    assignment: PartitionAssignment,
    site_of: dict[str, object],
    ratio: float,
) -> BalanceReport:
    """How evenly a split samples each (ground-truth) site."""
    missing = set(assignment.assignment) - set(site_of)
    if missing:
        raise CohortSplitError(f"no site label for patients: {sorted(missing)[:5]}")
    totals: Counter = Counter()
    in_test: Counter = Counter()
    for pid, side in assignment.assignment.items():
        site = site_of[pid]
        totals[site] += 1
        if side == TEST:
            in_test[site] += 1
    fractions = {site: in_test[site] / totals[site] for site in totals}
    return BalanceReport(
        per_site_test_fraction=fractions,
        max_deviation=max(abs(f - ratio) for f in fractions.values()),
    )


def sample_thumbnail_paths(records: list[PatientRecord], directory: str) -> list[PatientRecord]:
    """Attach placeholder thumbnail paths under directory (for demos/tests
    of the contact sheet; no image files are created)."""
    out = []
    for r in records:
        out.append(
            PatientRecord(
                patient_id=r.patient_id,
                image_ids=r.image_ids,
                features=r.features,
                thumbnail_path=os.path.join(directory, f"{r.patient_id}.png"),
                label=r.label,
                site=r.site,
            )
        )
    return out


def cohort_seed_variant(spec: SyntheticCohortSpec, index: int) -> SyntheticCohortSpec:
    """The same cohort shape under a derived seed (for multi-seed studies)."""
    return SyntheticCohortSpec(
        n_sites=spec.n_sites,
        patients_per_site=spec.patients_per_site,
        n_metrics=spec.n_metrics,
        site_separation=spec.site_separation,
        confound_label=spec.confound_label,
        seed=derive_seed(spec.seed, index),
    )
