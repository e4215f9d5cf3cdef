"""Train/test splits and cross-validation folds over batch-effect groups.

All strategies operate at patient granularity: a patient (and therefore all
of their images) lands on exactly one side or fold.

  best case     every group contributes to both sides at the requested ratio
  average case  plain seeded shuffle, groups ignored
  worst case    whole groups assigned to opposite folds
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .clustering import ClusterModel
from .ingest import PatientRecord
from .util import CohortSplitError, round_half_up

logger = logging.getLogger(__name__)

TRAIN = "train"
TEST = "test"


@dataclass(frozen=True)
class BEGroups:
    """A partition of the patient set into non-empty groups."""

    group_of: dict[str, int]
    groups: list[tuple[int, list[str]]]   # (group index, members sorted by id)

    @classmethod
    def from_labels(cls, patient_ids: list[str], labels) -> "BEGroups":
        if len(patient_ids) != len(labels):
            raise CohortSplitError("patient_ids and labels length mismatch")
        group_of = {}
        members: dict[int, list[str]] = {}
        for pid, g in zip(patient_ids, labels):
            g = int(g)
            if pid in group_of:
                raise CohortSplitError(f"patient {pid} appears twice")
            group_of[pid] = g
            members.setdefault(g, []).append(pid)
        groups = [(g, sorted(members[g])) for g in sorted(members)]
        if any(not m for _, m in groups):
            raise CohortSplitError("empty group")
        return cls(group_of=group_of, groups=groups)

    @classmethod
    def from_clusters(cls, patient_ids: list[str], model: ClusterModel) -> "BEGroups":
        return cls.from_labels(patient_ids, model.assignments)

    @property
    def n_patients(self) -> int:
        return len(self.group_of)

    def sizes(self) -> list[int]:
        return [len(m) for _, m in self.groups]


@dataclass(frozen=True)
class PartitionAssignment:
    """Per-patient train/test assignment plus how it was produced."""

    strategy: str
    assignment: dict[str, str]        # patient_id -> "train" | "test"
    seed: int
    requested_ratio: float

    def side(self, which: str) -> list[str]:
        return [p for p, s in self.assignment.items() if s == which]

    @property
    def n_test(self) -> int:
        return sum(1 for s in self.assignment.values() if s == TEST)


@dataclass(frozen=True)
class FoldAssignment:
    """Per-patient cross-validation fold index."""

    n_folds: int
    fold_of: dict[str, int]

    def members(self, fold: int) -> list[str]:
        return [p for p, f in self.fold_of.items() if f == fold]

    def as_split(self, test_fold: int) -> PartitionAssignment:
        """View one fold as the test side (leave-one-fold-out)."""
        n = len(self.fold_of)
        n_test = sum(1 for f in self.fold_of.values() if f == test_fold)
        return PartitionAssignment(
            strategy=f"fold_{test_fold}_as_test",
            assignment={p: TEST if f == test_fold else TRAIN for p, f in self.fold_of.items()},
            seed=0,
            requested_ratio=n_test / n,
        )


def _global_test_count(ratio: float, n: int) -> int:
    if not 0.0 < ratio < 1.0:
        raise CohortSplitError(f"ratio must be in (0, 1), got {ratio}")
    t = round_half_up(ratio * n)
    if t <= 0 or t >= n:
        raise CohortSplitError(
            f"ratio {ratio} on {n} patients leaves an empty side (test count {t})"
        )
    return t


def split_best_case(groups: BEGroups, ratio: float, seed: int) -> PartitionAssignment:
    """Per-group stratified split at the requested test ratio.

    The global test count round(ratio * N) is fixed first; each group gets
    floor(ratio * size) test slots and the shortfall is apportioned by
    largest fractional remainder (ties toward the lower group index), so the
    global ratio is exact and no group deviates by more than 1/size. Test
    members within a group are chosen by seeded shuffle.
    """
    n = groups.n_patients
    if n < 2:
        raise CohortSplitError("need at least 2 patients to split")
    t_global = _global_test_count(ratio, n)

    sizes = groups.sizes()
    quotas = [math.floor(ratio * s) for s in sizes]
    remainders = [ratio * s - q for s, q in zip(sizes, quotas)]
    shortfall = t_global - sum(quotas)
    assert 0 <= shortfall <= len(sizes), "largest-remainder apportionment out of range"
    by_remainder = sorted(range(len(sizes)), key=lambda i: (-remainders[i], i))
    for i in by_remainder[:shortfall]:
        quotas[i] += 1

    rng = np.random.default_rng(seed)
    assignment: dict[str, str] = {}
    for (gid, members), quota in zip(groups.groups, quotas):
        if len(members) == 1 and quota in (0, 1):
            logger.warning(
                "group %d is a singleton; patient %s goes wholly to %s",
                gid, members[0], TEST if quota else TRAIN,
            )
        order = rng.permutation(len(members))
        for pos, idx in enumerate(order):
            assignment[members[idx]] = TEST if pos < quota else TRAIN
    return PartitionAssignment(
        strategy="best_case", assignment=assignment, seed=seed, requested_ratio=ratio
    )


def split_average_case(patient_ids: list[str], ratio: float, seed: int) -> PartitionAssignment:
    """Plain random split: seeded shuffle, first round(ratio * N) are test."""
    n = len(patient_ids)
    if n < 2:
        raise CohortSplitError("need at least 2 patients to split")
    if len(set(patient_ids)) != n:
        raise CohortSplitError("patient ids not unique")
    t_global = _global_test_count(ratio, n)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    assignment = {
        patient_ids[idx]: TEST if pos < t_global else TRAIN
        for pos, idx in enumerate(order)
    }
    return PartitionAssignment(
        strategy="average_case", assignment=assignment, seed=seed, requested_ratio=ratio
    )


def folds_best_case(groups: BEGroups, n_folds: int, seed: int) -> FoldAssignment:
    """Deal each group's members round-robin across folds.

    Members are seeded-shuffled and dealing starts at a seeded per-group
    offset so no fold is systematically the large one. Each fold receives
    within one member per group of every other fold.
    """
    n = groups.n_patients
    if n_folds < 2:
        raise CohortSplitError("n_folds must be >= 2")
    if n_folds > n:
        raise CohortSplitError(f"n_folds={n_folds} exceeds cohort size {n}")

    rng = np.random.default_rng(seed)
    fold_of: dict[str, int] = {}
    dealt: list[list[str]] = [[] for _ in range(n_folds)]
    for _, members in groups.groups:
        order = rng.permutation(len(members))
        offset = int(rng.integers(n_folds))
        for pos, idx in enumerate(order):
            fold = (offset + pos) % n_folds
            fold_of[members[idx]] = fold
            dealt[fold].append(members[idx])

    # seeded offsets can leave a fold empty on tiny cohorts; rebalance
    while any(not d for d in dealt):
        empty = next(f for f, d in enumerate(dealt) if not d)
        donor = max(range(n_folds), key=lambda f: (len(dealt[f]), -f))
        moved = dealt[donor].pop()
        dealt[empty].append(moved)
        fold_of[moved] = empty
        logger.warning("fold %d was empty; moved patient %s from fold %d", empty, moved, donor)
    return FoldAssignment(n_folds=n_folds, fold_of=fold_of)


def folds_average_case(patient_ids: list[str], n_folds: int, seed: int) -> FoldAssignment:
    """Random folds ignoring groups: seeded shuffle dealt round-robin."""
    n = len(patient_ids)
    if n_folds < 2:
        raise CohortSplitError("n_folds must be >= 2")
    if n_folds > n:
        raise CohortSplitError(f"n_folds={n_folds} exceeds cohort size {n}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    return FoldAssignment(
        n_folds=n_folds,
        fold_of={patient_ids[idx]: pos % n_folds for pos, idx in enumerate(order)},
    )


def folds_worst_case(groups: BEGroups, n_folds: int) -> FoldAssignment:
    """Assign each group wholesale to its own fold.

    Requires exactly n_folds groups (cluster with k = n_folds upstream); no
    group is ever split across folds, making folds maximally dissimilar.
    """
    if len(groups.groups) != n_folds:
        raise CohortSplitError(
            f"worst-case folds need exactly {n_folds} groups, got {len(groups.groups)}"
        )
    fold_of = {}
    for fold, (_, members) in enumerate(groups.groups):
        for pid in members:
            fold_of[pid] = fold
    return FoldAssignment(n_folds=n_folds, fold_of=fold_of)


@dataclass
class PartitionReport:
    """Machine-readable result of validate_partition; violations, not exceptions."""

    kind: str                              # "split" | "folds"
    n_patients: int
    counts: dict[str, int]
    violations: list[str] = field(default_factory=list)
    per_group_test_fraction: dict[int, float] | None = None
    max_group_deviation: float | None = None
    groups_split_across_folds: int | None = None

    @property
    def ok(self) -> bool:
        return not self.violations

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n_patients": self.n_patients,
            "counts": dict(self.counts),
            "violations": list(self.violations),
            "per_group_test_fraction": self.per_group_test_fraction,
            "max_group_deviation": self.max_group_deviation,
            "groups_split_across_folds": self.groups_split_across_folds,
        }


def validate_partition(
    assignment: PartitionAssignment | FoldAssignment,
    patients: list[str],
    records: list[PatientRecord] | None = None,
    groups: BEGroups | None = None,
) -> PartitionReport:
    """Check a partition for exhaustiveness, non-empty sides/folds and
    patient atomicity, and summarize per-group balance when groups are given."""
    if isinstance(assignment, FoldAssignment):
        mapping: dict[str, int | str] = dict(assignment.fold_of)
        kind = "folds"
    else:
        mapping = dict(assignment.assignment)
        kind = "split"

    violations: list[str] = []
    patient_set = set(patients)
    assigned_set = set(mapping)
    for missing in sorted(patient_set - assigned_set):
        violations.append(f"patient {missing} not assigned")
    for extra in sorted(assigned_set - patient_set):
        violations.append(f"assignment covers unknown patient {extra}")
    if len(patient_set) != len(patients):
        violations.append("duplicate patient ids in cohort")

    counts: dict[str, int] = {}
    for v in mapping.values():
        key = str(v)
        counts[key] = counts.get(key, 0) + 1

    if kind == "split":
        for side in (TRAIN, TEST):
            if counts.get(side, 0) == 0:
                violations.append(f"{side} side is empty")
        bad = set(counts) - {TRAIN, TEST}
        if bad:
            violations.append(f"unknown assignment values: {sorted(bad)}")
    else:
        n_folds = assignment.n_folds
        for f in range(n_folds):
            if counts.get(str(f), 0) == 0:
                violations.append(f"fold {f} is empty")

    if records is not None:
        seen_images: dict[str, str] = {}
        for rec in records:
            for img in rec.image_ids:
                if img in seen_images and seen_images[img] != rec.patient_id:
                    violations.append(
                        f"image {img} belongs to patients {seen_images[img]} and "
                        f"{rec.patient_id}; atomicity broken"
                    )
                seen_images[img] = rec.patient_id
            if rec.patient_id not in mapping:
                violations.append(f"patient {rec.patient_id} has images but no assignment")

    report = PartitionReport(
        kind=kind,
        n_patients=len(patient_set),
        counts=counts,
        violations=violations,
    )

    if groups is not None:
        if kind == "split":
            ratio = assignment.requested_ratio
            fractions = {}
            for gid, members in groups.groups:
                in_test = sum(1 for p in members if mapping.get(p) == TEST)
                fractions[gid] = in_test / len(members)
            report.per_group_test_fraction = fractions
            report.max_group_deviation = max(
                abs(f - ratio) for f in fractions.values()
            )
        else:
            split = 0
            for _, members in groups.groups:
                folds = {mapping.get(p) for p in members}
                if len(folds) > 1:
                    split += 1
            report.groups_split_across_folds = split
    return report
