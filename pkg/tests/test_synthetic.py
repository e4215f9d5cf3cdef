import itertools

import numpy as np
import pytest
from _oracles import ari_pair_counting

from cohortsplit.betest import welch_t_test
from cohortsplit.ingest import load_metrics_table
from cohortsplit.partitioning import BEGroups, folds_worst_case, split_best_case
from cohortsplit.synthetic import (
    SyntheticCohortSpec,
    adjusted_rand_index,
    generate_synthetic_cohort,
    partition_balance_report,
    write_cohort_table,
)
from cohortsplit.util import CohortSplitError


class TestGenerator:
    def test_shape(self):
        spec = SyntheticCohortSpec(n_sites=3, patients_per_site=(30, 30, 30),
                                   n_metrics=5, site_separation=5.0, seed=1)
        records, sites = generate_synthetic_cohort(spec)
        assert len(records) == 90
        assert sorted(set(sites)) == [0, 1, 2]
        assert all(r.features.shape == (5,) for r in records)

    def test_deterministic(self):
        spec = SyntheticCohortSpec(seed=42)
        a, _ = generate_synthetic_cohort(spec)
        b, _ = generate_synthetic_cohort(spec)
        assert all(np.array_equal(x.features, y.features) for x, y in zip(a, b))
        assert [x.patient_id for x in a] == [y.patient_id for y in b]

    def test_separation_zero_sites_statistically_identical(self):
        spec = SyntheticCohortSpec(n_sites=3, patients_per_site=(40, 40, 40),
                                   n_metrics=4, site_separation=0.0, seed=7)
        records, sites = generate_synthetic_cohort(spec)
        x = np.vstack([r.features for r in records])
        sites = np.asarray(sites)
        for a, b in itertools.combinations(range(3), 2):
            for j in range(4):
                res = welch_t_test(x[sites == a, j], x[sites == b, j])
                assert res.p_value > 0.01

    def test_mean_separation_exact(self):
        spec = SyntheticCohortSpec(n_sites=4, patients_per_site=(5, 5, 5, 5),
                                   n_metrics=6, site_separation=3.5, seed=3)
        records, sites = generate_synthetic_cohort(spec)
        # empirical site means sit at least ~separation apart for large shift
        x = np.vstack([r.features for r in records])
        sites = np.asarray(sites)
        means = np.vstack([x[sites == s].mean(axis=0) for s in range(4)])
        dists = [
            np.linalg.norm(means[a] - means[b])
            for a, b in itertools.combinations(range(4), 2)
        ]
        assert min(dists) > 1.0

    def test_confounded_label_equals_site(self):
        spec = SyntheticCohortSpec(confound_label=True, seed=5)
        records, sites = generate_synthetic_cohort(spec)
        assert all(r.label == f"site{s}" for r, s in zip(records, sites))

    def test_independent_label_balanced(self):
        spec = SyntheticCohortSpec(confound_label=False, seed=6)
        records, _ = generate_synthetic_cohort(spec)
        counts = {"x": 0, "y": 0}
        for r in records:
            counts[r.label] += 1
        assert abs(counts["x"] - counts["y"]) <= 1

    def test_bad_spec_rejected(self):
        with pytest.raises(CohortSplitError):
            SyntheticCohortSpec(n_sites=2, patients_per_site=(10,))


class TestAdjustedRandIndex:
    def test_identity(self):
        assert adjusted_rand_index([0, 0, 1, 1], [0, 0, 1, 1]) == 1.0

    def test_relabeling_invariance(self):
        assert adjusted_rand_index([0, 0, 1, 1], [1, 1, 0, 0]) == 1.0

    def test_crossed_labeling_matches_pair_counting(self):
        a = [0, 0, 1, 1]
        b = [0, 1, 0, 1]
        assert adjusted_rand_index(a, b) == pytest.approx(ari_pair_counting(a, b))

    @pytest.mark.parametrize("seed", range(6))
    def test_random_labelings_match_pair_counting(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.integers(0, 4, size=25).tolist()
        b = rng.integers(0, 3, size=25).tolist()
        assert adjusted_rand_index(a, b) == pytest.approx(ari_pair_counting(a, b), abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(CohortSplitError):
            adjusted_rand_index([0, 1], [0, 1, 2])


class TestBalanceReport:
    def site_groups(self, per=30):
        spec = SyntheticCohortSpec(n_sites=3, patients_per_site=(per,) * 3,
                                   site_separation=5.0, seed=11)
        records, sites = generate_synthetic_cohort(spec)
        ids = [r.patient_id for r in records]
        groups = BEGroups.from_labels(ids, sites)
        site_of = dict(zip(ids, sites))
        return groups, ids, site_of

    def test_best_case_on_equal_sites(self):
        groups, _, site_of = self.site_groups()
        assignment = split_best_case(groups, 1 / 3, seed=0)
        report = partition_balance_report(assignment, site_of, 1 / 3)
        assert report.max_deviation <= 1 / 30 + 1e-12

    def test_worst_case_fold_holds_out_whole_site(self):
        groups, _, site_of = self.site_groups()
        folds = folds_worst_case(groups, 3)
        for fold in range(3):
            report = partition_balance_report(folds.as_split(fold), site_of, 1 / 3)
            assert max(report.per_site_test_fraction.values()) == 1.0


class TestCohortTableRoundTrip:
    def test_written_table_loads_back(self, tmp_path):
        spec = SyntheticCohortSpec(n_sites=2, patients_per_site=(4, 3),
                                   n_metrics=3, seed=9, confound_label=True)
        records, _ = generate_synthetic_cohort(spec)
        path = write_cohort_table(records, str(tmp_path / "cohort.tsv"))
        table = load_metrics_table(path)
        assert table.n_rows == 7
        assert table.column_names == ["filename", "patient", "site", "label", "m0", "m1", "m2"]
        # numeric cells round-trip through the 10-digit format
        for i, rec in enumerate(records):
            for j in range(3):
                assert table.values[i, 4 + j] == pytest.approx(rec.features[j], rel=1e-9)

    def test_comment_line_present(self, tmp_path):
        spec = SyntheticCohortSpec(n_sites=1, patients_per_site=(2,), seed=0)
        records, _ = generate_synthetic_cohort(spec)
        path = write_cohort_table(records, str(tmp_path / "c.tsv"))
        assert open(path).readline().startswith("#")
