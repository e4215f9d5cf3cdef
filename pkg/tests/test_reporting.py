import csv
import re

import numpy as np
import pytest

from cohortsplit.clustering import ClusterModel
from cohortsplit.embedding import Embedding2D
from cohortsplit.ingest import FeatureMatrix, PatientRecord
from cohortsplit.partitioning import FoldAssignment, PartitionAssignment
from cohortsplit.reporting import (
    render_assignment_plot,
    render_contact_sheet,
    render_embedding_plot,
    write_log,
    write_results_csv,
)


@pytest.fixture
def small_run():
    """4 patients, 2 metrics, 2 groups, a fixed split."""
    rng = np.random.default_rng(0)
    raw = rng.normal(size=(4, 2))
    ids = [f"p{i}" for i in range(4)]
    records = [
        PatientRecord(patient_id=ids[i], image_ids=[f"{ids[i]}_a", f"{ids[i]}_b"],
                      features=raw[i])
        for i in range(4)
    ]
    scaled = FeatureMatrix(
        values=(raw - raw.mean(0)) / raw.std(0, ddof=1),
        patient_ids=ids,
        feature_names=["bright", "contrast"],
    )
    coords = np.array([[0.0, 0.0], [1.0, 0.5], [8.0, 8.0], [9.0, 8.5]])
    embedding = Embedding2D(coords=coords, params=None, method="pca", patient_ids=ids)
    clusters = ClusterModel(
        centroids=np.array([[0.5, 0.25], [8.5, 8.25]]),
        assignments=np.array([0, 0, 1, 1]),
        sse=1.0,
        replicate_sses=[1.0],
    )
    assignment = PartitionAssignment(
        strategy="best_case",
        assignment={"p0": "train", "p1": "test", "p2": "train", "p3": "test"},
        seed=3,
        requested_ratio=0.5,
    )
    return records, scaled, embedding, clusters, assignment


class TestResultsCsv:
    def test_shape(self, small_run, tmp_path):
        records, scaled, embedding, clusters, assignment = small_run
        path = write_results_csv(records, ["bright", "contrast"], scaled,
                                 embedding, clusters, assignment,
                                 str(tmp_path / "results.csv"))
        lines = open(path).read().splitlines()
        assert len(lines) == 5
        header = lines[0].split(",")
        assert header == [
            "patient_id", "image_ids",
            "bright", "bright_scaled", "contrast", "contrast_scaled",
            "embed_x", "embed_y", "groupid", "testind",
        ]

    def test_rerun_byte_identical(self, small_run, tmp_path):
        records, scaled, embedding, clusters, assignment = small_run
        p1 = write_results_csv(records, ["bright", "contrast"], scaled, embedding,
                               clusters, assignment, str(tmp_path / "a.csv"))
        p2 = write_results_csv(records, ["bright", "contrast"], scaled, embedding,
                               clusters, assignment, str(tmp_path / "b.csv"))
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_testind_matches_assignment(self, small_run, tmp_path):
        records, scaled, embedding, clusters, assignment = small_run
        path = write_results_csv(records, ["bright", "contrast"], scaled, embedding,
                                 clusters, assignment, str(tmp_path / "r.csv"))
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        for row in rows:
            expected = 1 if assignment.assignment[row["patient_id"]] == "test" else 0
            assert row["testind"] == str(expected)
            assert row["testind"] in {"0", "1"}

    def test_fold_index_encoding(self, small_run, tmp_path):
        records, scaled, embedding, clusters, _ = small_run
        folds = FoldAssignment(n_folds=2, fold_of={"p0": 0, "p1": 1, "p2": 0, "p3": 1})
        path = write_results_csv(records, ["bright", "contrast"], scaled, embedding,
                                 clusters, folds, str(tmp_path / "f.csv"))
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        assert [r["testind"] for r in rows] == ["0", "1", "0", "1"]

    def test_round_trip_exact(self, small_run, tmp_path):
        records, scaled, embedding, clusters, assignment = small_run
        path = write_results_csv(records, ["bright", "contrast"], scaled, embedding,
                                 clusters, assignment, str(tmp_path / "rt.csv"))
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        for i, row in enumerate(rows):
            assert row["embed_x"] == format(embedding.coords[i, 0], ".6g")
            assert row["embed_y"] == format(embedding.coords[i, 1], ".6g")
            assert int(row["groupid"]) == int(clusters.assignments[i])

    def test_per_image_expansion(self, small_run, tmp_path):
        records, scaled, embedding, clusters, assignment = small_run
        path = write_results_csv(records, ["bright", "contrast"], scaled, embedding,
                                 clusters, assignment, str(tmp_path / "img.csv"),
                                 per_image=True)
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 8
        by_patient = {}
        for row in rows:
            by_patient.setdefault(row["patient_id"], set()).add(row["testind"])
        assert all(len(v) == 1 for v in by_patient.values())

    def test_unwritable_path(self, small_run, tmp_path):
        records, scaled, embedding, clusters, assignment = small_run
        with pytest.raises(OSError):
            write_results_csv(records, ["bright", "contrast"], scaled, embedding,
                              clusters, assignment,
                              str(tmp_path / "missing_dir" / "r.csv"))


def marker_fills(svg_text):
    return [
        m.group(1)
        for m in re.finditer(r'class="marker[^"]*"[^>]*fill="(#[0-9a-f]{6})"', svg_text)
    ]


class TestPlots:
    def test_embedding_plot_color_per_group(self, small_run, tmp_path):
        _, _, embedding, clusters, _ = small_run
        path = render_embedding_plot(embedding, clusters, str(tmp_path / "e.svg"))
        text = open(path).read()
        fills = marker_fills(text)
        assert len(fills) == 4
        assert len(set(fills)) == 2

    def test_marker_count_matches_cohort(self, tmp_path):
        rng = np.random.default_rng(1)
        n = 37
        coords = rng.normal(size=(n, 2))
        ids = [f"p{i}" for i in range(n)]
        embedding = Embedding2D(coords=coords, params=None, method="pca", patient_ids=ids)
        clusters = ClusterModel(
            centroids=np.zeros((3, 2)),
            assignments=rng.integers(0, 3, size=n),
            sse=0.0,
        )
        path = render_embedding_plot(embedding, clusters, str(tmp_path / "n.svg"))
        assert len(marker_fills(open(path).read())) == n

    def test_three_groups_three_colors(self, tmp_path):
        rng = np.random.default_rng(2)
        coords = rng.normal(size=(30, 2))
        ids = [f"p{i}" for i in range(30)]
        embedding = Embedding2D(coords=coords, params=None, method="pca", patient_ids=ids)
        clusters = ClusterModel(
            centroids=np.zeros((3, 2)),
            assignments=np.repeat([0, 1, 2], 10),
            sse=0.0,
        )
        path = render_embedding_plot(embedding, clusters, str(tmp_path / "k3.svg"))
        assert len(set(marker_fills(open(path).read()))) == 3

    def test_embedding_plot_deterministic(self, small_run, tmp_path):
        _, _, embedding, clusters, _ = small_run
        a = render_embedding_plot(embedding, clusters, str(tmp_path / "a.svg"))
        b = render_embedding_plot(embedding, clusters, str(tmp_path / "b.svg"))
        assert open(a, "rb").read() == open(b, "rb").read()

    def test_assignment_plot_shapes(self, small_run, tmp_path):
        _, _, embedding, clusters, assignment = small_run
        path = render_assignment_plot(embedding, clusters, assignment,
                                      str(tmp_path / "assign.svg"))
        text = open(path).read()
        triangles = len(re.findall(r'class="marker train"', text))
        circles = len(re.findall(r'class="marker test"', text))
        assert triangles == 2
        assert circles == 2

    def test_assignment_plot_deterministic(self, small_run, tmp_path):
        _, _, embedding, clusters, assignment = small_run
        a = render_assignment_plot(embedding, clusters, assignment, str(tmp_path / "1.svg"))
        b = render_assignment_plot(embedding, clusters, assignment, str(tmp_path / "2.svg"))
        assert open(a, "rb").read() == open(b, "rb").read()


class TestContactSheet:
    def make(self, tmp_path, thumbs):
        records = [
            PatientRecord(
                patient_id=f"p{i}",
                image_ids=[f"p{i}_img"],
                features=np.zeros(1),
                thumbnail_path=(f"thumbs/p{i}.png" if thumbs else None),
            )
            for i in range(6)
        ]
        clusters = ClusterModel(
            centroids=np.zeros((3, 2)),
            assignments=np.array([0, 0, 1, 1, 2, 2]),
            sse=0.0,
        )
        return records, clusters

    def test_one_section_per_group(self, tmp_path):
        records, clusters = self.make(tmp_path, thumbs=True)
        path = render_contact_sheet(records, clusters, str(tmp_path / "sheet.html"))
        text = open(path).read()
        assert text.count("<h2") == 3
        assert text.count("<img") == 6

    def test_small_group_no_repetition(self, tmp_path):
        records, clusters = self.make(tmp_path, thumbs=True)
        path = render_contact_sheet(records, clusters, str(tmp_path / "s.html"),
                                    max_per_group=8)
        text = open(path).read()
        srcs = re.findall(r'src="([^"]+)"', text)
        assert len(srcs) == len(set(srcs))

    def test_missing_thumbnails_become_placeholders(self, tmp_path):
        records, clusters = self.make(tmp_path, thumbs=False)
        path = render_contact_sheet(records, clusters, str(tmp_path / "p.html"))
        text = open(path).read()
        assert text.count("placeholder") >= 6
        assert "<img" not in text

    def test_sampling_capped_and_seeded(self, tmp_path):
        records = [
            PatientRecord(patient_id=f"p{i}", image_ids=[f"p{i}_img"],
                          features=np.zeros(1), thumbnail_path=f"t/p{i}.png")
            for i in range(20)
        ]
        clusters = ClusterModel(
            centroids=np.zeros((1, 2)), assignments=np.zeros(20, dtype=int), sse=0.0
        )
        a = render_contact_sheet(records, clusters, str(tmp_path / "a.html"), seed=5)
        b = render_contact_sheet(records, clusters, str(tmp_path / "b.html"), seed=5)
        assert open(a).read().count("<img") == 8
        assert open(a).read() == open(b).read()


class TestWriteLog:
    def test_events_timestamped(self, tmp_path):
        path = write_log(["starting", "imputed=2", "done"], str(tmp_path / "run.log"))
        lines = open(path).read().splitlines()
        assert len(lines) == 3
        assert all(re.match(r"\d{4}-\d{2}-\d{2} \d{2}:\d{2}:\d{2} ", ln) for ln in lines)
        assert "imputed=2" in lines[1]
