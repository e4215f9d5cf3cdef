"""Run outputs: results CSV, SVG scatter plots, contact sheet, log.

Plots are hand-written SVG so that identical inputs give identical bytes
(no renderer state, no timestamps) and tests can assert on file content.
Timestamps appear only in the log. All file outputs are written to a
temporary name and renamed into place.
"""

from __future__ import annotations

import csv
import logging
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .betest import BEReport
from .clustering import ClusterModel
from .embedding import Embedding2D
from .ingest import FeatureMatrix, PatientRecord
from .partitioning import TEST, TRAIN, FoldAssignment, PartitionAssignment
from .util import CohortSplitError, derive_seed

logger = logging.getLogger(__name__)

#: deterministic group palette, cycled when k exceeds it
PALETTE = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
    "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#aec7e8", "#ffbb78",
]

_WIDTH = 760
_HEIGHT = 560
_MARGIN = 56
_LEGEND_CAP = 16


@dataclass(frozen=True)
class RunOutputs:
    results_csv_path: str
    embedding_plot_path: str
    assignment_plot_path: str
    log_path: str
    contact_sheet_path: str | None = None
    be_report_path: str | None = None

    def all_paths(self) -> list[str]:
        paths = [
            self.results_csv_path,
            self.embedding_plot_path,
            self.assignment_plot_path,
            self.log_path,
        ]
        if self.contact_sheet_path:
            paths.append(self.contact_sheet_path)
        if self.be_report_path:
            paths.append(self.be_report_path)
        return paths


def group_color(group: int) -> str:
    return PALETTE[group % len(PALETTE)]


def _atomic_write(path: str, content: str) -> str:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(content)
    os.replace(tmp, path)
    return path


def _fmt(value: float) -> str:
    return format(float(value), ".6g")


def _check_alignment(
    records: list[PatientRecord],
    embedding: Embedding2D,
    clusters: ClusterModel,
    assignment: PartitionAssignment | FoldAssignment,
) -> None:
    pids = [r.patient_id for r in records]
    if embedding.patient_ids is None:
        raise CohortSplitError("embedding carries no patient ids")
    if list(embedding.patient_ids) != pids:
        raise CohortSplitError("records and embedding are not aligned on patient_ids")
    if clusters.assignments.shape[0] != len(pids):
        raise CohortSplitError("cluster assignments do not match the cohort size")
    mapping = assignment.fold_of if isinstance(assignment, FoldAssignment) else assignment.assignment
    missing = [p for p in pids if p not in mapping]
    if missing:
        raise CohortSplitError(f"patients without assignment: {missing[:5]}")


def _assignment_code(assignment, pid: str) -> int:
    if isinstance(assignment, FoldAssignment):
        return assignment.fold_of[pid]
    return 1 if assignment.assignment[pid] == TEST else 0


def write_results_csv(
    records: list[PatientRecord],
    feature_names: list[str],
    scaled: FeatureMatrix,
    embedding: Embedding2D,
    clusters: ClusterModel,
    assignment: PartitionAssignment | FoldAssignment,
    path: str,
    per_image: bool = False,
) -> str:
    """The machine-readable result: one row per patient (or per image).

    Columns: patient_id, image_ids, then for every metric its raw and
    standardized value, then embed_x, embed_y, groupid, and testind
    (0=train / 1=test, or the fold index). Decimals use 6 significant
    digits; row order is input order, so reruns are byte-identical.
    """
    _check_alignment(records, embedding, clusters, assignment)
    if list(scaled.patient_ids) != [r.patient_id for r in records]:
        raise CohortSplitError("records and scaled matrix are not aligned on patient_ids")

    header = ["patient_id", "image_ids"]
    for name in feature_names:
        header += [name, f"{name}_scaled"]
    header += ["embed_x", "embed_y", "groupid", "testind"]

    lines: list[list[str]] = [header]
    for i, rec in enumerate(records):
        values: list[str] = []
        for j in range(len(feature_names)):
            values += [_fmt(rec.features[j]), _fmt(scaled.values[i, j])]
        tail = [
            _fmt(embedding.coords[i, 0]),
            _fmt(embedding.coords[i, 1]),
            str(int(clusters.assignments[i])),
            str(_assignment_code(assignment, rec.patient_id)),
        ]
        if per_image:
            for img in rec.image_ids:
                lines.append([rec.patient_id, img] + values + tail)
        else:
            lines.append([rec.patient_id, "|".join(rec.image_ids)] + values + tail)

    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(lines)
    logger.info("results csv: %d rows -> %s", len(lines) - 1, path)
    return _atomic_write(path, buf.getvalue())


def _svg_frame(coords: np.ndarray):
    """Scale data coords into the plot viewport; returns (fx, fy, frame svg)."""
    xmin, ymin = coords.min(axis=0)
    xmax, ymax = coords.max(axis=0)
    spanx = (xmax - xmin) or 1.0
    spany = (ymax - ymin) or 1.0
    inner_w = _WIDTH - 2 * _MARGIN
    inner_h = _HEIGHT - 2 * _MARGIN

    def fx(x: float) -> float:
        return _MARGIN + (x - xmin) / spanx * inner_w

    def fy(y: float) -> float:
        return _HEIGHT - _MARGIN - (y - ymin) / spany * inner_h

    frame = [
        f'<rect x="0" y="0" width="{_WIDTH}" height="{_HEIGHT}" fill="#ffffff"/>',
        f'<line x1="{_MARGIN}" y1="{_HEIGHT - _MARGIN}" x2="{_WIDTH - _MARGIN}" '
        f'y2="{_HEIGHT - _MARGIN}" stroke="#333333" stroke-width="1"/>',
        f'<line x1="{_MARGIN}" y1="{_MARGIN}" x2="{_MARGIN}" '
        f'y2="{_HEIGHT - _MARGIN}" stroke="#333333" stroke-width="1"/>',
        f'<text x="{_WIDTH / 2:.2f}" y="{_HEIGHT - 14}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">embedding dimension 1</text>',
        f'<text x="18" y="{_HEIGHT / 2:.2f}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="14" transform="rotate(-90 18 {_HEIGHT / 2:.2f})">embedding dimension 2</text>',
    ]
    return fx, fy, frame


def _svg_legend(entries: list[tuple[str, str, str]]) -> list[str]:
    """entries: (shape, color, text); shape in {circle, triangle}."""
    parts = []
    x = _WIDTH - _MARGIN - 150
    y = _MARGIN + 6
    shown = entries[:_LEGEND_CAP]
    for i, (shape, color, text) in enumerate(shown):
        cy = y + i * 18
        if shape == "triangle":
            parts.append(
                f'<polygon points="{x - 5},{cy - 4} {x + 5},{cy - 4} {x},{cy + 5}" fill="{color}"/>'
            )
        else:
            parts.append(f'<circle cx="{x}" cy="{cy}" r="5" fill="{color}"/>')
        parts.append(
            f'<text x="{x + 12}" y="{cy + 4}" font-family="sans-serif" font-size="12">{text}</text>'
        )
    if len(entries) > _LEGEND_CAP:
        parts.append(
            f'<text x="{x + 12}" y="{y + _LEGEND_CAP * 18 + 4}" font-family="sans-serif" '
            f'font-size="12">+{len(entries) - _LEGEND_CAP} more groups</text>'
        )
    return parts


def _svg_document(body: list[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
        f'viewBox="0 0 {_WIDTH} {_HEIGHT}">'
    )
    return "\n".join([head] + body + ["</svg>"]) + "\n"


def render_embedding_plot(embedding: Embedding2D, clusters: ClusterModel, path: str) -> str:
    """Scatter of the 2D embedding, one marker per patient, colored by group."""
    coords = embedding.coords
    if coords.shape[0] != clusters.assignments.shape[0]:
        raise CohortSplitError("embedding and clusters disagree on cohort size")
    fx, fy, body = _svg_frame(coords)
    for i in range(coords.shape[0]):
        g = int(clusters.assignments[i])
        body.append(
            f'<circle class="marker" cx="{fx(coords[i, 0]):.2f}" cy="{fy(coords[i, 1]):.2f}" '
            f'r="4" fill="{group_color(g)}" fill-opacity="0.85"/>'
        )
    sizes = clusters.group_sizes()
    legend = [
        ("circle", group_color(g), f"group {g} (n={int(sizes[g])})") for g in range(clusters.k)
    ]
    body += _svg_legend(legend)
    logger.info("embedding plot -> %s", path)
    return _atomic_write(path, _svg_document(body))


def render_assignment_plot(
    embedding: Embedding2D,
    clusters: ClusterModel,
    assignment: PartitionAssignment | FoldAssignment,
    path: str,
) -> str:
    """Embedding scatter with marker shape encoding the assignment:
    triangle-down for training patients, circle for testing. For fold
    assignments the fold index is drawn beside each marker instead."""
    coords = embedding.coords
    if embedding.patient_ids is None:
        raise CohortSplitError("embedding carries no patient ids")
    fx, fy, body = _svg_frame(coords)
    folds = isinstance(assignment, FoldAssignment)
    for i, pid in enumerate(embedding.patient_ids):
        g = int(clusters.assignments[i])
        color = group_color(g)
        x, y = fx(coords[i, 0]), fy(coords[i, 1])
        if folds:
            fold = assignment.fold_of[pid]
            body.append(
                f'<circle class="marker fold{fold}" cx="{x:.2f}" cy="{y:.2f}" r="4" '
                f'fill="{color}" fill-opacity="0.85"/>'
            )
            body.append(
                f'<text x="{x + 5:.2f}" y="{y + 4:.2f}" font-family="sans-serif" '
                f'font-size="8" fill="#333333">{fold}</text>'
            )
        elif assignment.assignment[pid] == TRAIN:
            body.append(
                f'<polygon class="marker train" points="{x - 4.5:.2f},{y - 3.5:.2f} '
                f'{x + 4.5:.2f},{y - 3.5:.2f} {x:.2f},{y + 5:.2f}" '
                f'fill="{color}" fill-opacity="0.85"/>'
            )
        else:
            body.append(
                f'<circle class="marker test" cx="{x:.2f}" cy="{y:.2f}" r="4" '
                f'fill="{color}" fill-opacity="0.85"/>'
            )
    if folds:
        legend = [("circle", "#333333", f"digit = fold index (of {assignment.n_folds})")]
    else:
        legend = [
            ("triangle", "#333333", "training patient"),
            ("circle", "#333333", "testing patient"),
        ]
    legend += [("circle", group_color(g), f"group {g}") for g in range(clusters.k)]
    body += _svg_legend(legend)
    logger.info("assignment plot -> %s", path)
    return _atomic_write(path, _svg_document(body))


def render_contact_sheet(
    records: list[PatientRecord],
    clusters: ClusterModel,
    path: str,
    max_per_group: int = 8,
    seed: int = 0,
) -> str:
    """One row of representative member thumbnails per group.

    Thumbnails are referenced by path (relative to the sheet when given as
    absolute paths) and never decoded; members without a thumbnail get a
    labeled placeholder. Up to max_per_group members are drawn per group by
    seeded sampling without replacement.
    """
    if len(records) != clusters.assignments.shape[0]:
        raise CohortSplitError("records and clusters disagree on cohort size")
    sheet_dir = os.path.dirname(os.path.abspath(path))

    def ref(thumb: str) -> str:
        if os.path.isabs(thumb):
            try:
                return os.path.relpath(thumb, sheet_dir)
            except ValueError:
                return thumb
        return thumb

    parts = [
        "<!DOCTYPE html>",
        '<html><head><meta charset="utf-8"><title>Batch-effect group contact sheet</title>',
        "<style>",
        "body{font-family:sans-serif;margin:24px;}",
        ".strip{display:flex;gap:8px;margin-bottom:20px;flex-wrap:wrap;}",
        "figure{margin:0;text-align:center;font-size:11px;}",
        "img,.placeholder{width:128px;height:128px;object-fit:cover;"
        "border:1px solid #999;}",
        ".placeholder{display:flex;align-items:center;justify-content:center;"
        "background:#eee;color:#666;}",
        "h2{border-left:12px solid;padding-left:8px;}",
        "</style></head><body>",
        "<h1>Batch-effect group contact sheet</h1>",
    ]
    for g in range(clusters.k):
        members = [r for r, a in zip(records, clusters.assignments) if int(a) == g]
        chosen = members
        if len(members) > max_per_group:
            rng = np.random.default_rng(derive_seed(seed, g))
            keep = sorted(rng.choice(len(members), size=max_per_group, replace=False))
            chosen = [members[i] for i in keep]
        parts.append(
            f'<h2 style="border-color:{group_color(g)}">Group {g} '
            f"({len(members)} patients)</h2>"
        )
        parts.append('<div class="strip">')
        for rec in chosen:
            if rec.thumbnail_path:
                parts.append(
                    f'<figure><img src="{ref(rec.thumbnail_path)}" alt="{rec.patient_id}"/>'
                    f"<figcaption>{rec.patient_id}</figcaption></figure>"
                )
            else:
                parts.append(
                    f'<figure><div class="placeholder">no thumbnail</div>'
                    f"<figcaption>{rec.patient_id}</figcaption></figure>"
                )
        parts.append("</div>")
    parts.append("</body></html>")
    logger.info("contact sheet -> %s", path)
    return _atomic_write(path, "\n".join(parts) + "\n")


def write_be_report(report: BEReport, path: str) -> str:
    """Confounding report as tab-delimited sections."""
    lines = ["# per-metric tests"]
    lines.append("feature\ttest\tstatistic\tdf\tp_value\tadjusted_p\tdegenerate")
    for t in report.tests:
        lines.append(
            "\t".join(
                [
                    t.feature_name,
                    t.test_kind,
                    _fmt(t.statistic),
                    _fmt(t.degrees_of_freedom),
                    _fmt(t.p_value),
                    _fmt(t.adjusted_p if t.adjusted_p is not None else float("nan")),
                    str(int(t.degenerate)),
                ]
            )
        )
    perm = report.permutation
    lines += [
        "",
        "# permutation test",
        f"observed_accuracy\t{_fmt(perm.observed_accuracy)}",
        f"p_value\t{_fmt(perm.p_value)}",
        f"n_permutations\t{perm.n_permutations}",
        f"seed\t{perm.seed}",
        "",
        "# feature ranking",
        "rank\tfeature\timportance",
    ]
    for rank, (name, imp) in enumerate(report.ranking.entries, start=1):
        lines.append(f"{rank}\t{name}\t{_fmt(imp)}")
    logger.info("confounding report -> %s", path)
    return _atomic_write(path, "\n".join(lines) + "\n")


def write_log(events, path: str) -> str:
    """Write pre-collected event strings as timestamped log lines."""
    stamp = time.strftime("%Y-%m-%d %H:%M:%S")
    lines = [f"{stamp} {event}" for event in events]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))
    return path


@contextmanager
def run_log(path: str):
    """Attach a file handler to the package logger for the duration of a run.

    The log streams (so a crash leaves the error as the last line) and is
    the only output that carries timestamps.
    """
    pkg_logger = logging.getLogger("cohortsplit")
    handler = logging.FileHandler(path, mode="w", encoding="utf-8")
    handler.setFormatter(
        logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s")
    )
    old_level = pkg_logger.level
    if pkg_logger.level > logging.INFO or pkg_logger.level == logging.NOTSET:
        pkg_logger.setLevel(logging.INFO)
    pkg_logger.addHandler(handler)
    try:
        yield path
    finally:
        handler.close()
        pkg_logger.removeHandler(handler)
        pkg_logger.setLevel(old_level)
