import numpy as np
import pytest

from cohortsplit.ingest import FeatureMatrix, PatientRecord, standardize_features
from cohortsplit.synthetic import SyntheticCohortSpec, generate_synthetic_cohort

# one (criterion number, description, passed) entry per acceptance criterion,
# printed in the terminal summary so every run shows a pass/fail line each
ACCEPTANCE_RESULTS: list[tuple[int, str, bool]] = []


def record_criterion(number: int, description: str, passed: bool) -> None:
    ACCEPTANCE_RESULTS.append((number, description, passed))
    assert passed, f"acceptance criterion {number} failed: {description}"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, description, passed in sorted(ACCEPTANCE_RESULTS):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[criterion {number:2d}] {status} - {description}")


@pytest.fixture(scope="session")
def three_site_cohort():
    """3 sites x 30 patients, 5 metrics, separation 5 sd, pinned seed."""
    spec = SyntheticCohortSpec(
        n_sites=3,
        patients_per_site=(30, 30, 30),
        n_metrics=5,
        site_separation=5.0,
        seed=20240502,
    )
    records, sites = generate_synthetic_cohort(spec)
    return records, sites


@pytest.fixture(scope="session")
def standardized_three_site(three_site_cohort):
    records, sites = three_site_cohort
    matrix, _, _ = standardize_features(records, [f"m{j}" for j in range(5)])
    return matrix, sites


def make_records(features: np.ndarray, prefix: str = "p", **kwargs) -> list[PatientRecord]:
    return [
        PatientRecord(
            patient_id=f"{prefix}{i:03d}",
            image_ids=[f"{prefix}{i:03d}_img"],
            features=np.asarray(row, dtype=np.float64),
            **kwargs,
        )
        for i, row in enumerate(features)
    ]


def matrix_of(records) -> FeatureMatrix:
    matrix, _, _ = standardize_features(records)
    return matrix
