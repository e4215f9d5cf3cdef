"""Confounding tests: do the QC metrics predict a label they should not?

Per-metric parametric tests (Welch t for two classes, one-way ANOVA above)
with Benjamini-Hochberg correction across metrics, plus a random-forest
permutation test whose statistic is stratified cross-validated accuracy,
and a Gini-importance ranking of the metrics.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
import scipy.special

from .forest import (
    ForestParams,
    RandomForest,
    cv_accuracy_batch,
    encode_labels,
    fit_forest,
)
from .util import CohortSplitError, derive_seed

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabeledCohort:
    """Feature matrix with one categorical label per row."""

    features: np.ndarray          # (N, D) float64
    labels: list[str]
    feature_names: list[str]

    def __post_init__(self) -> None:
        n, d = self.features.shape
        if len(self.labels) != n:
            raise CohortSplitError("labels length != number of rows")
        if len(self.feature_names) != d:
            raise CohortSplitError("feature_names length != number of columns")
        counts: dict[str, int] = {}
        for v in self.labels:
            counts[str(v)] = counts.get(str(v), 0) + 1
        if len(counts) < 2:
            raise CohortSplitError("need at least 2 distinct label values")
        small = {k: c for k, c in counts.items() if c < 2}
        if small:
            raise CohortSplitError(f"label classes with fewer than 2 members: {small}")

    @property
    def classes(self) -> list[str]:
        return sorted({str(v) for v in self.labels})


@dataclass
class TTestResult:
    feature_name: str
    statistic: float
    degrees_of_freedom: float     # Welch df, or the ANOVA denominator df
    p_value: float
    test_kind: str                # "welch_t" | "anova_f"
    adjusted_p: float | None = None
    df_between: float | None = None   # ANOVA numerator df
    degenerate: bool = False


@dataclass(frozen=True)
class PermutationTestResult:
    observed_accuracy: float
    null_accuracies: list[float]
    p_value: float
    n_permutations: int
    seed: int


@dataclass(frozen=True)
class FeatureRanking:
    """(name, importance) pairs, descending importance, names break ties."""

    entries: list[tuple[str, float]]

    def top(self) -> str:
        return self.entries[0][0]


@dataclass(frozen=True)
class BEReport:
    tests: list[TTestResult]
    permutation: PermutationTestResult
    ranking: FeatureRanking
    label_values: list[str]


def _t_sf_two_sided(t: float, df: float) -> float:
    """Two-sided tail of the t distribution via the regularized incomplete
    beta function: P(|T| >= t) = I_{df/(df+t^2)}(df/2, 1/2)."""
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return float(scipy.special.betainc(df / 2.0, 0.5, x))


def _f_sf(f: float, df1: float, df2: float) -> float:
    """Upper tail of the F distribution:
    P(F >= f) = I_{df2/(df2+df1*f)}(df2/2, df1/2)."""
    if f <= 0.0:
        return 1.0
    x = df2 / (df2 + df1 * f)
    return float(scipy.special.betainc(df2 / 2.0, df1 / 2.0, x))


def welch_t_test(x, y, feature_name: str = "") -> TTestResult:
    """Unequal-variance two-sample t test with Welch-Satterthwaite df.

    Two-sided p-value from the t CDF evaluated through the regularized
    incomplete beta function. When both samples have zero variance the test
    is degenerate: p=1 for equal means, p=0 otherwise, flagged as such.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 2 or y.size < 2:
        raise CohortSplitError("welch_t_test needs at least 2 values per sample")
    mx, my = float(x.mean()), float(y.mean())
    vx, vy = float(x.var(ddof=1)), float(y.var(ddof=1))
    nx, ny = x.size, y.size

    if vx == 0.0 and vy == 0.0:
        equal = mx == my
        return TTestResult(
            feature_name=feature_name,
            statistic=0.0 if equal else math_inf_signed(mx - my),
            degrees_of_freedom=float(nx + ny - 2),
            p_value=1.0 if equal else 0.0,
            test_kind="welch_t",
            degenerate=True,
        )

    se2 = vx / nx + vy / ny
    t = (mx - my) / np.sqrt(se2)
    df = se2 * se2 / ((vx / nx) ** 2 / (nx - 1) + (vy / ny) ** 2 / (ny - 1))
    return TTestResult(
        feature_name=feature_name,
        statistic=float(t),
        degrees_of_freedom=float(df),
        p_value=_t_sf_two_sided(float(t), float(df)),
        test_kind="welch_t",
    )


def math_inf_signed(diff: float) -> float:
    return float(np.inf) if diff > 0 else float(-np.inf)


def anova_f_test(samples, feature_name: str = "") -> TTestResult:
    """One-way ANOVA over three or more groups.

    F = between-group over within-group mean square; p from the F upper
    tail via the regularized incomplete beta function. Zero within-group
    variance is degenerate and flagged, mirroring welch_t_test.
    """
    groups = [np.asarray(g, dtype=np.float64) for g in samples]
    if len(groups) < 3:
        raise CohortSplitError("anova_f_test needs at least 3 groups")
    if any(g.size < 2 for g in groups):
        raise CohortSplitError("every group needs at least 2 values")

    n_total = sum(g.size for g in groups)
    k = len(groups)
    grand = sum(float(g.sum()) for g in groups) / n_total
    ssb = sum(g.size * (float(g.mean()) - grand) ** 2 for g in groups)
    ssw = sum(float(((g - g.mean()) ** 2).sum()) for g in groups)
    df1 = float(k - 1)
    df2 = float(n_total - k)

    if ssw == 0.0:
        degenerate_equal = ssb == 0.0
        return TTestResult(
            feature_name=feature_name,
            statistic=0.0 if degenerate_equal else float(np.inf),
            degrees_of_freedom=df2,
            p_value=1.0 if degenerate_equal else 0.0,
            test_kind="anova_f",
            df_between=df1,
            degenerate=True,
        )

    f = (ssb / df1) / (ssw / df2)
    return TTestResult(
        feature_name=feature_name,
        statistic=float(f),
        degrees_of_freedom=df2,
        p_value=_f_sf(float(f), df1, df2),
        test_kind="anova_f",
        df_between=df1,
    )


def bh_adjust(p_values) -> list[float]:
    """Benjamini-Hochberg step-up adjusted p-values, in input order."""
    p = np.asarray(list(p_values), dtype=np.float64)
    if p.size == 0:
        return []
    if np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(p)):
        raise CohortSplitError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    scaled = p[order] * m / np.arange(1, m + 1)
    adjusted = np.minimum.accumulate(scaled[::-1])[::-1]
    adjusted = np.minimum(adjusted, 1.0)
    out = np.empty(m)
    out[order] = adjusted
    return [float(v) for v in out]


def train_random_forest(cohort: LabeledCohort, params: ForestParams) -> RandomForest:
    """Fit the seeded forest on the cohort's features and labels."""
    return fit_forest(cohort.features, cohort.labels, params, cohort.feature_names)


def cv_accuracy(cohort: LabeledCohort, params: ForestParams, n_folds: int = 3) -> float:
    """Stratified n-fold cross-validated forest accuracy, mean over folds."""
    codes, classes = encode_labels(cohort.labels)
    unit_seeds = np.array(
        [[derive_seed(params.seed, 1, f) for f in range(n_folds)]], dtype=np.uint64
    )
    acc = cv_accuracy_batch(
        cohort.features,
        codes[None, :],
        len(classes),
        params,
        n_folds,
        fold_seeds=[derive_seed(params.seed, 0)],
        unit_seeds=unit_seeds,
    )
    return float(acc[0])


def permutation_test(
    cohort: LabeledCohort,
    params: ForestParams,
    n_permutations: int = 200,
    seed: int = 0,
    n_folds: int = 3,
) -> PermutationTestResult:
    """Can the forest predict the label better than chance?

    The observed statistic is cv_accuracy on the true labels; each
    permutation shuffles the labels with a derived seed and rescores. The
    p-value is (1 + #{null >= observed}) / (1 + n_permutations), so it can
    never reach zero.
    """
    if n_permutations < 1:
        raise CohortSplitError("n_permutations must be >= 1")
    observed = cv_accuracy(cohort, params, n_folds)

    codes, classes = encode_labels(cohort.labels)
    labelings = np.empty((n_permutations, codes.size), dtype=np.int64)
    fold_seeds = []
    unit_seeds = np.empty((n_permutations, n_folds), dtype=np.uint64)
    for i in range(n_permutations):
        rng = np.random.default_rng(derive_seed(seed, i, 0))
        labelings[i] = codes[rng.permutation(codes.size)]
        fold_seeds.append(derive_seed(seed, i, 1))
        for f in range(n_folds):
            unit_seeds[i, f] = derive_seed(seed, i, 2, f)

    null = cv_accuracy_batch(
        cohort.features, labelings, len(classes), params, n_folds, fold_seeds, unit_seeds
    )
    p = (1 + int(np.sum(null >= observed))) / (1 + n_permutations)
    logger.info(
        "permutation test: observed accuracy %.4f, p=%.4g (%d permutations)",
        observed, p, n_permutations,
    )
    return PermutationTestResult(
        observed_accuracy=observed,
        null_accuracies=[float(v) for v in null],
        p_value=p,
        n_permutations=n_permutations,
        seed=seed,
    )


def rank_features(model: RandomForest) -> FeatureRanking:
    """Features by mean decrease in Gini impurity, normalized to sum 1;
    all-zero importances (no splits anywhere) rank alphabetically."""
    names = model.feature_names or [f"feature_{j}" for j in range(model.n_features)]
    imp = model.importances
    total = float(imp.sum())
    norm = imp / total if total > 0 else np.zeros_like(imp)
    entries = sorted(zip(names, norm.tolist()), key=lambda e: (-e[1], e[0]))
    return FeatureRanking(entries=[(n, float(v)) for n, v in entries])


def be_report(
    cohort: LabeledCohort,
    params: ForestParams,
    n_permutations: int = 200,
    n_folds: int = 3,
    permutation_seed: int | None = None,
) -> BEReport:
    """Full confounding report for a labeled cohort.

    Welch t per metric for two classes, one-way ANOVA for more; adjusted
    p-values are Benjamini-Hochberg across metrics. The permutation test and
    the feature ranking come from the same forest configuration.
    """
    classes = cohort.classes
    by_class = {
        c: cohort.features[[str(v) == c for v in cohort.labels]] for c in classes
    }
    tests: list[TTestResult] = []
    for j, name in enumerate(cohort.feature_names):
        if len(classes) == 2:
            res = welch_t_test(by_class[classes[0]][:, j], by_class[classes[1]][:, j], name)
        else:
            res = anova_f_test([by_class[c][:, j] for c in classes], name)
        tests.append(res)
    for res, adj in zip(tests, bh_adjust([t.p_value for t in tests])):
        res.adjusted_p = adj
        logger.info(
            "%s: %s=%.4g df=%.2f p=%.4g adjusted=%.4g%s",
            res.feature_name, res.test_kind, res.statistic,
            res.degrees_of_freedom, res.p_value, adj,
            " (degenerate)" if res.degenerate else "",
        )

    perm = permutation_test(
        cohort,
        params,
        n_permutations=n_permutations,
        seed=params.seed if permutation_seed is None else permutation_seed,
        n_folds=n_folds,
    )
    model = train_random_forest(cohort, replace(params, seed=derive_seed(params.seed, 3)))
    ranking = rank_features(model)
    logger.info("feature ranking: %s", [f"{n}={v:.3f}" for n, v in ranking.entries])
    return BEReport(tests=tests, permutation=perm, ranking=ranking, label_values=classes)
