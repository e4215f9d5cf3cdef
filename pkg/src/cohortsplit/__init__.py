"""cohortsplit: batch-effect aware cohort partitioning for tabular QC metrics.

Detects batch-effect groups in per-image quality metrics (2D embedding plus
replicated k-means at patient level), builds best/average/worst-case
train-test splits and cross-validation folds that never split a patient,
and tests whether the metrics confound a label of interest.
"""

from .betest import (
    BEReport,
    FeatureRanking,
    LabeledCohort,
    PermutationTestResult,
    TTestResult,
    anova_f_test,
    be_report,
    bh_adjust,
    cv_accuracy,
    permutation_test,
    rank_features,
    train_random_forest,
    welch_t_test,
)
from .clustering import (
    ClusterModel,
    ClusterParams,
    default_cluster_count,
    kmeans_once,
    kmeans_replicated,
)
from .embedding import (
    EmbedParams,
    Embedding2D,
    NeighborGraph,
    build_knn_graph,
    embed,
    fuzzify,
    optimize_embedding,
    pca_project,
)
from .forest import ForestParams, RandomForest, gini_impurity
from .ingest import (
    CohortConfig,
    FeatureMatrix,
    MetricTable,
    PatientRecord,
    aggregate_to_patients,
    impute_missing,
    load_metrics_table,
    select_feature_columns,
    standardize_features,
)
from .partitioning import (
    BEGroups,
    FoldAssignment,
    PartitionAssignment,
    PartitionReport,
    folds_average_case,
    folds_best_case,
    folds_worst_case,
    split_average_case,
    split_best_case,
    validate_partition,
)
from .reporting import (
    RunOutputs,
    render_assignment_plot,
    render_contact_sheet,
    render_embedding_plot,
    write_be_report,
    write_log,
    write_results_csv,
)
from .synthetic import (
    BalanceReport,
    SyntheticCohortSpec,
    adjusted_rand_index,
    generate_synthetic_cohort,
    partition_balance_report,
    write_cohort_table,
)
from .util import CohortSplitError, derive_seed

__version__ = "0.1.0"

__all__ = [
    "BEGroups",
    "BEReport",
    "BalanceReport",
    "ClusterModel",
    "ClusterParams",
    "CohortConfig",
    "CohortSplitError",
    "EmbedParams",
    "Embedding2D",
    "FeatureMatrix",
    "FeatureRanking",
    "FoldAssignment",
    "ForestParams",
    "LabeledCohort",
    "MetricTable",
    "NeighborGraph",
    "PartitionAssignment",
    "PartitionReport",
    "PatientRecord",
    "PermutationTestResult",
    "RandomForest",
    "RunOutputs",
    "SyntheticCohortSpec",
    "TTestResult",
    "adjusted_rand_index",
    "aggregate_to_patients",
    "anova_f_test",
    "be_report",
    "bh_adjust",
    "build_knn_graph",
    "cv_accuracy",
    "default_cluster_count",
    "derive_seed",
    "embed",
    "folds_average_case",
    "folds_best_case",
    "folds_worst_case",
    "fuzzify",
    "generate_synthetic_cohort",
    "gini_impurity",
    "impute_missing",
    "kmeans_once",
    "kmeans_replicated",
    "load_metrics_table",
    "optimize_embedding",
    "partition_balance_report",
    "pca_project",
    "permutation_test",
    "rank_features",
    "render_assignment_plot",
    "render_contact_sheet",
    "render_embedding_plot",
    "select_feature_columns",
    "split_average_case",
    "split_best_case",
    "standardize_features",
    "train_random_forest",
    "validate_partition",
    "welch_t_test",
    "write_be_report",
    "write_cohort_table",
    "write_log",
    "write_results_csv",
]
