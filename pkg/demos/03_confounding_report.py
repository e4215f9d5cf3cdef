"""Testing whether QC metrics confound a label.

Two cohorts: in the first, the label is the acquisition site and one
metric carries a strong site shift (a genuine confound); in the second,
the label is independent of every metric. The report combines per-metric
tests (Welch t / ANOVA with Benjamini-Hochberg correction), a random
forest permutation test, and a Gini-importance ranking.
"""

import numpy as np

from cohortsplit import ForestParams, LabeledCohort, be_report

METRICS = ["brightness", "contrast", "blur", "edge_density", "saturation"]


def show(title, report):
    print(f"\n=== {title} ===")
    print(f"{'metric':>14} {'test':>8} {'p':>10} {'adjusted p':>11}")
    for t in report.tests:
        print(f"{t.feature_name:>14} {t.test_kind:>8} {t.p_value:>10.3g} "
              f"{t.adjusted_p:>11.3g}")
    perm = report.permutation
    print(f"permutation test: observed accuracy {perm.observed_accuracy:.3f}, "
          f"p = {perm.p_value:.4g} ({perm.n_permutations} permutations)")
    print("ranking:", ", ".join(f"{n}={v:.2f}" for n, v in report.ranking.entries))


rng = np.random.default_rng(12)
site = np.repeat([0, 1, 2], 30)

# confounded: 'contrast' shifts by site, labels are the sites themselves
x = rng.normal(size=(90, 5))
x[:, 1] += site * 3.0
confounded = LabeledCohort(
    features=x, labels=[f"site{s}" for s in site], feature_names=METRICS
)
show("label = site, contrast confounded",
     be_report(confounded, ForestParams(seed=5), n_permutations=200))

# clean: same features, labels assigned independently
clean = LabeledCohort(
    features=rng.normal(size=(90, 5)),
    labels=(["responder", "non-responder"] * 45),
    feature_names=METRICS,
)
show("label independent of the metrics",
     be_report(clean, ForestParams(seed=5), n_permutations=200))

print("\nIn the first report the confounded metric has a tiny adjusted p and")
print("tops the ranking, and the permutation test is at its floor; in the")
print("second everything is indistinguishable from chance.")
