"""Best case vs average case vs worst case partitioning.

The same cohort is split three ways at a 1/3 test ratio:

  best case     each batch-effect group is sampled at the global ratio
  average case  a plain random split, groups ignored
  worst case    whole groups go to opposing cross-validation folds

The per-site test fractions show why the distinction matters: the best
case pins every site at the requested ratio, the average case drifts, and
the worst case concentrates entire sites.
"""

import numpy as np

from cohortsplit import (
    BEGroups,
    SyntheticCohortSpec,
    folds_worst_case,
    generate_synthetic_cohort,
    partition_balance_report,
    split_average_case,
    split_best_case,
)

spec = SyntheticCohortSpec(
    n_sites=3, patients_per_site=(30, 30, 30), n_metrics=5,
    site_separation=5.0, seed=20240502,
)
records, sites = generate_synthetic_cohort(spec)
ids = [r.patient_id for r in records]
groups = BEGroups.from_labels(ids, sites)   # here: groups = true sites
site_of = dict(zip(ids, sites))
RATIO = 1 / 3

print("one split, seed 0:")
bc = split_best_case(groups, RATIO, seed=0)
ac = split_average_case(ids, RATIO, seed=0)
for name, assignment in [("best case", bc), ("average case", ac)]:
    report = partition_balance_report(assignment, site_of, RATIO)
    fractions = {s: f"{f:.3f}" for s, f in sorted(report.per_site_test_fraction.items())}
    print(f"  {name:>12}: per-site test fractions {fractions}, "
          f"max deviation {report.max_deviation:.3f}")

print("\nacross 200 seeds:")
bc_devs, ac_devs = [], []
for seed in range(200):
    bc_devs.append(partition_balance_report(
        split_best_case(groups, RATIO, seed), site_of, RATIO).max_deviation)
    ac_devs.append(partition_balance_report(
        split_average_case(ids, RATIO, seed), site_of, RATIO).max_deviation)
print(f"  best case    max deviation: mean {np.mean(bc_devs):.4f}, "
      f"worst {np.max(bc_devs):.4f}")
print(f"  average case max deviation: mean {np.mean(ac_devs):.4f}, "
      f"worst {np.max(ac_devs):.4f}")
worse = sum(1 for a, b in zip(ac_devs, bc_devs) if a > b)
print(f"  average case deviates more than best case in {worse}/200 seeds")

print("\nworst case (whole groups to folds):")
folds = folds_worst_case(groups, 3)
for fold in range(3):
    report = partition_balance_report(folds.as_split(fold), site_of, RATIO)
    held = [s for s, f in report.per_site_test_fraction.items() if f == 1.0]
    print(f"  fold {fold} held out -> sites fully in test: {held}")
print("training on two sites and testing on the third is the failure mode")
print("this tool exists to avoid.")
