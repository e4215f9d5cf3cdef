"""The command-line pipeline, end to end.

Generates a cohort table with the synth subcommand, runs a best-case
partition at a 25% test ratio with the confounding report enabled, and
walks through the files the run produces. Everything here can equally be
done from a shell; the CLI entry point is `cohortsplit`.
"""

import os

from cohortsplit.cli import main

OUT = os.path.join(os.path.dirname(__file__), "output", "cli_run")
TABLE = os.path.join(os.path.dirname(__file__), "output", "cohort.tsv")
os.makedirs(os.path.dirname(TABLE), exist_ok=True)

print("$ cohortsplit synth --sites 3 --patients-per-site 30 --metrics 5 \\")
print("      --separation 5 --confound-label --seed 20240502 --output cohort.tsv")
code = main(["synth", "--sites", "3", "--patients-per-site", "30",
             "--metrics", "5", "--separation", "5", "--confound-label",
             "--seed", "20240502", "--output", TABLE])
assert code == 0

print("\n$ cohortsplit partition --input cohort.tsv --patient-id column=patient \\")
print("      --site-column site --label-column label --testpercent 0.25 \\")
print("      --permutations 100 --seed 7 --outdir run/")
code = main(["partition", "--input", TABLE, "--patient-id", "column=patient",
             "--site-column", "site", "--label-column", "label",
             "--testpercent", "0.25", "--permutations", "100",
             "--seed", "7", "--outdir", OUT])
print(f"exit code: {code}")

print("\nrun outputs:")
for name in sorted(os.listdir(OUT)):
    size = os.path.getsize(os.path.join(OUT, name))
    print(f"  {name:<20} {size:>8} bytes")

print("\nresults.csv, first three lines:")
with open(os.path.join(OUT, "results.csv")) as fh:
    for _ in range(3):
        print("  " + fh.readline().rstrip()[:100] + " ...")

print("\nlast log lines:")
with open(os.path.join(OUT, "run.log")) as fh:
    for line in fh.read().splitlines()[-3:]:
        print("  " + line[:110])
