"""Recompute study metrics from the per-replication CSV and compare them with
the metrics CSV written by the library.

Usage: metrics_oracle.py REPLICATIONS_CSV METRICS_CSV
"""

import csv
import math
import sys
from collections import defaultdict

TOL = 1e-12


def recompute(path):
    rows = defaultdict(list)
    with open(path, newline="") as f:
        for r in csv.DictReader(f):
            if r["excluded"] == "1" or r["failed"] == "1":
                continue
            rows[(r["cell"], r["parameter"])].append(r)
    out = {}
    for key, rs in rows.items():
        n = len(rs)
        err = [float(r["mean"]) - float(r["truth"]) for r in rs]
        bias = sum(err) / n
        sd = math.sqrt(sum((e - bias) ** 2 for e in err) / (n - 1))
        cov = sum(float(r["ci_low"]) <= float(r["truth"]) <= float(r["ci_high"]) for r in rs) / n
        be = sum(float(r["ci_low"]) <= float(r["truth"]) + bias <= float(r["ci_high"]) for r in rs) / n
        out[key] = {
            "n": n,
            "bias": bias,
            "bias_mcse": sd / math.sqrt(n),
            "coverage": cov,
            "coverage_mcse": math.sqrt(cov * (1 - cov) / n),
            "be_coverage": be,
            "be_coverage_mcse": math.sqrt(be * (1 - be) / n),
        }
    return out


def main(reps_path, metrics_path):
    expected = recompute(reps_path)
    seen = 0
    worst = 0.0
    with open(metrics_path, newline="") as f:
        for r in csv.DictReader(f):
            key = (r["cell"], r["parameter"])
            if key not in expected:
                print("unexpected metrics row", key)
                return 1
            e = expected[key]
            if int(r["n"]) != e["n"]:
                print("count mismatch", key, r["n"], e["n"])
                return 1
            for field in e:
                if field == "n":
                    continue
                gap = abs(float(r[field]) - e[field])
                worst = max(worst, gap)
                if gap > TOL * max(1.0, abs(e[field])):
                    print("mismatch", key, field, r[field], e[field])
                    return 1
            seen += 1
    if seen != len(expected):
        print("metrics rows", seen, "expected", len(expected))
        return 1
    print(f"{seen} metric rows match, largest gap {worst:.2e}")
    return 0


if __name__ == "__main__":
    sys.exit(main(*sys.argv[1:3]))
