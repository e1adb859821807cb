#!/usr/bin/env python3
"""Recompute a load-test summary from the raw per-request log and compare it with
the summary the harness wrote.

usage: recompute_load_summary.py RAW_LOG.csv SUMMARY.csv
Exit status 0 when every field matches exactly, 1 otherwise.
"""
import csv
import math
import sys


def summarize(rows):
    order, groups = [], {}
    for r in rows:
        if r["label"] not in groups:
            order.append(r["label"])
            groups[r["label"]] = []
        groups[r["label"]].append(r)

    out = []
    for label in order:
        g = groups[label]
        lat = [int(r["latency_us"]) for r in g]
        starts = [int(r["start_us"]) for r in g]
        n = len(g)
        completed = sum(1 for r in g if int(r["status"]) == 200)
        mean_us = sum(lat) / n
        ss = 0.0
        for x in lat:
            d = float(x) - mean_us
            ss += d * d
        std_ms = math.sqrt(ss / (n - 1.0)) / 1000.0 if n > 1 else 0.0
        rank = max(math.ceil(0.99 * n), 1)
        p99 = sorted(lat)[rank - 1] / 1000.0
        span_s = (max(s + l for s, l in zip(starts, lat)) - min(starts)) / 1e6
        thr = completed / span_s if span_s > 0 else 0.0
        out.append([label, "%d" % n, "%d" % completed, "%d" % (n - completed)] +
                   ["%.17g" % v for v in (mean_us / 1000.0, min(lat) / 1000.0, max(lat) / 1000.0,
                                          std_ms, p99, span_s, thr)])
    return out


def main(argv):
    if len(argv) != 3:
        print(__doc__.strip(), file=sys.stderr)
        return 2
    with open(argv[1], newline="") as f:
        raw = list(csv.DictReader(f))
    with open(argv[2], newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        written = [row for row in reader if row]
    if not raw:
        print("raw log is empty", file=sys.stderr)
        return 1
    expected = summarize(raw)
    ok = expected == written
    for exp, got in zip(expected, written):
        for name, a, b in zip(header, exp, got):
            if a != b:
                print("%s %s: recomputed %s, summary has %s" % (exp[0], name, a, b))
    if len(expected) != len(written):
        print("row count: recomputed %d, summary has %d" % (len(expected), len(written)))
    print("MATCH" if ok else "MISMATCH", "(%d labels, %d samples)" % (len(expected), len(raw)))
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main(sys.argv))
