"""Benchmark the JIT-compiled kernels against their numpy fallbacks.

Run with no arguments to measure both execution paths (each in its own
process, since the path is chosen at import time via PROVSTP_NO_NUMBA)
and print a comparison:

    python3 benchmarks/bench_kernels.py

The --mode self form runs the workloads once in the current process and
prints a single JSON document; the parent invocation aggregates two of
those.  Agreement digests are printed so a drift between the two paths
is visible right in the benchmark output.
"""

import argparse
import hashlib
import json
import os
import subprocess
import sys
import time

import numpy as np

SEED = 1234
SGNS_PAIRS = 40_000
SGNS_VOCAB = 2_000
SGNS_BUCKETS = 4_096
SGNS_DIM = 64
DBSCAN_POINTS = 600
DBSCAN_DIM = 8


def sgns_workload():
    rng = np.random.default_rng(SEED)
    rows = SGNS_VOCAB + SGNS_BUCKETS
    pairs = rng.integers(0, SGNS_VOCAB, size=(SGNS_PAIRS, 2), dtype=np.int64)
    comp_idx = np.empty(SGNS_VOCAB * 4, np.int64)
    comp_off = np.arange(0, SGNS_VOCAB * 4 + 1, 4, dtype=np.int64)
    for w in range(SGNS_VOCAB):
        comp_idx[4 * w] = w
        comp_idx[4 * w + 1: 4 * w + 4] = SGNS_VOCAB + rng.integers(
            0, SGNS_BUCKETS, size=3)
    w_in = (rng.random((rows, SGNS_DIM)) - 0.5) / SGNS_DIM
    w_out = np.zeros((rows, SGNS_DIM))
    neg_table = rng.integers(0, SGNS_VOCAB, size=100_000, dtype=np.int64)
    return pairs, comp_idx, comp_off, w_in, w_out, neg_table


def dbscan_workload():
    rng = np.random.default_rng(SEED)
    centers = rng.normal(0.0, 5.0, size=(6, DBSCAN_DIM))
    X = np.vstack([
        centers[i % 6] + rng.normal(0.0, 0.4, size=(DBSCAN_POINTS // 6, DBSCAN_DIM))
        for i in range(6)])
    return np.ascontiguousarray(X)


def run_self(repeat):
    from provstp import _kernels

    mode = "numba" if _kernels.USING_NUMBA else "numpy"
    result = {"mode": mode}

    pairs, comp_idx, comp_off, w_in, w_out, neg_table = sgns_workload()
    warm = (pairs[:64], comp_idx, comp_off, w_in.copy(), w_out.copy(),
            neg_table, 5, 0.05, 99)
    _kernels.sgns_epoch(*warm)
    best = None
    for _ in range(repeat):
        a, b = w_in.copy(), w_out.copy()
        t0 = time.perf_counter()
        state = _kernels.sgns_epoch(pairs, comp_idx, comp_off, a, b,
                                    neg_table, 5, 0.05, 99)
        dt = time.perf_counter() - t0
        best = dt if best is None else min(best, dt)
    result["sgns_seconds"] = round(best, 6)
    result["sgns_pairs_per_s"] = round(SGNS_PAIRS / best, 1)
    result["sgns_state"] = int(state)
    result["sgns_checksum"] = round(float(np.abs(a).sum() + np.abs(b).sum()), 6)

    X = dbscan_workload()
    _kernels.dbscan_labels(X[:32], 1.5, 4)
    best = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        labels = _kernels.dbscan_labels(X, 1.5, 4)
        dt = time.perf_counter() - t0
        best = dt if best is None else min(best, dt)
    result["dbscan_seconds"] = round(best, 6)
    result["dbscan_points_per_s"] = round(DBSCAN_POINTS / best, 1)
    result["dbscan_clusters"] = int(labels.max()) + 1
    result["dbscan_digest"] = hashlib.md5(
        np.ascontiguousarray(labels).tobytes()).hexdigest()

    print(json.dumps(result, sort_keys=True))
    return 0


def run_compare(repeat):
    docs = {}
    for flag in ("0", "1"):
        env = dict(os.environ, PROVSTP_NO_NUMBA=flag)
        out = subprocess.run(
            [sys.executable, os.path.abspath(__file__),
             "--mode", "self", "--repeat", str(repeat)],
            capture_output=True, text=True, env=env, check=True)
        doc = json.loads(out.stdout.strip().splitlines()[-1])
        docs[doc["mode"]] = doc
    if "numba" not in docs:
        print("numba unavailable; fallback path only:", file=sys.stderr)
        print(json.dumps(docs, sort_keys=True, indent=2))
        return 0
    nb, py = docs["numba"], docs["numpy"]
    summary = {
        "numba": nb,
        "numpy": py,
        "sgns_speedup": round(py["sgns_seconds"] / nb["sgns_seconds"], 2),
        "dbscan_speedup": round(py["dbscan_seconds"] / nb["dbscan_seconds"], 2),
        "sgns_state_agree": nb["sgns_state"] == py["sgns_state"],
        "sgns_checksum_close": abs(nb["sgns_checksum"] - py["sgns_checksum"])
        <= 1e-3 * max(1.0, abs(nb["sgns_checksum"])),
        "dbscan_labels_agree": nb["dbscan_digest"] == py["dbscan_digest"],
    }
    print(json.dumps(summary, sort_keys=True, indent=2))
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--mode", choices=("compare", "self"), default="compare")
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    if args.mode == "self":
        return run_self(args.repeat)
    return run_compare(args.repeat)


if __name__ == "__main__":
    sys.exit(main())
