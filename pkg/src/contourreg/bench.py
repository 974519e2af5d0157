"""Wall-clock comparison of the naive and separable max filters."""

from __future__ import annotations

import csv
import io
import statistics
import time

import numpy as np

from .morphology import maxpool_naive, maxpool_separable

IMPLS = {"naive": maxpool_naive, "separable": maxpool_separable}
CSV_HEADER = ("impl", "d", "dims", "median_ns")


def benchmark_maxpool(dims=(64, 64, 64), d_list=(0, 1, 2, 3), reps=5, seed=0) -> list[dict]:
    """Median wall time per (implementation, radius) over ``reps`` runs."""
    nx, ny, nz = dims
    vol = np.random.default_rng(seed).random((nz, ny, nx), dtype=np.float32)
    # compile the separable kernel outside the timed region
    maxpool_separable(vol[:2, :2, :2], 1)
    rows = []
    for d in d_list:
        for name, fn in IMPLS.items():
            times = []
            for _ in range(reps):
                start = time.perf_counter_ns()
                fn(vol, d)
                times.append(time.perf_counter_ns() - start)
            rows.append(
                {
                    "impl": name,
                    "d": int(d),
                    "dims": "x".join(str(n) for n in dims),
                    "median_ns": int(statistics.median(times)),
                }
            )
    return rows


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_HEADER, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()
