"""Compare the compiled scoring kernel against the numpy fallback.

Times the batch scoring call (cosine similarities, class and joint
hierarchy softmaxes, pooling, reweighting, combination) on synthetic
workloads shaped like real pseudo-labeling batches and prints one row per
configuration. Run from the repository root:

    python3 benchmarks/bench_backends.py [--repeats 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from hccal import _kernels


def unit_rows(rng, shape):
    x = rng.normal(size=shape)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def build_problem(rng, n_regions, n_classes, k_sup, k_sub, dim):
    return dict(
        regions=unit_rows(rng, (n_regions, dim)),
        class_texts=unit_rows(rng, (n_classes, dim)),
        sub_texts=unit_rows(rng, (n_classes * k_sub, dim)),
        sub_offsets=np.arange(0, n_classes * k_sub + 1, k_sub, dtype=np.int64),
        sup_texts=unit_rows(rng, (n_classes * k_sup, dim)),
        sup_offsets=np.arange(0, n_classes * k_sup + 1, k_sup, dtype=np.int64),
        class_temp=1.0,
        hier_temp=0.8,
    )


def best_time(kernel, problem, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        kernel.batch_scores(**problem)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    configs = [
        # (regions, classes, k_sup, k_sub, dim) ~ small desk runs up to
        # detection-sized vocabularies with CLIP-sized embeddings.
        (200, 4, 2, 3, 16),
        (1000, 17, 10, 30, 512),
        (5000, 17, 10, 30, 512),
        (2000, 60, 5, 10, 512),
    ]
    backends = list(_kernels.available_backends())
    if "compiled" not in backends:
        print("note: compiled extension not built; timing the numpy fallback only")

    header = f"{'regions':>8} {'classes':>8} {'entries':>8} {'dim':>5}"
    for name in backends:
        header += f" {name + ' (s)':>14}"
    if len(backends) == 2:
        header += f" {'speedup':>9}"
    print(header)
    for n_regions, n_classes, k_sup, k_sub, dim in configs:
        problem = build_problem(rng, n_regions, n_classes, k_sup, k_sub, dim)
        times = {}
        for name in backends:
            times[name] = best_time(_kernels.get_backend(name), problem, args.repeats)
        entries = n_classes * (k_sup + k_sub)
        row = f"{n_regions:>8} {n_classes:>8} {entries:>8} {dim:>5}"
        for name in backends:
            row += f" {times[name]:>14.4f}"
        if len(backends) == 2:
            row += f" {times['python'] / times['compiled']:>8.1f}x"
        print(row)


if __name__ == "__main__":
    main()
