#!/usr/bin/env python3
"""Smoke test for the specmerge_py extension module.

Build the extension first:

    cargo build --release -p specmerge-py

then run this script from anywhere:

    python3 python/smoke_test.py
"""

import math
import os
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load_module():
    candidates = [
        os.path.join(ROOT, "target", profile, name)
        for profile in ("release", "debug")
        for name in ("libspecmerge_py.so", "specmerge_py.so", "libspecmerge_py.dylib")
    ]
    built = next((p for p in candidates if os.path.exists(p)), None)
    if built is None:
        sys.exit("extension not built; run: cargo build --release -p specmerge-py")
    stage = tempfile.mkdtemp(prefix="specmerge_py_")
    shutil.copy(built, os.path.join(stage, "specmerge_py.so"))
    sys.path.insert(0, stage)
    import specmerge_py

    return specmerge_py


def approx(a, b, tol=1e-10):
    return abs(a - b) <= tol


def main():
    sm = load_module()

    # SVD factors reconstruct the input.
    a = [[1.0, 2.0, 0.5], [0.0, -1.0, 3.0], [2.0, 0.25, -0.75], [1.5, 1.0, 1.0]]
    u, sigma, vt = sm.thin_svd(a)
    assert len(sigma) == 3 and sigma == sorted(sigma, reverse=True)
    recon = sm.reconstruct(u, sigma, vt)
    err = max(
        abs(recon[i][j] - a[i][j]) for i in range(len(a)) for j in range(len(a[0]))
    )
    assert err <= 1e-10, f"svd reconstruction error {err}"
    print(f"[ok] thin_svd round trip (max abs error {err:.2e})")

    # Merging a matrix with itself is the identity.
    merged = sm.merge_matrix(a, a, c_old=30, c_new=10)
    err = max(
        abs(merged[i][j] - a[i][j]) for i in range(len(a)) for j in range(len(a[0]))
    )
    assert err <= 1e-8, f"merge idempotence error {err}"
    print(f"[ok] merge_matrix idempotence (max abs error {err:.2e})")

    # Weights, schedule, long tail, and the prior shift.
    assert sm.class_count_weights(100, 50) == (2.0 / 3.0, 1.0 / 3.0)
    props = sm.step_proportions(0.01, 10)
    assert props[0] == 1.0 and approx(props[-1], 0.01, 1e-15)
    counts = sm.allocate_classes(props, 40)
    assert sum(counts) == 40 and min(counts) >= 1
    tail = sm.longtail_counts(40, 100, 0.01)
    assert tail[0] == 100 and tail[-1] == 1
    shifted = sm.balanced_logits([0.0, 0.0], [0.75, 0.25])
    assert approx(shifted[0], math.log(0.75), 1e-15)
    print("[ok] weights, schedule, tail profile, balanced logits")

    # Weighted average accuracy: the worked two-step case.
    assert approx(sm.weighted_average_accuracy([0.9, 0.5], [3, 1]), 0.74, 1e-15)
    print("[ok] weighted average accuracy hand case")

    # A tiny end-to-end run is deterministic and structurally sound.
    overrides = dict(
        total_classes=8,
        num_steps=4,
        rho=0.1,
        class_rho=0.1,
        n_max=15,
        test_per_class=5,
        epochs=2,
    )
    first = sm.run_continual(7, **overrides)
    second = sm.run_continual(7, **overrides)
    assert first == second, "identical seeds must reproduce identical reports"
    assert len(first["step_accuracies"]) == 4
    assert first["adapter_counts"] == [1, 1, 1, 1]
    assert sum(first["step_sizes"]) == 8
    assert 0.0 <= first["a_final"] <= 1.0
    assert approx(
        first["a_bar"], sum(first["step_accuracies"]) / 4.0, 1e-12
    )
    print(f"[ok] run_continual deterministic (A_T={first['a_final']:.3f})")

    # The ablation table covers all five variants.
    table = sm.run_ablation(seed_list="1,2", **overrides)
    assert set(table) == {"base", "sm", "sm_ccw", "sm_ccw_rtm", "full"}
    for row in table.values():
        assert row["seeds"] == 2
        assert 0.0 <= row["mean_a_final"] <= 1.0
    print("[ok] run_ablation covers the five-variant ladder")

    print("smoke test passed")


if __name__ == "__main__":
    main()
