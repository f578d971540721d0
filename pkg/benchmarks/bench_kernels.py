"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both flavours live side by side in ``leo_handover.kernels`` (``*_nb`` and
``*_np``); the runtime switch ``LEO_HANDOVER_NO_NUMBA=1`` only changes which
one the package binds. JIT compilation is excluded by a warm-up call.
"""

import argparse
import timeit

import numpy as np

from leo_handover import kernels
from leo_handover._accel import HAVE_NUMBA
from leo_handover.orbits import ConstellationArrays, ConstellationSpec, generate_walker, geodetic_to_ecef


def cases(rng):
    # full-size shell and user population: 588 satellites, 80 users, 91 samples
    sats = ConstellationArrays.from_states(generate_walker(ConstellationSpec(12, 49, 1200.0, 87.9)))
    users = geodetic_to_ecef(rng.uniform(59.2, 59.7, 80), rng.uniform(17.9, 18.2, 80), rng.uniform(0, 10, 80))
    sat_ecef = sats.positions_ecef(120.0)
    dist = kernels.slant_range_np(users, sat_ecef)
    elev = kernels.elevation_matrix_np(users, sat_ecef)
    cov = elev >= 15.0
    gt = rng.uniform(14, 16, 80)
    link_args = (dist, cov, gt, 43.1, 18.5, 250e6, 1.380649e-23, 12.0)
    runs = rng.random((91, 80, 588)) < 0.9
    K, N, R = 80, 12, 8
    vals = rng.normal(size=(K, N))
    br_args = (vals, np.arange(K), 8, 1.0, R, np.argmax(vals, axis=1), 0.0, 0.0, rng.random((R, K, 2)))
    return {
        "elevation_matrix": ((users, sat_ecef), kernels.elevation_matrix_nb, kernels.elevation_matrix_np),
        "link_matrices": (link_args, kernels.link_matrices_nb, kernels.link_matrices_np),
        "visible_runs": ((runs, 10.0), kernels.visible_runs_nb, kernels.visible_runs_np),
        "best_response": (br_args, kernels.best_response_nb, kernels.best_response_np),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not HAVE_NUMBA:
        print("numba not importable; nothing to compare")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}")
    for name, (a, fast, slow) in cases(rng).items():
        fast(*a)  # compile
        n = 3
        t_fast = min(timeit.repeat(lambda: fast(*a), number=n, repeat=args.repeat)) / n * 1e3
        t_slow = min(timeit.repeat(lambda: slow(*a), number=n, repeat=args.repeat)) / n * 1e3
        print(f"{name:<18} {t_fast:>10.3f} {t_slow:>10.3f} {t_slow / t_fast:>7.1f}x")


if __name__ == "__main__":
    main()
