"""Wall-clock comparison of the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat N]

Times the root relaxation, a complete exact search and weighted linear SVM
training under both paths, and checks that the two paths agree.
"""
import argparse
import time

import numpy as np

from d2dbnb import _jit
from d2dbnb.bnb import solve_exact
from d2dbnb.classifiers import svm_train
from d2dbnb.relax import DeterminedSet, solve_node_relaxation
from d2dbnb.scenario import ScenarioConfig, generate_scenario
from d2dbnb.transform import compute_coefficients


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def with_path(use_numba, fn):
    old = _jit.USE_NUMBA
    _jit.USE_NUMBA = use_numba
    try:
        return fn()
    finally:
        _jit.USE_NUMBA = old


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    cases = []
    for K, L in ((5, 2), (10, 2)):
        inst = compute_coefficients(generate_scenario(ScenarioConfig(K=K, L=L, rng_seed=1)))
        det = DeterminedSet(K, L)
        cases.append((f"root relaxation ({K},{L})",
                      lambda u, inst=inst, det=det: solve_node_relaxation(inst, det, use_numba=u).eta))
    inst5 = compute_coefficients(generate_scenario(ScenarioConfig(K=5, L=2, rng_seed=2)))
    cases.append(("exact search (5,2)",
                  lambda u: with_path(u, lambda: solve_exact(inst5).objective)))
    rng = np.random.default_rng(0)
    X = rng.normal(size=(2000, 8))
    y = (X[:, 0] + 0.5 * rng.normal(size=2000) > 0).astype(int)
    w = rng.uniform(0.3, 40.0, 2000)
    cases.append(("linear SVM, 2000 samples",
                  lambda u: with_path(u, lambda: svm_train(X, y, w, C=1.0, n_iter=200).w.copy())))

    print(f"{'case':<28}{'numba [s]':>12}{'numpy [s]':>12}{'ratio':>9}  agree")
    for name, fn in cases:
        fn(True)  # compile outside the timed region
        t_nb, a = best_of(lambda: fn(True), args.repeat)
        t_np, b = best_of(lambda: fn(False), args.repeat)
        agree = np.allclose(a, b, rtol=1e-8, atol=1e-10)
        print(f"{name:<28}{t_nb:>12.4f}{t_np:>12.4f}{t_np / t_nb:>8.1f}x  {agree}")


if __name__ == "__main__":
    main()
