import numpy as np

from d2dbnb.scenario import ScenarioConfig, generate_scenario
from d2dbnb.transform import compute_coefficients


def make_instance(K=3, L=2, seed=0, **kw):
    sc = generate_scenario(ScenarioConfig(K=K, L=L, rng_seed=seed, **kw))
    return compute_coefficients(sc, f"k{K}l{L}s{seed}")


def random_leaf(rng, K, L, cover_pairs=True):
    """Indicator matrix with at most one pair per channel; optionally every pair gets a channel."""
    while True:
        rho = np.zeros((K, L), dtype=np.int8)
        for k in range(K):
            c = rng.integers(-1, L)
            if c >= 0:
                rho[k, c] = 1
        if not cover_pairs or rho.sum(axis=0).min() >= 1:
            return rho


# acceptance verdicts, printed once at the end of the run by conftest
VERDICTS: dict = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    VERDICTS[criterion] = (passed, detail)
    print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}")
