"""Oracle labels, sample weights, data collection and the DAgger loop."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .accel import evaluate_policy
from .bnb import BnbResult, Outcome, det_key, search
from .classifiers import FnnPolicy, OraclePolicy, SvmPolicy, fnn_train, svm_train
from .transform import ProblemInstance

log = logging.getLogger(__name__)

OMEGA2_GRID = (1.0, 2.0, 4.0, 8.0)
BRANCH, PRUNE = 1, 0


@dataclass(frozen=True)
class WeightParams:
    A: float = 5.0
    B: float = 2.68
    omega2_optimal: float = 8.0

    def __post_init__(self):
        if self.A <= 0 or self.B <= 0:
            raise ValueError("A and B must be positive")
        if self.omega2_optimal not in OMEGA2_GRID:
            raise ValueError(f"omega2_optimal must be one of {OMEGA2_GRID}")


@dataclass
class LabeledSample:
    features: np.ndarray
    label: int
    weight: float
    instance_id: str = ""
    node_id: int = 0

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")
        if not self.weight > 0:
            raise ValueError("weight must be positive")


@dataclass
class LabeledProblem:
    """An instance together with its exact solution (the source of oracle labels)."""

    inst: ProblemInstance
    exact: BnbResult


def label_oracle(node, rho_star) -> int:
    return BRANCH if node.det.agrees_with(rho_star) else PRUNE


def sample_weight(depth: int, max_depth: int, label: int, params: WeightParams = WeightParams()) -> float:
    if max_depth < 1 or not 0 <= depth <= max_depth:
        raise ValueError(f"need 0 <= depth <= max_depth and max_depth >= 1, got {depth}, {max_depth}")
    omega2 = params.omega2_optimal if label == BRANCH else 1.0
    return params.A * math.exp(-params.B * depth / max_depth) * omega2


def collect_data(inst: ProblemInstance, policy, rho_star, params: WeightParams = WeightParams(),
                 relax_kwargs=None, exclude=frozenset()) -> list:
    """Walk the tree under ``policy`` and record every node it was consulted on.

    Nodes fathomed by the original rules never reach the policy and are never
    recorded. ``exclude`` holds ``det_key``s the exact solver fathomed: a
    policy walk can carry a weaker incumbent than the exact walk, so a node
    the exact search pruned by bound may survive here; such nodes are skipped
    as well. Labels come from ``rho_star`` regardless of what the policy does.
    """
    result, _ = search(inst, policy, rho_star=rho_star, want_features=True, relax_kwargs=relax_kwargs)
    D = inst.K * inst.L
    out = []
    for rec in result.node_log:
        if rec.outcome not in (Outcome.BRANCH, Outcome.POLICY_PRUNE):
            continue
        if exclude and det_key(rec.det) in exclude:
            continue
        out.append(LabeledSample(
            features=rec.features,
            label=rec.label,
            weight=sample_weight(rec.depth, D, rec.label, params),
            instance_id=inst.instance_id,
            node_id=rec.node_id,
        ))
    return out


def to_arrays(samples):
    if not samples:
        return np.zeros((0, 8)), np.zeros(0, dtype=int), np.zeros(0)
    X = np.vstack([s.features for s in samples])
    y = np.array([s.label for s in samples], dtype=int)
    w = np.array([s.weight for s in samples], dtype=float)
    return X, y, w


@dataclass
class DaggerConfig:
    problem_set: list
    validation_set: list | None = None
    M: int = 4
    trainer: str = "svm"
    svm_hyper: dict = field(default_factory=lambda: {"C": 1.0, "kernel": "rbf"})
    fnn_hyper: dict = field(default_factory=lambda: {"epochs": 30, "batch_size": 128, "lr": 1e-2})
    tau: float = 0.5
    seed: int = 0
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if self.trainer not in ("svm", "fnn"):
            raise ValueError(f"unknown trainer {self.trainer!r}")


@dataclass
class DaggerResult:
    policy: object
    model: object
    best_iteration: int
    history: list
    dataset: list
    weights: WeightParams


def split_train_validation(problems, val_fraction: float = 0.1):
    """Leading ``1 - val_fraction`` of the (seed-ordered) list trains, the rest validates."""
    n_val = max(1, int(round(len(problems) * val_fraction))) if len(problems) > 1 else 0
    return problems[: len(problems) - n_val], problems[len(problems) - n_val :]


def train_classifier(samples, cfg: DaggerConfig, seed: int):
    X, y, w = to_arrays(samples)
    if cfg.trainer == "svm":
        if len(np.unique(y)) < 2:
            raise ValueError("training data holds a single class; cannot fit a prune policy")
        model = svm_train(X, y, w, seed=seed, **cfg.svm_hyper)
        return model, SvmPolicy(model)
    model = fnn_train(X, y, w, seed=seed, **cfg.fnn_hyper)
    return model, FnnPolicy(model, cfg.tau)


def dagger_train(cfg: DaggerConfig, weights: WeightParams = WeightParams(), relax_kwargs=None) -> DaggerResult:
    """Imitation learning with dataset aggregation.

    Iteration 1 collects under the oracle; iteration ``m > 1`` under the policy
    from ``m - 1``. Every iteration trains on all data gathered so far. The
    returned policy is the iterate with the lowest validation ogap, ties broken
    by higher speed, then by earlier iteration.
    """
    if not cfg.problem_set:
        raise ValueError("empty problem set")
    if cfg.validation_set is None:
        train, val = split_train_validation(cfg.problem_set, cfg.val_fraction)
    else:
        train, val = cfg.problem_set, cfg.validation_set
    if not train:
        raise ValueError("empty training split")

    dataset: list = []
    history = []
    best = None
    policy = None
    for m in range(1, cfg.M + 1):
        for lp in train:
            collector = OraclePolicy(lp.exact.rho_star) if m == 1 else policy
            dataset.extend(collect_data(lp.inst, collector, lp.exact.rho_star, weights, relax_kwargs,
                                        lp.exact.fathomed))
        model, policy = train_classifier(dataset, cfg, cfg.seed + m)
        if val:
            rep = evaluate_policy(policy, [lp.inst for lp in val], [lp.exact for lp in val],
                                  relax_kwargs=relax_kwargs)
            score = (rep.ogap, -rep.speed)
        else:
            rep, score = None, (0.0, 0.0)
        history.append({
            "iteration": m,
            "n_samples": len(dataset),
            "val_ogap": None if rep is None else rep.ogap,
            "val_speed": None if rep is None else rep.speed,
        })
        log.info("dagger iteration %d: %d samples, validation %s", m, len(dataset), score)
        if best is None or score < best[0]:
            best = (score, m, model, policy)
    _, m_best, model, policy = best
    return DaggerResult(policy, model, m_best, history, dataset, weights)


def tune_omega2(cfg: DaggerConfig, base: WeightParams = WeightParams(), grid=OMEGA2_GRID,
                relax_kwargs=None) -> DaggerResult:
    """Run DAgger once per omega2 value and keep the best by the validation rule."""
    best = None
    for w2 in grid:
        res = dagger_train(cfg, WeightParams(base.A, base.B, w2), relax_kwargs)
        h = res.history[res.best_iteration - 1]
        score = (h["val_ogap"] or 0.0, -(h["val_speed"] or 0.0))
        if best is None or score < best[0]:
            best = (score, res)
    return best[1]
