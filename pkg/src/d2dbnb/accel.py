"""Policy-accelerated search, evaluation metrics, threshold control and feature ranking."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .bnb import Outcome, search
from .classifiers import FnnModel, FnnPolicy, PrunePolicy, _check_tau
from .features import FEATURE_NAMES

METRIC_COLUMNS = ("Ogap", "Speed", "Optimal recognition rate", "Extra prune rate")


def solve_with_policy(inst, policy: PrunePolicy, tau: float | None = None, *, rho_star=None,
                      relax_kwargs=None):
    """Accelerated search; returns ``(result or None, nodes_explored, node_log)``.

    For an FNN policy ``tau`` overrides its threshold. ``rho_star`` (if given)
    labels surviving nodes so recognition rates can be computed.
    """
    if isinstance(policy, FnnPolicy) and tau is not None:
        policy = FnnPolicy(policy.model, tau)
    elif isinstance(policy, FnnModel):
        policy = FnnPolicy(policy, 0.5 if tau is None else tau)
    elif tau is not None:
        raise ValueError("a threshold only applies to the FNN policy")
    result, _ = search(inst, policy, rho_star=rho_star, log_nodes=rho_star is not None,
                       relax_kwargs=relax_kwargs)
    return (result if result.found else None), result.nodes_explored, result.node_log


def optimality_gap(optimum: float, achieved: float | None) -> float:
    """Relative gap; a run without any incumbent scores 1.0."""
    if achieved is None or not math.isfinite(achieved):
        return 1.0
    if optimum <= 0:
        return 0.0
    return max(0.0, (optimum - achieved) / optimum)


@dataclass
class EvalReport:
    ogap: float
    speed: float
    optimal_recognition_rate: float
    extra_prune_rate: float
    per_instance: list = field(default_factory=list)
    nodes_exact: int = 0
    nodes_policy: int = 0
    meta: dict = field(default_factory=dict)

    def summary_row(self):
        return [self.ogap, self.speed, self.optimal_recognition_rate, self.extra_prune_rate]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["instance_id", "optimum", "achieved", *METRIC_COLUMNS[:2], "nodes_exact", "nodes_policy"])
        for r in self.per_instance:
            w.writerow([r["instance_id"], _fmt(r["optimum"]), _fmt(r["achieved"]), _fmt(r["ogap"]),
                        _fmt(r["speed"]), r["nodes_exact"], r["nodes_policy"]])
        w.writerow(["mean", "", "", _fmt(self.ogap), _fmt(self.speed), self.nodes_exact, self.nodes_policy])
        w.writerow([])
        w.writerow(list(METRIC_COLUMNS))
        w.writerow([_fmt(v) for v in self.summary_row()])
        return buf.getvalue()

    def to_pretty(self) -> str:
        lines = [f"{'instance':<16}{'optimum':>12}{'achieved':>12}{'ogap':>9}{'speed':>9}{'nodes':>14}"]
        for r in self.per_instance:
            ach = "none" if r["achieved"] is None else f"{r['achieved']:.4f}"
            lines.append(
                f"{r['instance_id']:<16}{r['optimum']:>12.4f}{ach:>12}{100 * r['ogap']:>8.2f}%"
                f"{r['speed']:>8.2f}x{r['nodes_exact']:>7}/{r['nodes_policy']:<6}"
            )
        lines.append("")
        lines.append(f"Ogap                      {100 * self.ogap:.2f}%")
        lines.append(f"Speed                     {self.speed:.2f}x")
        lines.append(f"Optimal recognition rate  {100 * self.optimal_recognition_rate:.2f}%")
        lines.append(f"Extra prune rate          {100 * self.extra_prune_rate:.2f}%")
        return "\n".join(lines) + "\n"


def _fmt(v):
    if v is None:
        return ""
    return "%.17g" % v


def evaluate_policy(policy: PrunePolicy, test_instances, exact_results, tau: float | None = None,
                    relax_kwargs=None) -> EvalReport:
    """Compare accelerated search against precomputed exact results.

    Recognition and extra-prune rates are pooled over every node that survived
    the original fathoming rules across the test set.
    """
    if len(test_instances) != len(exact_results):
        raise ValueError("one exact result per test instance is required")
    rows = []
    n_opt = n_opt_kept = n_non = n_non_pruned = 0
    for inst, ex in zip(test_instances, exact_results):
        res, nodes, log = solve_with_policy(inst, policy, tau, rho_star=ex.rho_star,
                                            relax_kwargs=relax_kwargs)
        achieved = None if res is None else res.objective
        for rec in log:
            if rec.outcome not in (Outcome.BRANCH, Outcome.POLICY_PRUNE):
                continue
            if rec.label == 1:
                n_opt += 1
                n_opt_kept += rec.decision
            else:
                n_non += 1
                n_non_pruned += 1 - rec.decision
        rows.append({
            "instance_id": inst.instance_id,
            "optimum": ex.objective,
            "achieved": achieved,
            "ogap": optimality_gap(ex.objective, achieved),
            "speed": ex.nodes_explored / nodes,
            "nodes_exact": ex.nodes_explored,
            "nodes_policy": nodes,
        })
    n = max(len(rows), 1)
    return EvalReport(
        ogap=sum(r["ogap"] for r in rows) / n,
        speed=sum(r["speed"] for r in rows) / n,
        # no surviving nodes of a class means the policy made no mistake on it
        optimal_recognition_rate=n_opt_kept / n_opt if n_opt else 1.0,
        extra_prune_rate=n_non_pruned / n_non if n_non else 0.0,
        per_instance=rows,
        nodes_exact=sum(r["nodes_exact"] for r in rows),
        nodes_policy=sum(r["nodes_policy"] for r in rows),
    )


@dataclass(frozen=True)
class SoftDecisionConfig:
    tau_init: float = 0.5
    tau_step: float = 0.01
    ogap_max: float | None = None
    speed_min: float | None = None
    max_iters: int = 100

    def __post_init__(self):
        _check_tau(self.tau_init)
        if not 0.0 < self.tau_step <= 1.0:
            raise ValueError("tau_step must lie in (0, 1]")
        if self.ogap_max is None and self.speed_min is None:
            raise ValueError("set an ogap limit, a speed target, or both")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class SoftDecisionResult:
    report: EvalReport
    tau: float
    met: bool
    conflict: bool
    history: list


def dynamic_soft_decision(instances, exact_results, fnn: FnnModel, cfg: SoftDecisionConfig,
                          relax_kwargs=None) -> SoftDecisionResult:
    """Re-solve the instance set while moving the threshold toward the unmet target.

    An unmet ogap limit lowers tau (more branching), an unmet speed target
    raises it. If both are unmet at once, or the search starts oscillating
    between them, the best-effort result is returned with ``conflict`` set.
    """
    if not isinstance(instances, (list, tuple)):
        instances, exact_results = [instances], [exact_results]
    policy = FnnPolicy(fnn, cfg.tau_init)
    tau = cfg.tau_init
    history = []
    last_dir = 0
    report = None
    conflict = False
    met = False
    for _ in range(cfg.max_iters):
        report = evaluate_policy(policy, instances, exact_results, tau, relax_kwargs)
        history.append((tau, report.ogap, report.speed))
        ogap_bad = cfg.ogap_max is not None and report.ogap > cfg.ogap_max
        speed_bad = cfg.speed_min is not None and report.speed < cfg.speed_min
        if not ogap_bad and not speed_bad:
            met = True
            break
        if ogap_bad and speed_bad:
            conflict = True
            break
        direction = -1 if ogap_bad else 1
        if last_dir and direction != last_dir:
            conflict = True
            break
        last_dir = direction
        nxt = round(min(1.0, max(0.0, tau + direction * cfg.tau_step)), 10)
        if nxt == tau:
            break
        tau = nxt
    return SoftDecisionResult(report, tau, met, conflict, history)


def rank_features(X, y, names=FEATURE_NAMES):
    """One-way ANOVA F-score of each feature between the two classes, descending.

    A feature with zero within-class variance but distinct class means scores
    ``inf``; a constant feature scores 0.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    groups = [X[y == c] for c in np.unique(y)]
    if len(groups) < 2:
        raise ValueError("F-test needs samples of both classes")
    n, G = X.shape[0], len(groups)
    grand = X.mean(axis=0)
    between = sum(len(g) * (g.mean(axis=0) - grand) ** 2 for g in groups) / (G - 1)
    within = sum(((g - g.mean(axis=0)) ** 2).sum(axis=0) for g in groups) / (n - G)
    scores = []
    for j in range(X.shape[1]):
        if within[j] > 0:
            f = between[j] / within[j]
        else:
            f = math.inf if between[j] > 0 else 0.0
        scores.append((names[j], float(f)))
    # stable sort keeps the canonical order among ties
    return sorted(scores, key=lambda t: -t[1])


def build_mixed_training_set(base_set, target_set, n_base: int, n_target: int, seed: int = 0):
    """Seeded subsample of ``n_base`` base and ``n_target`` target items, shuffled together."""
    if n_base < 0 or n_target < 0:
        raise ValueError("counts must be nonnegative")
    if n_base > len(base_set) or n_target > len(target_set):
        raise ValueError(
            f"insufficient instances: need {n_base}+{n_target}, have {len(base_set)}+{len(target_set)}"
        )
    rng = np.random.default_rng(seed)
    pick_b = sorted(rng.choice(len(base_set), n_base, replace=False).tolist())
    pick_t = sorted(rng.choice(len(target_set), n_target, replace=False).tolist())
    items = [base_set[i] for i in pick_b] + [target_set[i] for i in pick_t]
    order = rng.permutation(len(items))
    return [items[i] for i in order]
