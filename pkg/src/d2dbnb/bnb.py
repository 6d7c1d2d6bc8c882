"""Depth-first branch-and-bound over the channel indicators.

``search`` is the single tree walk used everywhere: with no policy it is the
exact solver; with a prune policy it is the accelerated solver and the DAgger
data collector. The three original fathoming rules always run first; the
policy only sees nodes that survive them.
"""
from __future__ import annotations

import enum
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .features import extract_features, first_undetermined
from .relax import INFEASIBLE, DeterminedSet, solve_node_relaxation
from .transform import ProblemInstance

BOUND_TOL = 1e-9
BRUTE_FORCE_MAX_VARS = 20


class Outcome(str, enum.Enum):
    INFEASIBLE = "Infeasible"
    INTEGRAL = "IntegralIncumbent"
    PRUNE_BY_BOUND = "PruneByBound"
    BRANCH = "Branch"
    POLICY_PRUNE = "PolicyPrune"

    @property
    def fathomed(self) -> bool:
        return self in (Outcome.INFEASIBLE, Outcome.INTEGRAL, Outcome.PRUNE_BY_BOUND)


@dataclass
class Node:
    det: DeterminedSet
    depth: int = 0
    branch_value: int | None = None  # None marks the root
    branch_var: tuple | None = None
    b_u: float | None = None
    node_id: int = 0
    parent_id: int | None = None
    plunge_depth: int = 0


@dataclass
class TreeState:
    open_list: list = field(default_factory=list)
    b_l: float = -math.inf
    incumbent: tuple | None = None  # (rho, p_d, objective)
    n_solutions: int = 0
    b_u_root: float | None = None
    nodes_explored: int = 0
    plunge_depth: int = 0


@dataclass
class NodeRecord:
    node_id: int
    parent_id: int | None
    depth: int
    plunge_depth: int
    b_u: float | None
    b_l: float
    n_solutions: int
    branch_value: int | None
    branch_var: tuple | None
    outcome: Outcome
    features: np.ndarray | None = None
    label: int | None = None
    decision: int | None = None
    det: np.ndarray | None = None

    def to_json(self) -> str:
        d = {
            "node_id": self.node_id,
            "parent_id": self.parent_id,
            "depth": self.depth,
            "plunge_depth": self.plunge_depth,
            "b_u": self.b_u,
            "b_l": None if math.isinf(self.b_l) else self.b_l,
            "n_solutions": self.n_solutions,
            "branch_value": self.branch_value,
            "branch_var": list(self.branch_var) if self.branch_var is not None else None,
            "outcome": self.outcome.value,
            "label": self.label,
            "decision": self.decision,
        }
        return json.dumps(d)


@dataclass
class BnbResult:
    objective: float
    rho_star: np.ndarray | None
    p_star: np.ndarray | None
    nodes_explored: int
    b_u_root: float
    node_log: list | None = None
    # keys (see ``det_key``) of every node the original rules fathomed in this walk
    fathomed: frozenset = frozenset()

    @property
    def found(self) -> bool:
        return self.rho_star is not None


def det_key(det) -> str:
    """Compact text key of a determined set: one of '-', '0', '1' per indicator."""
    m = det.matrix if isinstance(det, DeterminedSet) else np.asarray(det)
    return "".join("-01"[v + 1] for v in m.ravel().tolist())


def fathom_decision(sol, b_l: float, bound_tol: float = BOUND_TOL) -> Outcome:
    if sol is INFEASIBLE:
        return Outcome.INFEASIBLE
    if sol.is_integral:
        return Outcome.INTEGRAL
    if sol.upper_bound < b_l - bound_tol:
        return Outcome.PRUNE_BY_BOUND
    return Outcome.BRANCH


def select_branch_variable(sol, det: DeterminedSet) -> tuple:
    kl = first_undetermined(det)
    if kl is None:
        raise ValueError("every indicator is determined; nothing to branch on")
    return kl


def _round_solution(inst: ProblemInstance, sol):
    """Integral assignment and feasible powers from an (almost) integral relaxation."""
    rho = np.round(sol.rho_hat).astype(np.int8)
    p = np.where(rho == 1, np.minimum(sol.p_d, inst.p_cap), 0.0)
    col = p.sum(axis=0)
    scale = np.where(col > inst.p_budget, inst.p_budget / np.where(col > 0, col, 1.0), 1.0)
    return rho, p * scale[None, :]


def search(
    inst: ProblemInstance,
    policy=None,
    *,
    rho_star=None,
    log_nodes: bool = False,
    want_features: bool = False,
    branch_one_first: bool = True,
    relax_kwargs: dict | None = None,
):
    """Run one DFS walk; returns ``(BnbResult, TreeState)``.

    ``policy`` needs ``decide(features, node) -> bool`` (True = branch) and is
    consulted only on nodes the original rules did not fathom. When
    ``rho_star`` is given, surviving nodes get an oracle label (1 = the
    optimum lies in the subtree).
    """
    relax_kwargs = relax_kwargs or {}
    K, L = inst.K, inst.L
    tree = TreeState()
    tree.open_list.append(Node(det=DeterminedSet(K, L)))
    next_id = 1
    prev_id = None
    prev_plunge = 0
    records = [] if (log_nodes or want_features) else None
    fathomed = set()
    need_features = want_features or policy is not None

    while tree.open_list:
        node = tree.open_list.pop()
        node.plunge_depth = prev_plunge + 1 if (prev_id is not None and node.parent_id == prev_id) else 0
        prev_id, prev_plunge = node.node_id, node.plunge_depth
        tree.plunge_depth = node.plunge_depth

        sol = solve_node_relaxation(inst, node.det, **relax_kwargs)
        tree.nodes_explored += 1
        if sol is not INFEASIBLE:
            node.b_u = sol.upper_bound
            if node.parent_id is None:
                tree.b_u_root = sol.upper_bound
        b_l_snapshot = tree.b_l
        outcome = fathom_decision(sol, tree.b_l)
        feats = label = decision = None
        kl = None
        if outcome.fathomed:
            fathomed.add(det_key(node.det))

        if outcome is Outcome.INTEGRAL:
            tree.n_solutions += 1
            rho, p = _round_solution(inst, sol)
            obj = inst.objective(rho, p)
            if obj > tree.b_l:
                tree.b_l = obj
                tree.incumbent = (rho, p, obj)
        elif outcome is Outcome.BRANCH:
            if need_features:
                feats = extract_features(node, tree, inst)
            if rho_star is not None:
                label = int(node.det.agrees_with(rho_star))
            branch = True if policy is None else bool(policy.decide(feats, node))
            decision = int(branch)
            if branch:
                kl = select_branch_variable(sol, node.det)
                order = (0, 1) if branch_one_first else (1, 0)
                for v in order:
                    tree.open_list.append(
                        Node(
                            det=node.det.with_fixed(kl, v),
                            depth=node.depth + 1,
                            branch_value=v,
                            branch_var=kl,
                            node_id=next_id,
                            parent_id=node.node_id,
                        )
                    )
                    next_id += 1
            else:
                outcome = Outcome.POLICY_PRUNE

        if records is not None:
            records.append(
                NodeRecord(
                    node_id=node.node_id,
                    parent_id=node.parent_id,
                    depth=node.depth,
                    plunge_depth=node.plunge_depth,
                    b_u=node.b_u,
                    b_l=b_l_snapshot,
                    n_solutions=tree.n_solutions,
                    branch_value=node.branch_value,
                    branch_var=kl,
                    outcome=outcome,
                    features=feats,
                    label=label,
                    decision=decision,
                    det=node.det.matrix.copy(),
                )
            )

    if tree.incumbent is None:
        result = BnbResult(
            objective=math.nan, rho_star=None, p_star=None,
            nodes_explored=tree.nodes_explored, b_u_root=tree.b_u_root, node_log=records,
            fathomed=frozenset(fathomed),
        )
    else:
        rho, p, obj = tree.incumbent
        result = BnbResult(
            objective=obj, rho_star=rho, p_star=p,
            nodes_explored=tree.nodes_explored, b_u_root=tree.b_u_root, node_log=records,
            fathomed=frozenset(fathomed),
        )
    return result, tree


def solve_exact(inst: ProblemInstance, log_nodes: bool = False, **kwargs) -> BnbResult:
    """Globally optimal assignment by exhaustive DFS branch-and-bound."""
    result, _ = search(inst, None, log_nodes=log_nodes, **kwargs)
    if not result.found:
        # never reached in practice: the all-zero assignment is always feasible
        K, L = inst.K, inst.L
        result.objective = 0.0
        result.rho_star = np.zeros((K, L), dtype=np.int8)
        result.p_star = np.zeros((K, L))
    return result


def brute_force_oracle(inst: ProblemInstance, tie_tol: float = 1e-9, **relax_kwargs):
    """Best assignment by enumerating every feasible indicator matrix.

    Each leaf's power allocation comes from the relaxation with every
    indicator fixed. Ties within ``tie_tol`` go to the lexicographically
    smallest matrix.
    """
    K, L = inst.K, inst.L
    if K * L > BRUTE_FORCE_MAX_VARS:
        raise ValueError(f"enumeration budget exceeded: K*L={K * L} > {BRUTE_FORCE_MAX_VARS}")
    best, best_rho = -math.inf, None
    # flattened rho in ascending lexicographic order: per channel, "unused" (all zeros)
    # sorts first, then the one-hot rows with the 1 furthest right
    row_choices = [None] + list(range(L - 1, -1, -1))
    for combo in itertools.product(row_choices, repeat=K):
        rho = np.zeros((K, L), dtype=np.int8)
        for k, l in enumerate(combo):
            if l is not None:
                rho[k, l] = 1
        sol = solve_node_relaxation(inst, DeterminedSet.from_matrix(rho), **relax_kwargs)
        p_rho, p = _round_solution(inst, sol)
        obj = inst.objective(p_rho, p)
        if obj > best + tie_tol:
            best, best_rho = obj, rho
    return best, best_rho
