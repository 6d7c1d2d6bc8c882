import json
import math

import numpy as np
import pytest

from d2dbnb.bnb import (Node, Outcome, TreeState, brute_force_oracle, det_key, fathom_decision,
                        search, select_branch_variable, solve_exact)
from d2dbnb.classifiers import AlwaysBranch, PruneAll
from d2dbnb.relax import INFEASIBLE, DeterminedSet, RelaxationSolution
from helpers import make_instance
from oracles import enumerate_optimum


def _sol(eta, integral=False):
    z = np.zeros((1, 1))
    return RelaxationSolution(eta, z, z, z, 0.0, 0.0, integral)  # zero gap: bound == eta


def test_fathom_rules_in_order():
    assert fathom_decision(INFEASIBLE, 0.0) is Outcome.INFEASIBLE
    assert fathom_decision(_sol(1.0, True), 5.0) is Outcome.INTEGRAL
    assert fathom_decision(_sol(1.0), 5.0) is Outcome.PRUNE_BY_BOUND
    assert fathom_decision(_sol(5.0), 5.0) is Outcome.BRANCH
    assert fathom_decision(_sol(5.0 - 1e-10), 5.0) is Outcome.BRANCH
    assert fathom_decision(_sol(1.0), -math.inf) is Outcome.BRANCH
    assert Outcome.PRUNE_BY_BOUND.fathomed and not Outcome.POLICY_PRUNE.fathomed


def test_branch_variable_is_first_undetermined():
    det = DeterminedSet(2, 2, {(0, 0): 1})
    assert select_branch_variable(None, det) == (0, 1)
    with pytest.raises(ValueError):
        select_branch_variable(None, DeterminedSet.from_matrix(np.zeros((2, 2))))


@pytest.mark.parametrize("seed", range(4))
def test_exact_matches_enumeration(seed):
    inst = make_instance(K=3, L=2, seed=seed)
    res = solve_exact(inst)
    best, _ = enumerate_optimum(inst)
    assert res.objective == pytest.approx(best, rel=1e-4)
    assert inst.is_feasible(res.rho_star, res.p_star)
    assert inst.objective(res.rho_star, res.p_star) == pytest.approx(res.objective, rel=1e-12)


def test_brute_force_oracle_agrees_and_guards_budget():
    inst = make_instance(K=3, L=2, seed=7)
    best, rho = brute_force_oracle(inst)
    assert best == pytest.approx(solve_exact(inst).objective, rel=1e-6)
    assert rho.shape == (3, 2)
    with pytest.raises(ValueError):
        brute_force_oracle(make_instance(K=11, L=2, seed=0))


def test_single_variable_tree():
    inst = make_instance(K=1, L=1, seed=0)
    res = solve_exact(inst, log_nodes=True)
    assert res.rho_star.tolist() == [[1]]
    # the relaxed indicator saturates at 1, so the root is already integral
    assert res.nodes_explored == 1
    assert res.node_log[0].outcome is Outcome.INTEGRAL
    assert res.fathomed == frozenset({"-"})


def test_node_log_bookkeeping():
    inst = make_instance(K=4, L=2, seed=3)
    res = solve_exact(inst, log_nodes=True)
    log = res.node_log
    assert len(log) == res.nodes_explored
    assert log[0].parent_id is None and log[0].depth == 0 and log[0].plunge_depth == 0
    ids = {r.node_id: r for r in log}
    prev = log[0]
    for r in log[1:]:
        parent = ids[r.parent_id]
        assert r.depth == parent.depth + 1
        assert r.plunge_depth == (prev.plunge_depth + 1 if r.parent_id == prev.node_id else 0)
        prev = r
        json.loads(r.to_json())
    # lower bound never decreases along the walk
    b = [r.b_l for r in log]
    assert all(x <= y for x, y in zip(b, b[1:]))
    assert {det_key(r.det) for r in log if r.outcome.fathomed} == res.fathomed


def test_one_branch_explored_first():
    inst = make_instance(K=3, L=2, seed=1)
    log = solve_exact(inst, log_nodes=True).node_log
    assert log[1].branch_value == 1
    log0 = solve_exact(inst, log_nodes=True, branch_one_first=False).node_log
    assert log0[1].branch_value == 0


def test_branching_order_does_not_change_optimum():
    inst = make_instance(K=4, L=2, seed=5)
    a = solve_exact(inst).objective
    b = solve_exact(inst, branch_one_first=False).objective
    assert a == pytest.approx(b, rel=1e-6)


def test_policies_through_search():
    inst = make_instance(K=4, L=2, seed=2)
    exact = solve_exact(inst)
    same, _ = search(inst, AlwaysBranch())
    assert same.nodes_explored == exact.nodes_explored
    assert same.objective == exact.objective
    none, tree = search(inst, PruneAll())
    assert not none.found and none.nodes_explored == 1
    assert isinstance(tree, TreeState) and tree.b_u_root is not None


def test_oracle_labels_in_log():
    inst = make_instance(K=3, L=2, seed=4)
    exact = solve_exact(inst)
    res, _ = search(inst, None, rho_star=exact.rho_star, log_nodes=True)
    surv = [r for r in res.node_log if r.outcome is Outcome.BRANCH]
    assert surv[0].label == 1
    for r in surv:
        d = DeterminedSet.from_matrix(r.det)
        assert r.label == int(d.agrees_with(exact.rho_star))


def test_node_defaults():
    n = Node(det=DeterminedSet(1, 1))
    assert n.branch_value is None and n.depth == 0
