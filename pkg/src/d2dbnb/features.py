"""Eight-dimensional description of a branch-and-bound state.

Order: depth, plunge depth, local bound, branching value, global bound,
solution count, CSI feature, power feature. Depths are normalized by the
tree height ``K * L`` and bounds by the root relaxation value, which keeps
every feature except the solution count independent of the problem size.
"""
from __future__ import annotations

import numpy as np

N_FEATURES = 8
FEATURE_NAMES = (
    "depth",
    "plunge_depth",
    "local_upper_bound",
    "branch_value",
    "global_lower_bound",
    "n_solutions",
    "csi",
    "power",
)
ROOT_BRANCH_VALUE = 0.5
EPS = 1e-12


def first_undetermined(det):
    """Lexicographically first free indicator, or None when all are fixed."""
    free = np.flatnonzero(det.matrix.ravel() < 0)
    if free.size == 0:
        return None
    K, L = det.shape
    return divmod(int(free[0]), L)


def feature_pair(node):
    """Indicator the problem-dependent features look at.

    This is the node's branching candidate; a fully determined node falls
    back to the variable whose branch created it.
    """
    kl = first_undetermined(node.det)
    if kl is None:
        kl = node.branch_var if node.branch_var is not None else (0, 0)
    return kl


def csi_feature(inst, k, l) -> float:
    raw = float(np.log2(1.0 + 1.0 / (inst.a[k, l] + inst.b[k, l])))
    return raw / inst.r_min_cu if inst.r_min_cu > 0 else raw


def power_feature(inst, k, l) -> float:
    total = inst.p_cap.sum()
    if total <= 0:
        return 0.0
    return float(inst.K * inst.L * inst.p_cap[k, l] / total)


def extract_features(node, tree, inst) -> np.ndarray:
    if node.b_u is None:
        raise ValueError("node has not been evaluated (b_u unset)")
    if tree.b_u_root is None:
        raise ValueError("tree has no root bound yet")
    D = inst.K * inst.L
    root = max(tree.b_u_root, EPS)
    k, l = feature_pair(node)
    return np.array(
        [
            node.depth / D,
            node.plunge_depth / D,
            node.b_u / root,
            ROOT_BRANCH_VALUE if node.branch_value is None else float(node.branch_value),
            tree.b_l / root if tree.incumbent is not None else 0.0,
            float(tree.n_solutions),
            csi_feature(inst, k, l),
            power_feature(inst, k, l),
        ]
    )
