"""Weighted binary classifiers behind the auxiliary prune policy.

Label 1 means "branch" (the node's subtree holds the optimum), 0 means
"prune". Both models standardize their inputs with statistics of the
training set, stored on the model.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _jit, _kernels
from .features import N_FEATURES

FNN_DIMS = (N_FEATURES, 16, 32, 16, 2)
BRANCH, PRUNE = 1, 0


def _standardizer(X, weights=None):
    # weighted moments keep "duplicate a sample" and "double its weight" equivalent
    w = np.ones(len(X)) if weights is None else np.asarray(weights, dtype=float)
    w = w / w.sum()
    mean = w @ X
    std = np.sqrt(w @ (X - mean) ** 2)
    std = np.where(std > 1e-12, std, 1.0)
    return mean, std


def _check_labels(y):
    y = np.asarray(y)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    return y.astype(int)


# --------------------------------------------------------------------------
# SVM


@dataclass
class SvmModel:
    kernel: str
    w: np.ndarray | None
    bias: float
    mean: np.ndarray
    std: np.ndarray
    C: float
    gamma: float | None = None
    seed: int = 0
    support: np.ndarray | None = None  # standardized support vectors (rbf)
    dual_coef: np.ndarray | None = None  # alpha_i * y_i (rbf)
    n_iter: int = 0

    def decision_function(self, X) -> np.ndarray:
        Z = (np.atleast_2d(np.asarray(X, dtype=float)) - self.mean) / self.std
        if self.kernel == "linear":
            return Z @ self.w + self.bias
        if self.kernel == "rbf":
            return _rbf(Z, self.support, self.gamma) @ self.dual_coef + self.bias
        raise ValueError(f"unknown kernel {self.kernel!r}")


def svm_objective(w, bias, Z, ys, weights, C, regularize_bias=True):
    """``0.5 (|w|^2 + b^2) + C sum_i weight_i hinge_i`` with ``ys`` in {-1, +1}."""
    margins = ys * (Z @ w + bias)
    reg = float(w @ w) + (bias * bias if regularize_bias else 0.0)
    return 0.5 * reg + C * float(weights @ np.maximum(0.0, 1.0 - margins))


def _augment(Z):
    return np.hstack([Z, np.ones((Z.shape[0], 1))])


def _train_linear_dcd(Z, ys, weights, C, seed, max_epochs, tol):
    Za = np.ascontiguousarray(_augment(Z))
    kern = _kernels.svm_dcd_numba if _jit.USE_NUMBA else _kernels.svm_dcd_numpy
    v, _, epochs = kern(Za, ys, C * weights, int(seed), int(max_epochs), float(tol))
    return v[:-1].copy(), float(v[-1]), int(epochs)


def _train_linear_subgradient(Z, ys, weights, C, n_iter):
    """Full-batch subgradient descent (Pegasos step) keeping the best iterate."""
    Za = _augment(Z)
    W = weights.sum()
    lam = 1.0 / (C * W)
    wn = weights / W
    v = np.zeros(Za.shape[1])
    best_obj, best_v = np.inf, v.copy()
    for t in range(1, n_iter + 1):
        act = wn * ys * (ys * (Za @ v) < 1.0)
        step = 1.0 / (lam * t)
        v = (1.0 - step * lam) * v + step * (act @ Za)
        nrm = np.linalg.norm(v)
        if nrm > 1.0 / np.sqrt(lam):
            v *= 1.0 / (np.sqrt(lam) * nrm)
        obj = svm_objective(v[:-1], v[-1], Z, ys, weights, C)
        if obj < best_obj:
            best_obj, best_v = obj, v.copy()
    return best_v[:-1], float(best_v[-1]), n_iter


def _rbf(A, B, gamma):
    d2 = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * A @ B.T
    return np.exp(-gamma * np.maximum(d2, 0.0))


def _train_rbf_smo(Z, ys, Ci, gamma, tol=1e-3, max_iter=100_000):
    """SMO with second-order working-set selection on the weighted dual.

    ``Ci`` are per-sample box bounds. Kernel rows are computed on demand and
    cached; intended for datasets of a few thousand points.
    """
    n = Z.shape[0]
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of 0.5 a'Qa - e'a
    cache: dict[int, np.ndarray] = {}
    diag = np.ones(n)  # K(x, x) = 1 for rbf

    def q_row(i):
        row = cache.get(i)
        if row is None:
            if len(cache) > 2000:
                cache.clear()
            row = ys[i] * ys * _rbf(Z[i : i + 1], Z, gamma)[0]
            cache[i] = row
        return row

    it = 0
    for it in range(max_iter):
        up = ((ys > 0) & (alpha < Ci)) | ((ys < 0) & (alpha > 0))
        low = ((ys > 0) & (alpha > 0)) | ((ys < 0) & (alpha < Ci))
        score = -ys * grad
        if not up.any() or not low.any():
            break
        i = int(np.flatnonzero(up)[np.argmax(score[up])])
        m_up = score[i]
        m_low = score[low].min()
        if m_up - m_low < tol:
            break
        Qi = q_row(i)
        cand = np.flatnonzero(low & (score < m_up))
        bdiff = m_up - score[cand]
        quad = diag[i] + diag[cand] - 2.0 * ys[i] * ys[cand] * Qi[cand]
        quad = np.where(quad > 1e-12, quad, 1e-12)
        j = int(cand[np.argmax(bdiff * bdiff / quad)])
        Qj = q_row(j)
        # two-variable update keeping sum y_i alpha_i fixed
        qa = max(diag[i] + diag[j] - 2.0 * ys[i] * ys[j] * Qi[j], 1e-12)
        oi, oj = alpha[i], alpha[j]
        if ys[i] != ys[j]:
            delta = (-grad[i] - grad[j]) / qa
            diff = oi - oj
            ai, aj = oi + delta, oj + delta
            if diff > 0 and aj < 0:
                aj, ai = 0.0, diff
            elif diff <= 0 and ai < 0:
                ai, aj = 0.0, -diff
            if diff > Ci[i] - Ci[j] and ai > Ci[i]:
                ai, aj = Ci[i], Ci[i] - diff
            elif diff <= Ci[i] - Ci[j] and aj > Ci[j]:
                aj, ai = Ci[j], Ci[j] + diff
        else:
            delta = (grad[i] - grad[j]) / qa
            total = oi + oj
            ai, aj = oi - delta, oj + delta
            if total > Ci[i] and ai > Ci[i]:
                ai, aj = Ci[i], total - Ci[i]
            elif total <= Ci[i] and aj < 0:
                aj, ai = 0.0, total
            if total > Ci[j] and aj > Ci[j]:
                aj, ai = Ci[j], total - Ci[j]
            elif total <= Ci[j] and ai < 0:
                ai, aj = 0.0, total
        grad += Qi * (ai - oi) + Qj * (aj - oj)
        alpha[i], alpha[j] = ai, aj

    free = (alpha > 1e-12) & (alpha < Ci - 1e-12)
    if free.any():
        b = float(np.mean(-ys[free] * grad[free]))
    else:
        up = ((ys > 0) & (alpha < Ci)) | ((ys < 0) & (alpha > 0))
        low = ((ys > 0) & (alpha > 0)) | ((ys < 0) & (alpha < Ci))
        score = -ys * grad
        hi = score[up].max() if up.any() else 0.0
        lo = score[low].min() if low.any() else 0.0
        b = float((hi + lo) / 2.0)
    return alpha, b, it


def svm_train(X, y, weights=None, *, C: float = 1.0, kernel: str = "linear",
              gamma: float | None = None, solver: str = "dcd", n_iter: int = 1000,
              tol: float = 1e-4, seed: int = 0) -> SvmModel:
    """Weighted soft-margin SVM, ``min 0.5 |w|^2 + C sum_i weight_i hinge_i``.

    The linear model folds the bias into ``w`` through a constant feature (so
    the bias is regularized too) and is fit by dual coordinate descent, or by
    subgradient descent with ``solver="subgradient"``. The RBF model keeps an
    unregularized bias and is fit by SMO. Duplicating a sample is equivalent
    to scaling its weight.
    """
    X = np.asarray(X, dtype=float)
    y = _check_labels(y)
    if len(np.unique(y)) < 2:
        raise ValueError("svm_train needs samples of both classes")
    weights = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float)
    if np.any(weights <= 0):
        raise ValueError("sample weights must be positive")
    mean, std = _standardizer(X, weights)
    Z = (X - mean) / std
    ys = np.where(y == 1, 1.0, -1.0)
    if kernel == "linear":
        if solver == "dcd":
            w, b, it = _train_linear_dcd(Z, ys, weights, C, seed, n_iter, tol)
        elif solver == "subgradient":
            w, b, it = _train_linear_subgradient(Z, ys, weights, C, n_iter)
        else:
            raise ValueError(f"unknown solver {solver!r}")
        return SvmModel("linear", w, b, mean, std, C, None, seed, n_iter=it)
    if kernel == "rbf":
        gamma = 1.0 / Z.shape[1] if gamma is None else gamma
        alpha, b, it = _train_rbf_smo(Z, ys, C * weights, gamma)
        sv = alpha > 0
        return SvmModel("rbf", None, b, mean, std, C, gamma, seed,
                        support=Z[sv].copy(), dual_coef=(alpha * ys)[sv].copy(), n_iter=it)
    raise ValueError(f"unknown kernel {kernel!r}")


def svm_predict(model: SvmModel, features) -> int:
    """1 (branch) when the decision value is >= 0; a zero score keeps the node."""
    return int(model.decision_function(features)[0] >= 0.0)


# --------------------------------------------------------------------------
# FNN


@dataclass
class FnnModel:
    weights: list
    biases: list
    mean: np.ndarray
    std: np.ndarray
    dims: tuple = FNN_DIMS
    hyper: dict = field(default_factory=dict)
    seed: int = 0

    def params(self):
        return self.weights + self.biases


def fnn_init(seed: int = 0, dims=FNN_DIMS) -> FnnModel:
    rng = np.random.default_rng(seed)
    Ws = [rng.normal(0.0, np.sqrt(2.0 / m), (m, n)) for m, n in zip(dims[:-1], dims[1:])]
    bs = [np.zeros(n) for n in dims[1:]]
    return FnnModel(Ws, bs, np.zeros(dims[0]), np.ones(dims[0]), tuple(dims), {}, seed)


def _forward(Ws, bs, Z):
    acts = [Z]
    h = Z
    for W, b in zip(Ws[:-1], bs[:-1]):
        h = np.maximum(0.0, h @ W + b)
        acts.append(h)
    logits = h @ Ws[-1] + bs[-1]
    return acts, logits


def _log_softmax(logits):
    mx = logits.max(axis=1, keepdims=True)
    sh = logits - mx
    return sh - np.log(np.exp(sh).sum(axis=1, keepdims=True))


def fnn_forward(model: FnnModel, features) -> np.ndarray:
    """Class probabilities; column 0 is P(optimal node), column 1 P(non-optimal)."""
    X = np.atleast_2d(np.asarray(features, dtype=float))
    Z = (X - model.mean) / model.std
    _, logits = _forward(model.weights, model.biases, Z)
    o = np.exp(_log_softmax(logits))
    return o / o.sum(axis=1, keepdims=True)


def weighted_ce(o, y, weights) -> float:
    """Mean over samples of ``-w_i log o_i[class_i]`` (class 0 of ``o`` = branch)."""
    o = np.atleast_2d(o)
    y = np.asarray(y)
    p = np.where(y == 1, o[:, 0], o[:, 1])
    return float(np.mean(-np.asarray(weights) * np.log(p)))


def fnn_loss_and_grads(Ws, bs, Z, y, weights):
    """Batch-mean weighted cross-entropy and its gradients (backprop)."""
    acts, logits = _forward(Ws, bs, Z)
    logp = _log_softmax(logits)
    Y = np.column_stack([y == 1, y == 0]).astype(float)
    n = Z.shape[0]
    w = np.asarray(weights, dtype=float)
    loss = float(-(w * (Y * logp).sum(axis=1)).sum() / n)
    delta = (np.exp(logp) - Y) * (w / n)[:, None]
    gW = [None] * len(Ws)
    gb = [None] * len(bs)
    for i in range(len(Ws) - 1, -1, -1):
        gW[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ Ws[i].T) * (acts[i] > 0)
    return loss, gW, gb


def fnn_train(X, y, weights, *, epochs: int = 30, batch_size: int = 128, lr: float = 1e-2,
              seed: int = 0, history: list | None = None) -> FnnModel:
    """Mini-batch gradient descent with seeded shuffling."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] == 0:
        raise ValueError("fnn_train needs a nonempty dataset")
    y = _check_labels(y)
    weights = np.asarray(weights, dtype=float)
    model = fnn_init(seed)
    model.mean, model.std = _standardizer(X, weights)
    model.hyper = {"epochs": epochs, "batch_size": batch_size, "lr": lr}
    Z = (X - model.mean) / model.std
    rng = np.random.default_rng(seed + 1)
    n = Z.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        tot = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            loss, gW, gb = fnn_loss_and_grads(model.weights, model.biases, Z[idx], y[idx], weights[idx])
            tot += loss * len(idx)
            for W, g in zip(model.weights, gW):
                W -= lr * g
            for b, g in zip(model.biases, gb):
                b -= lr * g
        if history is not None:
            history.append(tot / n)
    return model


# --------------------------------------------------------------------------
# policies


class PrunePolicy:
    kind = "base"

    def decide(self, features, node=None) -> bool:
        raise NotImplementedError


class AlwaysBranch(PrunePolicy):
    kind = "always_branch"

    def decide(self, features, node=None) -> bool:
        return True


class PruneAll(PrunePolicy):
    kind = "prune_all"

    def decide(self, features, node=None) -> bool:
        return False


class OraclePolicy(PrunePolicy):
    """Branch exactly when the node's fixed indicators agree with the known optimum."""

    kind = "oracle"

    def __init__(self, rho_star):
        self.rho_star = np.asarray(rho_star)

    def decide(self, features, node=None) -> bool:
        if node is None:
            raise ValueError("the oracle policy needs the node")
        return node.det.agrees_with(self.rho_star)


class SvmPolicy(PrunePolicy):
    kind = "svm"

    def __init__(self, model: SvmModel):
        self.model = model

    def decide(self, features, node=None) -> bool:
        return svm_predict(self.model, features) == BRANCH


class FnnPolicy(PrunePolicy):
    kind = "fnn"

    def __init__(self, model: FnnModel, tau: float = 0.5):
        _check_tau(tau)
        self.model = model
        self.tau = tau

    def probability(self, features) -> np.ndarray:
        return fnn_forward(self.model, features)[0]

    def decide(self, features, node=None) -> bool:
        return bool(self.probability(features)[0] >= self.tau)


def _check_tau(tau):
    if tau is None or not 0.0 <= tau <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {tau!r}")


def policy_decide(policy: PrunePolicy, features, tau: float | None = None, node=None) -> int:
    if isinstance(policy, FnnPolicy):
        _check_tau(tau)
        return int(policy.probability(features)[0] >= tau)
    if tau is not None:
        raise ValueError("a threshold only applies to the FNN policy")
    if isinstance(policy, SvmPolicy):
        return svm_predict(policy.model, features)
    return int(policy.decide(features, node))
