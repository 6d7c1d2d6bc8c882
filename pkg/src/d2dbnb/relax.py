"""Per-node convex relaxation of the channel-assignment problem.

Indicators not fixed by the node are relaxed to [0, 1]. With the substitution
``s = p * rho`` the pair rate ``sum_k log2(1 + rho s / (a rho + b s))`` is
jointly concave, so the node problem

    max eta  s.t.  rate_l(s, rho) >= eta,  sum_l rho_kl <= 1,
                   sum_k s_kl <= P,  0 <= s_kl <= rho_kl * p_cap_kl

is convex and is solved here by a log-barrier method.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import _jit, _kernels
from .transform import ProblemInstance

log = logging.getLogger(__name__)

OPT_TOL = 1e-6
FEAS_TOL = 1e-8
INTEGRALITY_TOL = 1e-6
MAX_NEWTON_ITERS = 200
INIT_MARGIN = 0.1
INNER_TOL = 1e-11


class SolverError(RuntimeError):
    """The barrier iterations did not converge."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


class _Infeasible:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "INFEASIBLE"

    def __bool__(self):
        return False


INFEASIBLE = _Infeasible()


class DeterminedSet:
    """Fixed channel indicators of a node, stored as an int8 matrix (-1 = free)."""

    __slots__ = ("_m",)

    def __init__(self, K: int, L: int, items=None):
        self._m = np.full((K, L), -1, dtype=np.int8)
        for (k, l), v in dict(items or {}).items():
            if v not in (0, 1):
                raise ValueError(f"indicator value must be 0 or 1, got {v!r}")
            self._m[k, l] = v

    @classmethod
    def from_matrix(cls, m) -> "DeterminedSet":
        out = cls.__new__(cls)
        out._m = np.array(m, dtype=np.int8)
        return out

    @property
    def shape(self):
        return self._m.shape

    @property
    def matrix(self) -> np.ndarray:
        return self._m

    def __len__(self):
        return int((self._m >= 0).sum())

    def __contains__(self, kl):
        return self._m[kl] >= 0

    def __getitem__(self, kl):
        v = self._m[kl]
        if v < 0:
            raise KeyError(kl)
        return int(v)

    def items(self):
        ks, ls = np.nonzero(self._m >= 0)
        return [((int(k), int(l)), int(self._m[k, l])) for k, l in zip(ks, ls)]

    def with_fixed(self, kl, value: int) -> "DeterminedSet":
        if self._m[kl] >= 0:
            raise ValueError(f"{kl} already determined")
        m = self._m.copy()
        m[kl] = value
        return DeterminedSet.from_matrix(m)

    def is_complete(self) -> bool:
        return bool((self._m >= 0).all())

    def agrees_with(self, rho) -> bool:
        fixed = self._m >= 0
        return bool(np.all(self._m[fixed] == np.asarray(rho)[fixed]))

    def __eq__(self, other):
        return isinstance(other, DeterminedSet) and np.array_equal(self._m, other._m)

    def __repr__(self):
        return f"DeterminedSet({dict(self.items())})"


@dataclass
class RelaxationSolution:
    eta: float
    s: np.ndarray
    rho_hat: np.ndarray
    p_d: np.ndarray
    kkt_residual: float
    max_violation: float
    is_integral: bool
    duality_gap: float = 0.0
    newton_iters: int = 0
    # sup-norm of the centering gradient over t; dominated by near-active bounds
    stationarity: float = 0.0

    @property
    def upper_bound(self) -> float:
        """Certified bound on the relaxation optimum (primal value plus barrier gap)."""
        return self.eta + self.duality_gap


def perspective_rate(inst: ProblemInstance, l: int, s_row, rho_row) -> float:
    """Relaxed rate of pair ``l``; a term with rho = s = 0 contributes 0."""
    s = np.asarray(s_row, dtype=float)
    r = np.asarray(rho_row, dtype=float)
    if np.any(s < 0) or np.any(r < 0):
        raise ValueError("s and rho must be nonnegative")
    if np.any((r == 0) & (s > 0)):
        raise ValueError("rho = 0 with s > 0 is outside the domain")
    a, b = inst.a[:, l], inst.b[:, l]
    live = r > 0
    q = np.zeros_like(s)
    q[live] = r[live] * s[live] / (a[live] * r[live] + b[live] * s[live])
    return float(np.log2(1.0 + q).sum())


def relaxed_rates(inst: ProblemInstance, s, rho) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    r = np.asarray(rho, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        q = np.where(r > 0, r * s / (inst.a * r + inst.b * s), 0.0)
    return np.log2(1.0 + q).sum(axis=0)


def constraint_violation(inst: ProblemInstance, eta, s, rho) -> float:
    """Largest violation of any relaxation constraint (0 when strictly feasible)."""
    s = np.asarray(s, dtype=float)
    r = np.asarray(rho, dtype=float)
    P = inst.p_budget
    parts = [
        r.sum(axis=1) - 1.0,
        (s.sum(axis=0) - P) / P,
        (s - r * inst.p_cap) / P,
        -s / P,
        -r,
        r - 1.0,
        eta - relaxed_rates(inst, s, r),
    ]
    return float(max(0.0, max(np.max(p) for p in parts)))


def _integral_solution(inst, rfix):
    K, L = inst.K, inst.L
    z = np.zeros((K, L))
    return RelaxationSolution(
        eta=0.0, s=z, rho_hat=rfix.astype(float), p_d=z.copy(), kkt_residual=0.0,
        max_violation=0.0, is_integral=True,
    )


def solve_node_relaxation(
    inst: ProblemInstance,
    det: DeterminedSet,
    *,
    opt_tol: float = OPT_TOL,
    max_newton_iters: int = MAX_NEWTON_ITERS,
    use_numba: bool | None = None,
):
    """Solve the relaxation at a node; returns ``INFEASIBLE`` on a determined conflict."""
    K, L = inst.K, inst.L
    if det.shape != (K, L):
        raise ValueError(f"determined set shape {det.shape} != {(K, L)}")
    dm = det.matrix
    ones = (dm == 1).sum(axis=1)
    if np.any(ones > 1):
        return INFEASIBLE

    # a fixed 1 forces the rest of its channel row to 0
    forced = (ones[:, None] == 1) & (dm < 0)
    rfree = (dm < 0) & ~forced
    rfix = np.where(dm == 1, 1.0, 0.0)
    P = inst.p_budget
    cap = inst.p_cap / P
    sfree = (rfree | (dm == 1)) & (cap > 0)

    if not np.all(sfree.any(axis=0)):
        # some pair has no usable channel: optimum is 0, attained with all free indicators at 0
        return _integral_solution(inst, rfix)

    nfree = rfree.sum(axis=1, keepdims=True)
    r0 = np.where(rfree, np.minimum(0.5, (1.0 - INIT_MARGIN) / np.maximum(nfree, 1)), rfix)
    s0 = np.where(sfree, 0.5 * r0 * np.minimum(cap, 1.0 / K), 0.0)
    a = inst.a / P
    b = inst.b
    rate0 = np.where(sfree, np.log2(1.0 + r0 * s0 / np.where(sfree, a * r0 + b * s0, 1.0)), 0.0)
    eta0 = rate0.sum(axis=0).min() - 1.0

    ne = K * L
    x = np.empty(1 + 2 * ne)
    x[0] = eta0
    x[1 : 1 + ne] = s0.ravel()
    x[1 + ne :] = r0.ravel()
    sf = sfree.ravel().copy()
    rf = rfree.ravel().copy()
    m = _kernels.count_constraints(K, L, sf, rf)

    if use_numba is None:
        use_numba = _jit.USE_NUMBA
    driver = _kernels.newton_barrier_numba if use_numba else _kernels.newton_barrier_numpy
    t, iters, status, dec, stat = driver(
        x, a.ravel().copy(), b.ravel().copy(), cap.ravel().copy(), K, L, sf, rf,
        m, 1.0, 10.0, opt_tol, INNER_TOL, max_newton_iters,
    )
    log.debug("relaxation det=%s iters=%d t=%.1e decrement=%.2e stationarity=%.2e status=%d",
              det.items(), iters, t, dec, stat, status)
    if status != _kernels.STATUS_OK:
        reason = "max Newton iterations reached" if status == _kernels.STATUS_MAX_ITERS else "line search stalled"
        raise SolverError(f"barrier solver failed: {reason}", max(dec, stat))

    eta = float(x[0])
    s = x[1 : 1 + ne].reshape(K, L) * P
    rho = x[1 + ne :].reshape(K, L).copy()
    with np.errstate(invalid="ignore", divide="ignore"):
        p_d = np.where(rho > 0, np.minimum(s / rho, inst.p_cap), 0.0)
    integral = bool(np.all(np.abs(rho - np.round(rho)) <= INTEGRALITY_TOL))
    viol = constraint_violation(inst, eta, s, rho)
    return RelaxationSolution(
        eta=eta,
        s=s,
        rho_hat=rho,
        p_d=p_d,
        # Newton decrement of the last centering step: the affine-invariant
        # distance to the central point whose KKT system holds with gap m/t
        kkt_residual=max(dec, viol),
        max_violation=viol,
        is_integral=integral,
        duality_gap=m / t,
        newton_iters=int(iters),
        stationarity=float(stat),
    )
