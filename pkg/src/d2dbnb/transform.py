"""Elimination of the CU powers.

With the CU rate constraint held at equality, the CU power is a known affine
function of the D2D power on its channel. Substituting it leaves a problem in
the D2D powers and channel indicators only, whose per-channel rate is
``log2(1 + rho * p / (a + b * p))``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scenario import Scenario


@dataclass
class ProblemInstance:
    """Coefficients of the reduced max-min problem. ``a`` and ``p_cap`` are in mW."""

    a: np.ndarray
    b: np.ndarray
    p_cap: np.ndarray
    p_budget: float
    r_min_cu: float
    scenario: Scenario | None = field(default=None, repr=False, compare=False)
    instance_id: str = ""

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.p_cap = np.asarray(self.p_cap, dtype=float)
        if not (self.a.shape == self.b.shape == self.p_cap.shape) or self.a.ndim != 2:
            raise ValueError("a, b, p_cap must share one (K, L) shape")
        if np.any(self.a <= 0) or np.any(self.b < 0) or np.any(self.p_cap < 0):
            raise ValueError("need a > 0, b >= 0, p_cap >= 0")
        if self.p_budget <= 0:
            raise ValueError("p_budget must be positive")

    @property
    def K(self) -> int:
        return self.a.shape[0]

    @property
    def L(self) -> int:
        return self.a.shape[1]

    def rates(self, rho, p_d) -> np.ndarray:
        """Per-pair rate for an integral assignment ``rho`` and powers ``p_d``."""
        rho = np.asarray(rho, dtype=float)
        p_d = np.asarray(p_d, dtype=float)
        return np.log2(1.0 + rho * p_d / (self.a + self.b * p_d)).sum(axis=0)

    def objective(self, rho, p_d) -> float:
        return float(self.rates(rho, p_d).min())

    def is_feasible(self, rho, p_d, tol=1e-9) -> bool:
        rho = np.asarray(rho)
        p_d = np.asarray(p_d, dtype=float)
        if not np.all((rho == 0) | (rho == 1)):
            return False
        if np.any(rho.sum(axis=1) > 1):
            return False
        if np.any(p_d < -tol) or np.any(p_d > self.p_cap * (1 + tol) + tol):
            return False
        return bool(np.all((rho * p_d).sum(axis=0) <= self.p_budget * (1 + tol) + tol))


def _rate_gap(r_min_cu: float) -> float:
    return 2.0 ** r_min_cu - 1.0


def max_reuse_power(sc: Scenario, k: int, l: int) -> float:
    """Largest D2D power on channel ``k`` that keeps CU ``k`` within its power cap.

    Clamped at zero when the CU has no headroom for interference.
    """
    gap = _rate_gap(sc.r_min_cu)
    if gap <= 0:
        raise ValueError("max_reuse_power needs r_min_cu > 0")
    head = (sc.p_max_cu_mw * sc.g_cb[k] / gap - sc.noise_mw) / sc.g_db[l]
    return float(max(0.0, min(head, sc.p_max_d2d_mw)))


def cu_power_for(sc: Scenario, k: int, l: int, p_d: float, tol: float = 1e-9) -> float:
    """CU power that meets the rate floor exactly under D2D power ``p_d``."""
    gap = _rate_gap(sc.r_min_cu)
    if gap > 0:
        cap = max_reuse_power(sc, k, l)
        if p_d < 0 or p_d > cap * (1 + tol) + tol:
            raise ValueError(f"p_d={p_d} outside [0, {cap}]")
    elif p_d < 0:
        raise ValueError("p_d must be nonnegative")
    return float(gap * (sc.noise_mw + p_d * sc.g_db[l]) / sc.g_cb[k])


def compute_coefficients(sc: Scenario, instance_id: str = "") -> ProblemInstance:
    gap = _rate_gap(sc.r_min_cu)
    s2 = sc.noise_mw
    hd = sc.g_d[None, :]
    hcb = sc.g_cb[:, None]
    a = s2 / hd + gap * sc.g_cd * s2 / (hd * hcb)
    b = gap * sc.g_cd * sc.g_db[None, :] / (hd * hcb)
    if gap > 0:
        head = (sc.p_max_cu_mw * hcb / gap - s2) / sc.g_db[None, :]
        p_cap = np.clip(head, 0.0, sc.p_max_d2d_mw)
    else:
        # no rate floor: the CU can transmit at zero power, so only the device cap binds
        p_cap = np.full(a.shape, sc.p_max_d2d_mw)
    return ProblemInstance(
        a=a,
        b=b,
        p_cap=p_cap,
        p_budget=sc.p_max_d2d_mw,
        r_min_cu=sc.r_min_cu,
        scenario=sc,
        instance_id=instance_id,
    )


def pair_rate(inst: ProblemInstance, k: int, l: int, rho: int, p_d: float) -> float:
    """Rate of pair ``l`` on channel ``k`` in bit/s/Hz."""
    if p_d < 0:
        raise ValueError("p_d must be nonnegative")
    if not rho:
        return 0.0
    return float(np.log2(1.0 + p_d / (inst.a[k, l] + inst.b[k, l] * p_d)))


def direct_pair_rate(sc: Scenario, k: int, l: int, p_d: float) -> float:
    """Same rate computed from the raw SINR with the CU power substituted in."""
    p_c = cu_power_for(sc, k, l, p_d)
    sinr = p_d * sc.g_d[l] / (sc.noise_mw + p_c * sc.g_cd[k, l])
    return float(np.log2(1.0 + sinr))
