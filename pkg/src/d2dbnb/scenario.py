"""Random single-cell D2D network snapshots and their channel power gains."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

CELLULAR = "cellular"
D2D = "d2d"


@dataclass(frozen=True)
class ScenarioConfig:
    K: int = 5
    L: int = 2
    cell_radius_m: float = 500.0
    d2d_dist_min_m: float = 15.0
    d2d_dist_max_m: float = 50.0
    noise_density_dbm_per_hz: float = -174.0
    bandwidth_hz: float = 1e6
    shadow_std_db: float = 10.0
    p_max_cu_dbm: float = 20.0
    p_max_d2d_dbm: float = 20.0
    r_min_cu: float = 2.0
    rng_seed: int = 0
    # True: rx-tx distance uniform on [min, max]; False: rx uniform over the annulus area
    uniform_radius: bool = True
    max_redraws: int = 1000

    def __post_init__(self):
        if self.K < 1 or self.L < 1:
            raise ValueError(f"need K >= 1 and L >= 1, got K={self.K}, L={self.L}")
        if not 0 < self.d2d_dist_min_m < self.d2d_dist_max_m < self.cell_radius_m:
            raise ValueError(
                "need 0 < d2d_dist_min_m < d2d_dist_max_m < cell_radius_m, got "
                f"{self.d2d_dist_min_m}, {self.d2d_dist_max_m}, {self.cell_radius_m}"
            )
        if self.bandwidth_hz <= 0:
            raise ValueError("bandwidth_hz must be positive")
        if self.r_min_cu < 0:
            raise ValueError("r_min_cu must be nonnegative")
        if self.max_redraws < 1:
            raise ValueError("max_redraws must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown ScenarioConfig fields: {sorted(unknown)}")
        return cls(**d)


@dataclass(eq=False)
class Scenario:
    """One network snapshot. Gains are linear, powers in mW, positions in m.

    ``g_cd[k, l]`` is the gain from CU ``k`` to the receiver of pair ``l``.
    """

    cu_pos: np.ndarray
    d2d_tx_pos: np.ndarray
    d2d_rx_pos: np.ndarray
    g_cb: np.ndarray
    g_cd: np.ndarray
    g_d: np.ndarray
    g_db: np.ndarray
    noise_mw: float
    p_max_cu_mw: float
    p_max_d2d_mw: float
    r_min_cu: float
    config: ScenarioConfig | None = field(default=None, compare=False)

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        arrays = ("cu_pos", "d2d_tx_pos", "d2d_rx_pos", "g_cb", "g_cd", "g_d", "g_db")
        scalars = ("noise_mw", "p_max_cu_mw", "p_max_d2d_mw", "r_min_cu")
        return all(np.array_equal(getattr(self, f), getattr(other, f)) for f in arrays) and all(
            getattr(self, f) == getattr(other, f) for f in scalars
        )

    @property
    def K(self) -> int:
        return int(self.g_cb.shape[0])

    @property
    def L(self) -> int:
        return int(self.g_d.shape[0])

    def cu_feasible(self) -> np.ndarray:
        """Per-CU check that the rate floor is reachable with no D2D reuse."""
        need = (2.0 ** self.r_min_cu - 1.0) * self.noise_mw / self.g_cb
        return need <= self.p_max_cu_mw


def dbm_to_mw(dbm):
    return 10.0 ** (np.asarray(dbm, dtype=float) / 10.0)


def noise_power(noise_density_dbm_per_hz: float, bandwidth_hz: float) -> float:
    """Thermal noise power in mW over ``bandwidth_hz``."""
    if bandwidth_hz <= 0:
        raise ValueError("bandwidth_hz must be positive")
    dbm = noise_density_dbm_per_hz + 10.0 * np.log10(bandwidth_hz)
    return float(10.0 ** (dbm / 10.0))


def pathloss_db(distance_m, kind: str):
    d = np.asarray(distance_m, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    d_km = d / 1000.0
    if kind == CELLULAR:
        return 128.1 + 37.6 * np.log10(d_km)
    if kind == D2D:
        return 148.0 + 40.0 * np.log10(d_km)
    raise ValueError(f"unknown link kind {kind!r}")


def link_gain(distance_m, kind: str, shadow_db=0.0):
    """Linear channel power gain: path loss plus a (pre-drawn) shadowing term in dB.

    Works elementwise on arrays; returns a float for scalar input.
    """
    loss = pathloss_db(distance_m, kind) + np.asarray(shadow_db, dtype=float)
    g = 10.0 ** (-loss / 10.0)
    return float(g) if np.ndim(g) == 0 else g


def _uniform_disk(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    r = radius * np.sqrt(rng.random(n))
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)])


def _ring_offsets(rng, n, r_min, r_max, uniform_radius):
    u = rng.random(n)
    if uniform_radius:
        r = r_min + (r_max - r_min) * u
    else:
        r = np.sqrt(r_min**2 + (r_max**2 - r_min**2) * u)
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)])


def _draw(cfg: ScenarioConfig, rng: np.random.Generator, noise_mw: float) -> Scenario:
    K, L = cfg.K, cfg.L
    cu = _uniform_disk(rng, K, cfg.cell_radius_m)
    tx = _uniform_disk(rng, L, cfg.cell_radius_m)
    rx = tx + _ring_offsets(rng, L, cfg.d2d_dist_min_m, cfg.d2d_dist_max_m, cfg.uniform_radius)

    sd = cfg.shadow_std_db
    d_cb = np.linalg.norm(cu, axis=1)
    d_db = np.linalg.norm(tx, axis=1)
    d_d = np.linalg.norm(rx - tx, axis=1)
    d_cd = np.linalg.norm(cu[:, None, :] - rx[None, :, :], axis=2)

    g_cb = link_gain(d_cb, CELLULAR, rng.normal(0.0, sd, K))
    g_db = link_gain(d_db, CELLULAR, rng.normal(0.0, sd, L))
    g_d = link_gain(d_d, D2D, rng.normal(0.0, sd, L))
    g_cd = link_gain(d_cd, D2D, rng.normal(0.0, sd, (K, L)))
    return Scenario(
        cu_pos=cu,
        d2d_tx_pos=tx,
        d2d_rx_pos=rx,
        g_cb=np.atleast_1d(g_cb),
        g_cd=np.atleast_2d(g_cd).reshape(K, L),
        g_d=np.atleast_1d(g_d),
        g_db=np.atleast_1d(g_db),
        noise_mw=noise_mw,
        p_max_cu_mw=float(dbm_to_mw(cfg.p_max_cu_dbm)),
        p_max_d2d_mw=float(dbm_to_mw(cfg.p_max_d2d_dbm)),
        r_min_cu=cfg.r_min_cu,
        config=cfg,
    )


def generate_scenario(config: ScenarioConfig) -> Scenario:
    """Draw one scenario, redrawing until every CU can meet its rate floor alone."""
    rng = np.random.default_rng(config.rng_seed)
    noise = noise_power(config.noise_density_dbm_per_hz, config.bandwidth_hz)
    for _ in range(config.max_redraws):
        sc = _draw(config, rng, noise)
        ok = np.all(np.isfinite(sc.g_cd)) and np.all(sc.g_cd > 0)
        if ok and np.all(sc.cu_feasible()):
            return sc
    raise RuntimeError(
        f"cannot generate feasible scenario after {config.max_redraws} draws"
    )


def generate_many(config: ScenarioConfig, n: int) -> list[Scenario]:
    """``n`` scenarios with per-scenario seeds spawned from ``config.rng_seed``."""
    seeds = np.random.SeedSequence(config.rng_seed).generate_state(n, dtype=np.uint32)
    return [generate_scenario(dataclasses.replace(config, rng_seed=int(s))) for s in seeds]
