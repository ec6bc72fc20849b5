"""Flight map, users, and the average air-to-ground channel.

Everything here is a pure function of immutable scenario data. Internally all
quantities are linear SI (Hz, W, W/Hz, bits, bps); dB/dBm only appear on the
``ChannelParams`` fields and are converted by its properties.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

GridPoint = tuple[int, int, int]


class InvalidPositionError(ValueError):
    """A UAV position is not a member of the flight map."""


class GeometryError(ValueError):
    """Degenerate UAV/user geometry (zero distance or non-positive altitude)."""


@dataclass(frozen=True)
class Position:
    x_m: float
    y_m: float
    z_m: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x_m, self.y_m, self.z_m], dtype=float)


@dataclass(frozen=True)
class GridMap:
    """Lattice ``ΔQ·[i, j, k]`` restricted to the ``w × w`` square and the altitude band."""

    width_m: float = 600.0
    grid_step_m: float = 40.0
    min_alt_m: float = 50.0
    max_alt_m: float = 200.0

    def __post_init__(self):
        if not (self.width_m > 0 and self.grid_step_m > 0):
            raise ValueError("width_m and grid_step_m must be positive")
        if not (0 < self.min_alt_m <= self.max_alt_m):
            raise ValueError("need 0 < min_alt_m <= max_alt_m")
        if self.k_range[0] > self.k_range[1]:
            raise ValueError("no lattice altitude inside [min_alt_m, max_alt_m]")

    @property
    def ij_max(self) -> int:
        return int(math.floor(self.width_m / self.grid_step_m + 1e-9))

    @property
    def k_range(self) -> tuple[int, int]:
        lo = int(math.ceil(self.min_alt_m / self.grid_step_m - 1e-9))
        hi = int(math.floor(self.max_alt_m / self.grid_step_m + 1e-9))
        return lo, hi

    def contains(self, p: GridPoint) -> bool:
        i, j, k = p
        lo, hi = self.k_range
        return 0 <= i <= self.ij_max and 0 <= j <= self.ij_max and lo <= k <= hi

    def points(self) -> list[GridPoint]:
        """All lattice points in lexicographic order."""
        lo, hi = self.k_range
        n = self.ij_max
        return [(i, j, k) for i in range(n + 1) for j in range(n + 1) for k in range(lo, hi + 1)]

    def position(self, p: GridPoint) -> Position:
        if not self.contains(p):
            raise InvalidPositionError(f"grid point {p} is outside the flight map")
        s = self.grid_step_m
        return Position(p[0] * s, p[1] * s, p[2] * s)

    def index_of(self, pos: Position | Sequence[float]) -> GridPoint:
        """Exact lattice index of an on-grid coordinate; raises if off-grid."""
        xyz = pos.as_array() if isinstance(pos, Position) else np.asarray(pos, dtype=float)
        raw = xyz / self.grid_step_m
        idx = np.rint(raw)
        if np.any(np.abs(raw - idx) > 1e-9):
            raise InvalidPositionError(f"{tuple(xyz)} is not a lattice point")
        p = tuple(int(v) for v in idx)
        if not self.contains(p):
            raise InvalidPositionError(f"{tuple(xyz)} is outside the flight map")
        return p

    def snap(self, pos: Position | Sequence[float]) -> GridPoint:
        """Nearest lattice point (per axis, ties towards the lower index), clamped to the map."""
        xyz = pos.as_array() if isinstance(pos, Position) else np.asarray(pos, dtype=float)
        raw = xyz / self.grid_step_m
        idx = np.ceil(raw - 0.5 - 1e-12).astype(int)
        lo, hi = self.k_range
        i = int(np.clip(idx[0], 0, self.ij_max))
        j = int(np.clip(idx[1], 0, self.ij_max))
        k = int(np.clip(idx[2], lo, hi))
        return (i, j, k)


@dataclass(frozen=True)
class UavDynamics:
    max_speed_mps: float = 15.0
    slot_duration_s: float = 3.0

    def __post_init__(self):
        if self.max_speed_mps <= 0 or self.slot_duration_s <= 0:
            raise ValueError("max_speed_mps and slot_duration_s must be positive")

    @property
    def step_m(self) -> float:
        return self.max_speed_mps * self.slot_duration_s


@dataclass(frozen=True)
class ChannelParams:
    env_a: float = 9.64
    env_b: float = 0.06
    excess_los_db: float = 1.0
    excess_nlos_db: float = 40.0
    carrier_hz: float = 2e9
    noise_psd_dbm_hz: float = -173.8
    bandwidth_hz: float = 2e6
    tx_power_dbm: float = 23.0
    # recorded for scenario fidelity; the average-pathloss rate model ignores it
    rician_k: float = 12.0

    def __post_init__(self):
        if self.env_a <= 0 or self.bandwidth_hz <= 0 or self.carrier_hz <= 0:
            raise ValueError("env_a, bandwidth_hz and carrier_hz must be positive")

    @property
    def noise_psd_w_hz(self) -> float:
        return 10.0 ** ((self.noise_psd_dbm_hz - 30.0) / 10.0)

    @property
    def tx_power_w(self) -> float:
        return 10.0 ** ((self.tx_power_dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class User:
    id: int
    position: Position
    start_slot: int
    duration_slots: int
    qos_rate_bps: float = 0.0
    initial_data_bits: float = 1.0

    def __post_init__(self):
        if self.duration_slots < 1:
            raise ValueError("duration_slots must be >= 1")
        if self.qos_rate_bps < 0:
            raise ValueError("qos_rate_bps must be >= 0")
        if not self.initial_data_bits > 0:
            raise ValueError("initial_data_bits must be > 0")


@dataclass(frozen=True)
class EpisodeState:
    """Slot index, UAV position and per-user cumulative bits ``R_i^(0) + Σ_{k<t} R_i^(k)·ΔT``."""

    slot: int
    uav_position: GridPoint
    cumulative_bits: np.ndarray = field(repr=False)

    @classmethod
    def initial(cls, users: Sequence[User], q0: GridPoint) -> "EpisodeState":
        bits = np.array([u.initial_data_bits for u in users], dtype=float)
        return cls(slot=1, uav_position=q0, cumulative_bits=bits)

    def advance(self, position: GridPoint, slot_bits: np.ndarray) -> "EpisodeState":
        return replace(
            self,
            slot=self.slot + 1,
            uav_position=position,
            cumulative_bits=self.cumulative_bits + np.asarray(slot_bits, dtype=float),
        )


# --- reachability ---------------------------------------------------------------


def _as_index(q: Position | GridPoint, grid: GridMap) -> GridPoint:
    if isinstance(q, Position):
        return grid.index_of(q)
    q = tuple(int(v) for v in q)
    if not grid.contains(q):
        raise InvalidPositionError(f"grid point {q} is outside the flight map")
    return q


def move_offsets(dyn: UavDynamics, grid: GridMap) -> list[tuple[int, int, int]]:
    """Lattice offsets within ``v·ΔT`` in lexicographic order (includes the zero move)."""
    r = dyn.step_m / grid.grid_step_m
    n = int(math.floor(r + 1e-9))
    r2 = r * r * (1 + 1e-12)
    return [
        (di, dj, dk)
        for di in range(-n, n + 1)
        for dj in range(-n, n + 1)
        for dk in range(-n, n + 1)
        if di * di + dj * dj + dk * dk <= r2
    ]


def reachable_set(q: Position | GridPoint, dyn: UavDynamics, grid: GridMap) -> list[GridPoint]:
    """Grid points within one slot of flight from ``q``, sorted lexicographically."""
    i, j, k = _as_index(q, grid)
    out = []
    for di, dj, dk in move_offsets(dyn, grid):
        p = (i + di, j + dj, k + dk)
        if grid.contains(p):
            out.append(p)
    return out


# --- activity --------------------------------------------------------------------


def is_active(user: User, slot: int) -> bool:
    return user.start_slot <= slot < user.start_slot + user.duration_slots


def activity_matrix(users: Sequence[User], n_slots: int) -> np.ndarray:
    """Boolean ``(n_slots + 1, I)`` table; row ``t`` is ``d_i^(t)`` (row 0 unused)."""
    t = np.arange(n_slots + 1)[:, None]
    s = np.array([u.start_slot for u in users], dtype=int)[None, :]
    d = np.array([u.duration_slots for u in users], dtype=int)[None, :]
    act = (s <= t) & (t < s + d)
    act[0, :] = False
    return act


# --- channel -------------------------------------------------------------------


def _geometry(q, user_xyz) -> tuple[np.ndarray, np.ndarray]:
    q = np.asarray(q, dtype=float)
    u = np.asarray(user_xyz, dtype=float)
    d = np.linalg.norm(q - u, axis=-1)
    h = q[..., 2] - u[..., 2]
    if np.any(d <= 0):
        raise GeometryError("UAV and user coincide; elevation angle undefined")
    if np.any(h <= 0):
        raise GeometryError("UAV altitude must be above the user")
    theta = np.degrees(np.arcsin(np.clip(h / d, -1.0, 1.0)))
    return d, theta


def _xyz(p) -> np.ndarray:
    if isinstance(p, Position):
        return p.as_array()
    if isinstance(p, User):
        return p.position.as_array()
    return np.asarray(p, dtype=float)


def los_probability_at(theta_deg, ch: ChannelParams):
    return 1.0 / (1.0 + ch.env_a * np.exp(-ch.env_b * (theta_deg - ch.env_a)))


def los_probability(q, user, ch: ChannelParams) -> float:
    """Probability of a line-of-sight link (logistic in the elevation angle, degrees)."""
    _, theta = _geometry(_xyz(q), _xyz(user))
    return float(los_probability_at(theta, ch))


def free_space_db(distance_m, carrier_hz: float):
    return 20.0 * np.log10(4.0 * np.pi * carrier_hz * np.asarray(distance_m, dtype=float) / SPEED_OF_LIGHT)


def average_pathloss_db(q, user, ch: ChannelParams):
    d, theta = _geometry(_xyz(q), _xyz(user))
    p_los = los_probability_at(theta, ch)
    xi = free_space_db(d, ch.carrier_hz) + p_los * ch.excess_los_db + (1.0 - p_los) * ch.excess_nlos_db
    return float(xi) if np.ndim(xi) == 0 else xi


def gain_over_noise(pathloss_db, ch: ChannelParams):
    """``10^(−ξ/10) / N0`` in 1/(W/Hz): SNR per unit PSD."""
    return 10.0 ** (-np.asarray(pathloss_db, dtype=float) / 10.0) / ch.noise_psd_w_hz


def spectral_efficiency(q, user, psd_w_hz: float, ch: ChannelParams) -> float:
    if psd_w_hz < 0:
        raise ValueError("PSD must be non-negative")
    g = gain_over_noise(average_pathloss_db(q, user, ch), ch)
    return float(np.log2(1.0 + psd_w_hz * g))


def data_rate(bandwidth_hz: float, spectral_eff: float, active: bool) -> float:
    if bandwidth_hz < 0:
        raise ValueError("bandwidth must be non-negative")
    return float(active) * bandwidth_hz * spectral_eff


def gain_table(points_xyz: np.ndarray, users: Sequence[User], ch: ChannelParams) -> np.ndarray:
    """Gain-over-noise for every (UAV point, user) pair, shape ``(M, I)``."""
    pts = np.asarray(points_xyz, dtype=float)[:, None, :]
    us = np.array([u.position.as_array() for u in users], dtype=float).reshape(1, -1, 3)
    if us.shape[1] == 0:
        return np.zeros((pts.shape[0], 0))
    xi = average_pathloss_db(pts, us, ch)
    return gain_over_noise(xi, ch)


# --- scenario --------------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    grid: GridMap
    dynamics: UavDynamics
    channel: ChannelParams
    users: tuple[User, ...]
    n_slots: int
    initial_position: GridPoint
    seed: int | None = None

    def __post_init__(self):
        if self.n_slots < 1:
            raise ValueError("n_slots must be >= 1")
        if not self.grid.contains(tuple(self.initial_position)):
            raise InvalidPositionError(f"initial position {self.initial_position} is off the map")

    @property
    def n_users(self) -> int:
        return len(self.users)

    def with_users(self, users: Iterable[User]) -> "Scenario":
        return replace(self, users=tuple(users))

    def to_dict(self) -> dict:
        return {
            "map": {
                "width_m": self.grid.width_m,
                "grid_step_m": self.grid.grid_step_m,
                "min_alt_m": self.grid.min_alt_m,
                "max_alt_m": self.grid.max_alt_m,
            },
            "dynamics": {
                "max_speed_mps": self.dynamics.max_speed_mps,
                "slot_duration_s": self.dynamics.slot_duration_s,
            },
            "channel": {
                name: getattr(self.channel, name)
                for name in ChannelParams.__dataclass_fields__
            },
            "users": [
                {
                    "id": u.id,
                    "position": [u.position.x_m, u.position.y_m],
                    "start_slot": u.start_slot,
                    "duration_slots": u.duration_slots,
                    "qos_rate_bps": u.qos_rate_bps,
                    "initial_data_bits": u.initial_data_bits,
                }
                for u in self.users
            ],
            "T": self.n_slots,
            "initial_position": list(self.initial_position),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        users = tuple(
            User(
                id=int(u["id"]),
                position=Position(float(u["position"][0]), float(u["position"][1]), 0.0),
                start_slot=int(u["start_slot"]),
                duration_slots=int(u["duration_slots"]),
                qos_rate_bps=float(u.get("qos_rate_bps", 0.0)),
                initial_data_bits=float(u.get("initial_data_bits", 1.0)),
            )
            for u in d["users"]
        )
        return cls(
            grid=GridMap(**d.get("map", {})),
            dynamics=UavDynamics(**d.get("dynamics", {})),
            channel=ChannelParams(**d.get("channel", {})),
            users=users,
            n_slots=int(d["T"]),
            initial_position=tuple(int(v) for v in d["initial_position"]),
            seed=d.get("seed"),
        )


class ScenarioModel:
    """Precomputed lookup tables for one scenario: lattice indexing, moves, gains, activity.

    Planners evaluate thousands of positions per slot, so the channel is
    tabulated once over the whole lattice.
    """

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        grid = scenario.grid
        self.points: list[GridPoint] = grid.points()
        self.index: dict[GridPoint, int] = {p: n for n, p in enumerate(self.points)}
        xyz = np.array(self.points, dtype=float) * grid.grid_step_m
        self.gains = gain_table(xyz, scenario.users, scenario.channel)
        self.activity = activity_matrix(scenario.users, scenario.n_slots)
        self.qos = np.array([u.qos_rate_bps for u in scenario.users], dtype=float)
        self.initial_bits = np.array([u.initial_data_bits for u in scenario.users], dtype=float)
        offsets = move_offsets(scenario.dynamics, grid)
        width = len(offsets)
        self.neighbors = np.full((len(self.points), width), -1, dtype=np.int64)
        self.n_neighbors = np.zeros(len(self.points), dtype=np.int64)
        for n, (i, j, k) in enumerate(self.points):
            m = 0
            for di, dj, dk in offsets:
                p = (i + di, j + dj, k + dk)
                if p in self.index:
                    self.neighbors[n, m] = self.index[p]
                    m += 1
            self.n_neighbors[n] = m

    def moves(self, node: int) -> np.ndarray:
        return self.neighbors[node, : self.n_neighbors[node]]
