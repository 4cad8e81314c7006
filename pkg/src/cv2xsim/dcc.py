"""Distributed congestion control: transmission rate control driven by
neighbor density, transmission range control driven by channel busy
percentage, and the position-tracking-error transmit trigger."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .core import Position, RoadGeometry, dbm_to_mw, distance
from .mac_sps import SensingWindow


@dataclass(frozen=True)
class RateControlConfig:
    density_coefficient: float = 25.0   # vehicle count where the rate starts stretching
    itt_max_ms: float = 600.0
    smoothing: float = 0.5              # single-step memory weight on the new sample
    neighbor_radius_m: float = 100.0
    pte_threshold_m: float = 0.5
    pte_enabled: bool = True
    pte_wait_limit_ms: int = 20         # ride the existing grant if it lands this soon

    def __post_init__(self):
        if self.density_coefficient <= 0:
            raise ValueError("density_coefficient must be positive")
        if self.itt_max_ms < 100.0:
            raise ValueError("itt_max_ms must be at least 100 ms")


@dataclass(frozen=True)
class RangeControlConfig:
    p_min_dbm: float = 10.0
    p_max_dbm: float = 23.0
    u_min_pct: float = 50.0
    u_max_pct: float = 80.0
    eta: float = 0.5

    def __post_init__(self):
        if self.p_min_dbm > self.p_max_dbm:
            raise ValueError("p_min_dbm must not exceed p_max_dbm")
        if self.u_min_pct >= self.u_max_pct:
            raise ValueError("u_min_pct must be below u_max_pct")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must be in (0, 1]")


@dataclass
class DccState:
    """Per-UE congestion controller state."""

    n_sta_smoothed: float = 0.0
    itt_ms: float = 100.0
    power_dbm: float = 23.0
    last_tx_time: int = -(10 ** 9)
    last_broadcast: tuple[float, float, int] | None = None  # (x, speed, subframe)
    cbp_pct: float = 0.0


def measure_cbp(window: SensingWindow, n: int, rssi_threshold_dbm: float,
                cbp_window_sf: int = 100) -> float:
    """Busy percentage over the trailing window: the share of sensed
    subchannel slots whose S-RSSI exceeds the threshold.  Subframes the owner
    spent transmitting contribute to neither count."""
    busy, slots = window.store.cbp_counts(n, cbp_window_sf, dbm_to_mw(rssi_threshold_dbm))
    b, s = int(busy[window.ue_index]), int(slots[window.ue_index])
    if s == 0:
        raise ValueError("no sensed slots in the busy-measurement window")
    return 100.0 * b / s


def count_neighbors(host: Position, others: list[Position], radius_m: float,
                    geometry: RoadGeometry) -> int:
    """Vehicles within radius_m of host (boundary inclusive), host excluded."""
    if radius_m <= 0:
        raise ValueError("radius_m must be positive")
    return sum(1 for p in others
               if p is not host and distance(host, p, geometry) <= radius_m)


def smooth_density(n_new: float, n_prev_smoothed: float) -> float:
    """Single-step memory with a 1/2 smoothing factor."""
    return (n_new + n_prev_smoothed) / 2.0


def compute_itt(n_sta_smoothed: float, cfg: RateControlConfig) -> float:
    """Inter-transmit time in ms from the smoothed neighbor count.

    Flat at 100 ms up to the density coefficient, then linear, then capped at
    itt_max_ms once the count reaches (itt_max / 100 ms) times the coefficient.
    """
    if n_sta_smoothed < 0:
        raise ValueError("neighbor count cannot be negative")
    b = cfg.density_coefficient
    if n_sta_smoothed <= b:
        return 100.0
    if n_sta_smoothed < (cfg.itt_max_ms / 100.0) * b:
        return (n_sta_smoothed / b) * 100.0
    return cfg.itt_max_ms


def power_target(cbp_pct: float, cfg: RangeControlConfig) -> float:
    """Piecewise-linear busy-percentage-to-power map: full power below u_min,
    minimum power at and above u_max, linear in between."""
    if cbp_pct < cfg.u_min_pct:
        return cfg.p_max_dbm
    if cbp_pct >= cfg.u_max_pct:
        return cfg.p_min_dbm
    frac = (cfg.u_max_pct - cbp_pct) / (cfg.u_max_pct - cfg.u_min_pct)
    return cfg.p_min_dbm + frac * (cfg.p_max_dbm - cfg.p_min_dbm)


def update_power(p_k_dbm: float, cbp_pct: float, cfg: RangeControlConfig) -> float:
    """One smoothed step of the power feedback loop:
    p_{k+1} = p_k + eta * (target(cbp) - p_k)."""
    return p_k_dbm + cfg.eta * (power_target(cbp_pct, cfg) - p_k_dbm)


def update_pte(actual: tuple[float, float], last_broadcast: tuple[float, float, int],
               now: int, geometry: RoadGeometry, lane: int = 0) -> float:
    """Position tracking error: how far the vehicle has drifted from the
    constant-velocity extrapolation of its last broadcast state.

    `actual` is (x, speed); `last_broadcast` is (x, speed, subframe).
    """
    bx, bv, bt = last_broadcast
    if now < bt:
        raise ValueError("now precedes the last broadcast")
    dt_s = (now - bt) / 1000.0
    predicted_x = geometry.wrap_x(bx + bv * dt_s)
    return distance(Position(geometry.wrap_x(actual[0]), lane),
                    Position(predicted_x, lane), geometry)


def should_transmit(state: DccState, pte_m: float, now: int, cfg: RateControlConfig) -> bool:
    """True when the rate timer expired or the tracking error forces an update."""
    if now - state.last_tx_time >= state.itt_ms:
        return True
    return cfg.pte_enabled and pte_m > cfg.pte_threshold_m


@dataclass(frozen=True)
class DccScheme:
    """A named congestion-control configuration; baseline disables everything
    (fixed 100 ms rate, fixed maximum power, no tracking-error trigger)."""

    name: str
    enabled: bool = True
    rate: RateControlConfig = field(default_factory=RateControlConfig)
    range: RangeControlConfig = field(default_factory=RangeControlConfig)
    slrrc_min: int | None = None    # optional MAC overrides
    slrrc_max: int | None = None
    p_resel: float | None = None


def _scheme(name, p_max, p_min, u_max, u_min, b, **kw):
    return DccScheme(name=name,
                     rate=RateControlConfig(density_coefficient=b),
                     range=RangeControlConfig(p_min_dbm=p_min, p_max_dbm=p_max,
                                              u_min_pct=u_min, u_max_pct=u_max),
                     **kw)


SCHEMES: dict[str, DccScheme] = {
    "baseline": DccScheme(name="baseline", enabled=False,
                          rate=RateControlConfig(pte_enabled=False)),
    "dcc-std": _scheme("dcc-std", p_max=23.0, p_min=10.0, u_max=80.0, u_min=50.0, b=25.0),
    "dcc-1": _scheme("dcc-1", p_max=23.0, p_min=23.0, u_max=80.0, u_min=50.0, b=25.0),
    "dcc-2": _scheme("dcc-2", p_max=23.0, p_min=10.0, u_max=50.0, u_min=30.0, b=25.0),
    "dcc-3": _scheme("dcc-3", p_max=23.0, p_min=5.0, u_max=50.0, u_min=30.0, b=25.0),
    "dcc-4": _scheme("dcc-4", p_max=23.0, p_min=5.0, u_max=50.0, u_min=30.0, b=35.0),
    "dcc-5": _scheme("dcc-5", p_max=23.0, p_min=5.0, u_max=50.0, u_min=30.0, b=45.0),
    "dcc-6": _scheme("dcc-6", p_max=23.0, p_min=5.0, u_max=50.0, u_min=30.0, b=55.0),
    "dcc-7": _scheme("dcc-7", p_max=23.0, p_min=0.0, u_max=50.0, u_min=30.0, b=45.0,
                     slrrc_min=1, slrrc_max=5, p_resel=0.2),
}


def scheme_by_name(name: str) -> DccScheme:
    try:
        return SCHEMES[name]
    except KeyError:
        raise KeyError(f"unknown scheme {name!r}; available: {', '.join(SCHEMES)}") from None
