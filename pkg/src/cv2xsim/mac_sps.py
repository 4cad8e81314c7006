"""Sensing-based semi-persistent scheduling.

Maintains the trailing 1000 ms sensing window, performs resource
(re)selection from it, manages the reselection counter lifecycle, and
computes the channel-occupancy ratio and its congestion limit.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple

import numpy as np

from .channel import RxMeasurement
from .core import Csr, RngStream, dbm_to_mw


@dataclass(frozen=True)
class SpsConfig:
    t1_sf: int = 1
    t2_sf: int = 100
    th_sps_dbm: float = -85.0       # PSSCH-RSRP exemption threshold
    slrrc_min: int = 5
    slrrc_max: int = 15
    p_resel: float = 0.2            # probability the reservation CHANGES at counter expiry
    sensing_window_sf: int = 1000
    keep_fraction: float = 0.20
    rank_period_sf: int = 100       # grid used to project a candidate onto past occurrences
    rank_average: str = "mw"        # "mw" (linear) or "db"
    unsensed_exempt: bool = True    # half-duplex subframes exempt their projected candidates

    def __post_init__(self):
        if not 0 < self.t1_sf <= self.t2_sf:
            raise ValueError("need 0 < t1_sf <= t2_sf")
        if self.slrrc_min > self.slrrc_max or self.slrrc_min < 1:
            raise ValueError("bad slrrc range")
        if not 0.0 <= self.p_resel <= 1.0:
            raise ValueError("p_resel must be in [0, 1]")
        if not 0.0 < self.keep_fraction <= 1.0:
            raise ValueError("keep_fraction must be in (0, 1]")
        if self.rank_average not in ("mw", "db"):
            raise ValueError(f"unknown rank_average {self.rank_average!r}")


@dataclass
class Grant:
    """A semi-persistent reservation: next occurrence, period, remaining uses."""

    next_subframe: int
    subchannel: int
    period_sf: int
    slrrc: int

    @property
    def csr_offset(self) -> tuple[int, int]:
        return (self.next_subframe % self.period_sf, self.subchannel)


class ReservationRecord(NamedTuple):
    """One decoded transmission as seen by every receiver (mask + per-UE RSRP)."""

    subframe: int
    subchannel: int
    tx_ue: int
    period_sf: int
    heard: np.ndarray      # (n_ue,) bool, True where this UE decoded it
    rsrp_dbm: np.ndarray   # (n_ue,) float32


class SensingStore:
    """Rolling per-subframe, per-subchannel channel memory shared by all UEs.

    Rows live in a ring of `span` subframes; a row is valid only while its
    stamped subframe is the one currently mapped to that slot.  Decoded
    reservations are kept as shared records with per-UE visibility masks so
    the store stays small even with hundreds of receivers.
    """

    def __init__(self, n_ue: int, n_subch: int, span: int = 1000,
                 noise_mw: float = 1e-10, keep_rsrp_above_dbm: float = -math.inf):
        self.n_ue = n_ue
        self.n_subch = n_subch
        self.span = span
        self.noise_mw = noise_mw
        self.keep_rsrp_above_dbm = keep_rsrp_above_dbm
        self.srssi_mw = np.full((span, n_ue, n_subch), noise_mw)
        self.sensed = np.zeros((span, n_ue), dtype=bool)
        self.row_subframe = np.full(span, -1, dtype=np.int64)
        self.newest = -1
        self.reservations: deque[ReservationRecord] = deque()

    def record_subframe(self, n: int, srssi_mw: np.ndarray, sensed_mask: np.ndarray,
                        reservations: list[ReservationRecord]) -> None:
        if n < self.newest:
            raise ValueError(f"out-of-order sensing record: {n} < newest {self.newest}")
        row = n % self.span
        self.row_subframe[row] = n
        self.srssi_mw[row] = srssi_mw
        self.sensed[row] = sensed_mask
        self.newest = n
        for rec in reservations:
            if rec.rsrp_dbm[rec.heard].size and rec.rsrp_dbm[rec.heard].max() > self.keep_rsrp_above_dbm:
                self.reservations.append(rec)
        horizon = n - self.span
        while self.reservations and self.reservations[0].subframe <= horizon:
            self.reservations.popleft()

    def oldest_valid(self) -> int:
        return max(0, self.newest - self.span + 1)

    def row_of(self, j: int) -> int | None:
        row = j % self.span
        return row if self.row_subframe[row] == j else None

    def valid_subframes(self, lo: int, hi: int) -> list[int]:
        """Recorded subframes j with lo <= j <= hi, ascending."""
        lo = max(lo, 0)
        return [j for j in range(lo, hi + 1) if self.row_subframe[j % self.span] == j]

    def cbp_counts(self, n: int, window_sf: int, threshold_mw: float):
        """(busy slot count, sensed slot count) per UE over [n-window, n-1]."""
        busy = np.zeros(self.n_ue, dtype=np.int64)
        slots = np.zeros(self.n_ue, dtype=np.int64)
        for j in self.valid_subframes(n - window_sf, n - 1):
            row = j % self.span
            sensed = self.sensed[row]
            slots += sensed * self.n_subch
            busy += np.sum(self.srssi_mw[row] > threshold_mw, axis=1) * sensed
        return busy, slots


class SensingWindow:
    """One UE's view of a SensingStore (its column of measurements and masks)."""

    def __init__(self, store: SensingStore, ue_index: int = 0):
        self.store = store
        self.ue_index = ue_index

    @classmethod
    def standalone(cls, n_subch: int = 2, span: int = 1000, noise_mw: float = 1e-10,
                   keep_rsrp_above_dbm: float = -math.inf) -> "SensingWindow":
        return cls(SensingStore(1, n_subch, span, noise_mw, keep_rsrp_above_dbm), 0)

    def __len__(self) -> int:
        s = self.store
        lo = s.oldest_valid()
        return sum(1 for j in range(lo, s.newest + 1) if s.row_subframe[j % s.span] == j)

    def record(self, n: int, measurement: RxMeasurement) -> None:
        """Add a per-subchannel measurement at subframe n (standalone windows only)."""
        s = self.store
        if n < s.newest:
            raise ValueError(f"out-of-order sensing record: {n} < newest {s.newest}")
        row = n % s.span
        if s.row_subframe[row] != n:
            s.row_subframe[row] = n
            s.srssi_mw[row] = s.noise_mw
            s.sensed[row] = True
        s.newest = n
        subch = measurement.csr.subchannel
        s.srssi_mw[row, self.ue_index, subch] = dbm_to_mw(measurement.srssi_dbm)
        s.sensed[row, self.ue_index] = True
        for src, rsrp, period_ms in measurement.decoded_sources:
            heard = np.zeros(s.n_ue, dtype=bool)
            heard[self.ue_index] = True
            rsrp_v = np.zeros(s.n_ue, dtype=np.float32)
            rsrp_v[self.ue_index] = rsrp
            if rsrp > s.keep_rsrp_above_dbm:
                s.reservations.append(ReservationRecord(n, subch, src, period_ms, heard, rsrp_v))
        horizon = n - s.span
        while s.reservations and s.reservations[0].subframe <= horizon:
            s.reservations.popleft()

    def mark_transmitted(self, n: int) -> None:
        """Flag subframe n as UNSENSED: the owner was transmitting (half-duplex)."""
        s = self.store
        if n < s.newest:
            raise ValueError(f"out-of-order sensing record: {n} < newest {s.newest}")
        row = n % s.span
        if s.row_subframe[row] != n:
            s.row_subframe[row] = n
            s.srssi_mw[row] = s.noise_mw
            s.sensed[row] = True
            s.newest = n
        s.sensed[row, self.ue_index] = False

    def is_sensed(self, j: int) -> bool | None:
        row = self.store.row_of(j)
        return None if row is None else bool(self.store.sensed[row, self.ue_index])


def record_observation(window: SensingWindow, n: int, measurement: RxMeasurement) -> SensingWindow:
    """Store one subchannel measurement; entries older than the span are evicted."""
    window.record(n, measurement)
    return window


@dataclass
class SelectionResult:
    candidates: list[Csr]      # surviving, lowest-ranked resources (the keep set)
    escalations: int           # number of 3 dB threshold raises that were needed
    threshold_dbm: float       # working exemption threshold actually used
    pool_size: int             # size of the initial candidate set


def _projected_candidates(j: int, period: int, lo: int, hi: int):
    """Future subframes t in [lo, hi] with t = j + m*period, m >= 1."""
    if period <= 0:
        return
    m = (lo - j + period - 1) // period
    if m < 1:
        m = 1
    t = j + m * period
    while t <= hi:
        yield t
        t += period


def select_candidates(window: SensingWindow, n: int, cfg: SpsConfig, *,
                      n_subch: int | None = None, own_period_sf: int = 100) -> SelectionResult:
    """Run the selection pipeline and return the final candidate set.

    1. Pool every resource in the selection window [n+T1, n+T2].
    2. Exempt resources whose past occurrences (congruent modulo the
       reserving UE's announced period) carry a decoded reservation above the
       working threshold; when enabled, also exempt resources projecting onto
       subframes this UE could not sense because it was transmitting (the
       projection uses the UE's own reservation period).
    3. While fewer than keep_fraction of the pool survives, raise the working
       threshold by 3 dB and redo step 2.  Once no reservation clears the
       threshold, the half-duplex exemptions are lifted as well so the loop
       always terminates.
    4. Rank survivors by average S-RSSI over their past projections
       (most recent first; unsensed occurrences skipped, no data counts as
       noise floor) and keep the lowest ceil(keep_fraction * pool) of them.
       Ties at the keep boundary are kept, so indistinguishable resources
       stay equally likely.
    """
    store = window.store
    ue = window.ue_index
    n_subch = store.n_subch if n_subch is None else n_subch
    lo, hi = n + cfg.t1_sf, n + cfg.t2_sf
    pool = [Csr(t, c) for t in range(lo, hi + 1) for c in range(n_subch)]
    need = math.ceil(cfg.keep_fraction * len(pool))
    oldest = store.oldest_valid()

    # Reservations heard in the same congruence class exempt the same future
    # resources, so only the strongest occurrence per class matters at every
    # threshold level.
    classes: dict[tuple[int, int, int], float] = {}
    for rec in store.reservations:
        if oldest <= rec.subframe < n and rec.heard[ue]:
            key = (rec.subframe % rec.period_sf, rec.subchannel, rec.period_sf)
            rsrp = float(rec.rsrp_dbm[ue])
            if classes.get(key, -math.inf) < rsrp:
                classes[key] = rsrp

    unsensed_exempt: set[Csr] = set()
    if cfg.unsensed_exempt:
        for j in store.valid_subframes(max(oldest, n - store.span), n - 1):
            if not store.sensed[j % store.span, ue]:
                for t in _projected_candidates(j, own_period_sf, lo, hi):
                    for c in range(n_subch):
                        unsensed_exempt.add(Csr(t, c))

    threshold = cfg.th_sps_dbm
    escalations = 0
    while True:
        rsrp_exempt: set[Csr] = set()
        for (residue, c, period), rsrp in classes.items():
            if rsrp > threshold:
                first = lo + (residue - lo) % period
                for t in range(first, hi + 1, period):
                    rsrp_exempt.add(Csr(t, c))
        survivors = [csr for csr in pool if csr not in rsrp_exempt and csr not in unsensed_exempt]
        if len(survivors) >= need:
            break
        if not rsrp_exempt:
            # threshold exhausted; lifting the half-duplex exemptions is the
            # only remaining way to reach the required pool fraction
            survivors = list(pool)
            break
        threshold += 3.0
        escalations += 1

    ranked = sorted(((_rank_metric(window, csr, cfg, oldest, n - 1),
                      csr.subframe, csr.subchannel, csr)
                     for csr in survivors), key=lambda e: e[:3])
    cut = ranked[min(need, len(ranked)) - 1][0]
    kept = [e[3] for e in ranked if e[0] <= cut]
    return SelectionResult(kept, escalations, threshold, len(pool))


def _rank_metric(window: SensingWindow, csr: Csr, cfg: SpsConfig, oldest: int,
                 latest: int) -> float:
    """Average S-RSSI over the candidate's past projections, newest first.
    Only subframes strictly before the selection instant count."""
    store, ue = window.store, window.ue_index
    values = []
    j = csr.subframe - cfg.rank_period_sf
    while j >= oldest:
        if j <= latest:
            row = store.row_of(j)
            if row is not None and store.sensed[row, ue]:
                v = float(store.srssi_mw[row, ue, csr.subchannel])
                values.append(v if cfg.rank_average == "mw" else 10.0 * math.log10(v))
        j -= cfg.rank_period_sf
    if not values:
        return store.noise_mw if cfg.rank_average == "mw" else 10.0 * math.log10(store.noise_mw)
    return sum(values) / len(values)


def select_resource(window: SensingWindow, n: int, cfg: SpsConfig, rng: RngStream, *,
                    n_subch: int | None = None, own_period_sf: int = 100) -> Csr:
    """Pick uniformly at random from the selection pipeline's candidate set."""
    result = select_candidates(window, n, cfg, n_subch=n_subch, own_period_sf=own_period_sf)
    return rng.choice(result.candidates)


def on_transmission(grant: Grant, rng: RngStream, cfg: SpsConfig) -> Grant | None:
    """Advance the reselection counter after a transmission.

    Returns the updated grant, or None when the reservation must change
    (counter expired and the change probability fired).  A kept grant whose
    counter expired gets a fresh counter drawn uniformly from the range.
    """
    if grant.slrrc < 1:
        raise ValueError("on_transmission called with an expired counter")
    slrrc = grant.slrrc - 1
    if slrrc > 0:
        return replace(grant, slrrc=slrrc)
    if rng.random() < cfg.p_resel:
        return None
    return replace(grant, slrrc=rng.randint(cfg.slrrc_min, cfg.slrrc_max))


def compute_cr(n: int, pool: np.ndarray, used: np.ndarray, window: tuple[int, int]) -> float:
    """Channel-occupancy ratio over a half-open window [tau1, tau2).

    `pool` and `used` are (tau2 - tau1, n_subch) indicator tables: membership
    of each subchannel slot in the UE's resource pool and whether the UE used
    or reserved it.  The window must cover exactly 1000 subframes and straddle
    n with its majority in the past.
    """
    tau1, tau2 = window
    if tau2 - tau1 != 1000:
        raise ValueError("occupancy window must cover exactly 1000 subframes")
    if n - tau1 <= (tau2 - tau1) / 2:
        raise ValueError("occupancy window must have its majority in the past of n")
    pool = np.asarray(pool)
    used = np.asarray(used)
    if pool.shape != used.shape or pool.shape[0] != tau2 - tau1:
        raise ValueError("pool/used tables must both cover the window")
    denom = int(pool.sum())
    if denom == 0:
        raise ValueError("resource pool is empty over the window")
    return float((pool * used).sum()) / denom


def cr_limit(cbp: float, cbp_limit: float, f_inv: Callable[[float], float]) -> float:
    """Occupancy cap from busy-fraction feedback: cbp_limit / f_inv(cbp) when
    the measured busy fraction exceeds the limit, otherwise 1 (no cap)."""
    if not 0.0 <= cbp <= 1.0 or not 0.0 <= cbp_limit <= 1.0:
        raise ValueError("cbp and cbp_limit must be in [0, 1]")
    if cbp <= cbp_limit:
        return 1.0
    density = f_inv(cbp)
    if density == 0:
        raise ValueError("calibration maps this busy fraction to zero density")
    return cbp_limit / density


class CbpDensityTable:
    """Piecewise-linear calibration between busy fraction and neighbor count.

    Built from (cbp, density) points; calling the table inverts the mapping
    (busy fraction in [0, 1] to an interpolated vehicle count).
    """

    def __init__(self, points: list[tuple[float, float]]):
        if len(points) < 2:
            raise ValueError("need at least two calibration points")
        pts = sorted(points)
        self.cbp = np.array([p[0] for p in pts])
        self.density = np.array([p[1] for p in pts])
        if np.any(np.diff(self.cbp) <= 0):
            raise ValueError("calibration busy fractions must be strictly increasing")

    def __call__(self, cbp: float) -> float:
        return float(np.interp(cbp, self.cbp, self.density))
