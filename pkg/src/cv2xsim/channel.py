"""Propagation and reception: pathloss, shadowing, SINR, decode outcomes, and
the S-RSSI / PSSCH-RSRP measurements consumed by sensing and congestion control."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Sequence

import numpy as np

from .core import Csr, Position, RngStream, RoadGeometry, dbm_to_mw


@dataclass(frozen=True)
class ChannelModel:
    """Dual-slope log-distance channel with lognormal shadowing.

    Pathloss follows exponent `exponent` from the reference distance out to
    `breakpoint_m` and `exponent_beyond` past it (set breakpoint_m=None for a
    single slope).  Distances under d0 clamp to the reference loss.
    """

    d0_m: float = 10.0
    pl0_db: float = 67.8            # free-space loss at 10 m, 5.86 GHz
    exponent: float = 2.0
    breakpoint_m: float | None = 150.0
    exponent_beyond: float = 3.8
    shadowing_sigma_db: float = 3.0
    shadowing_mode: str = "iid"     # "iid" per (tx, rx, subframe) or "static" per pair
    fading: str = "none"            # "none" | "nakagami"
    nakagami_m: float = 3.0
    noise_floor_dbm: float = -98.0
    sensitivity_dbm: float = -92.0
    sinr_threshold_db: float = 2.5  # decode threshold for the configured MCS

    def __post_init__(self):
        if self.d0_m <= 0:
            raise ValueError("d0_m must be positive")
        if self.exponent <= 0 or self.exponent_beyond <= 0:
            raise ValueError("pathloss exponents must be positive")
        if self.shadowing_sigma_db < 0:
            raise ValueError("shadowing_sigma_db must be non-negative")
        if self.sensitivity_dbm < self.noise_floor_dbm:
            raise ValueError("sensitivity_dbm must be at or above noise_floor_dbm")
        if self.shadowing_mode not in ("iid", "static"):
            raise ValueError(f"unknown shadowing_mode {self.shadowing_mode!r}")
        if self.fading not in ("none", "nakagami"):
            raise ValueError(f"unknown fading {self.fading!r}")

    @property
    def noise_mw(self) -> float:
        return float(dbm_to_mw(self.noise_floor_dbm))


def pathloss(d_m, model: ChannelModel):
    """Pathloss in dB at distance d_m (scalar or array), clamped below d0."""
    d = np.maximum(np.asarray(d_m, dtype=float), model.d0_m)
    pl = model.pl0_db + 10.0 * model.exponent * np.log10(d / model.d0_m)
    if model.breakpoint_m is not None:
        bp = max(model.breakpoint_m, model.d0_m)
        pl_bp = model.pl0_db + 10.0 * model.exponent * np.log10(bp / model.d0_m)
        beyond = pl_bp + 10.0 * model.exponent_beyond * np.log10(d / bp)
        pl = np.where(d > bp, beyond, pl)
    return float(pl) if np.isscalar(d_m) or np.ndim(d_m) == 0 else pl


def received_power(tx_dbm, d_m, shadow_db, fade_db, model: ChannelModel):
    """Link budget: tx - pathloss(d) - shadow - fade, all in dB domain."""
    return tx_dbm - pathloss(d_m, model) - shadow_db - fade_db


class Outcome(IntEnum):
    DECODED = 0
    COLLIDED = 1
    BELOW_SENSITIVITY = 2
    HALF_DUPLEX_BLOCKED = 3


@dataclass(frozen=True)
class Transmission:
    """One broadcast attempt: who, where on the grid, at what power, from where."""

    ue: int
    csr: Csr
    power_dbm: float
    position: Position
    reservation_period_ms: int = 100


@dataclass(frozen=True)
class RxOutcome:
    tx_ue: int
    rx_ue: int
    csr: Csr
    outcome: Outcome
    rx_power_dbm: float
    sinr_db: float | None
    distance_m: float


@dataclass(frozen=True)
class RxMeasurement:
    """Per-receiver, per-subchannel channel observation for one subframe."""

    csr: Csr
    srssi_dbm: float
    decoded_sources: tuple = ()   # (ue, rsrp_dbm, reservation_period_ms) triples


class ReceiverSet:
    """Receiver ids and coordinates as arrays, reusable across subframes."""

    def __init__(self, ids: np.ndarray, x: np.ndarray, y: np.ndarray):
        self.ids = np.asarray(ids)
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self._index = {int(u): i for i, u in enumerate(self.ids)}

    @classmethod
    def from_positions(cls, entries: Sequence[tuple[int, Position]], geometry: RoadGeometry):
        ids = np.array([ue for ue, _ in entries], dtype=int)
        x = np.array([p.x for _, p in entries], dtype=float)
        y = np.array([p.y(geometry) for _, p in entries], dtype=float)
        return cls(ids, x, y)

    def index_of(self, ue: int) -> int:
        return self._index[ue]

    def __len__(self):
        return len(self.ids)


@dataclass
class SubframeResolution:
    """Array-backed result of resolving one subframe.

    Rows follow `transmissions` order, columns follow the receiver set.  The
    object accessors materialize RxOutcome / RxMeasurement views on demand so
    large runs never build per-link objects.
    """

    subframe: int
    n_subch: int
    transmissions: list[Transmission]
    receivers: ReceiverSet
    rx_power_dbm: np.ndarray      # (k, R)
    sinr_db: np.ndarray           # (k, R)
    outcome: np.ndarray           # (k, R) int8 Outcome codes
    distance_m: np.ndarray        # (k, R)
    srssi_mw: np.ndarray          # (R, n_subch) total arrivals + noise
    is_transmitting: np.ndarray   # (R,) bool
    shadow_db: np.ndarray = field(repr=False, default=None)

    def decoded_mask(self, t_index: int) -> np.ndarray:
        return self.outcome[t_index] == Outcome.DECODED

    def outcome_counts(self, t_index: int) -> tuple[int, int, int, int]:
        """(decoded, collided, below_sensitivity, half_duplex) over real receivers."""
        counts = np.bincount(self.outcome[t_index], minlength=4)
        if self.transmissions[t_index].ue in self.receivers._index:
            counts[Outcome.HALF_DUPLEX_BLOCKED] -= 1  # drop the self pair
        return (int(counts[0]), int(counts[1]), int(counts[2]), int(counts[3]))

    def outcomes_for(self, rx_ue: int) -> list[RxOutcome]:
        r = self.receivers.index_of(rx_ue)
        out = []
        for t, tx in enumerate(self.transmissions):
            if tx.ue == rx_ue:
                continue
            code = Outcome(int(self.outcome[t, r]))
            sinr = float(self.sinr_db[t, r])
            out.append(RxOutcome(tx.ue, rx_ue, tx.csr, code,
                                 float(self.rx_power_dbm[t, r]), sinr,
                                 float(self.distance_m[t, r])))
        return out

    def measurement_for(self, rx_ue: int, subchannel: int) -> RxMeasurement:
        r = self.receivers.index_of(rx_ue)
        decoded = tuple(
            (tx.ue, float(self.rx_power_dbm[t, r]), tx.reservation_period_ms)
            for t, tx in enumerate(self.transmissions)
            if tx.csr.subchannel == subchannel and self.outcome[t, r] == Outcome.DECODED)
        srssi_dbm = 10.0 * np.log10(self.srssi_mw[r, subchannel])
        return RxMeasurement(Csr(self.subframe, subchannel), float(srssi_dbm), decoded)


def resolve_subframe(transmissions: Sequence[Transmission], receivers: ReceiverSet,
                     model: ChannelModel, rng: RngStream, geometry: RoadGeometry,
                     n_subch: int = 2, static_shadow: np.ndarray | None = None,
                     fading_rng: RngStream | None = None) -> SubframeResolution:
    """Resolve every transmission of one subframe against every receiver.

    For each (transmission, receiver) link the signal is the received power of
    that transmission; interference is the mW sum of all other same-subchannel
    received powers.  A link decodes iff the receiver is not itself
    transmitting, the signal is at or above sensitivity, and
    signal / (interference + noise) clears the SINR threshold; the first
    failing condition names the outcome.  Every receiver also obtains a
    per-subchannel S-RSSI (total arrivals + noise, own signal excluded).

    Shadowing is drawn here per (tx, rx) from `rng` in iid mode; in static
    mode it is looked up from `static_shadow[tx_ue, rx_ue]`.  Fast fading,
    when enabled, draws from its own stream so toggling it leaves the
    shadowing realization untouched.
    """
    txs = list(transmissions)
    subframes = {t.csr.subframe for t in txs}
    if len(subframes) > 1:
        raise ValueError(f"transmissions span multiple subframes: {sorted(subframes)}")
    subframe = txs[0].csr.subframe if txs else -1

    k, nrx = len(txs), len(receivers)
    noise_mw = model.noise_mw
    srssi_mw = np.full((nrx, n_subch), noise_mw)
    rxp_dbm = np.zeros((k, nrx))
    sinr_db = np.full((k, nrx), np.nan)
    codes = np.zeros((k, nrx), dtype=np.int8)
    dists = np.zeros((k, nrx))
    shadows = np.zeros((k, nrx))

    tx_ids = np.array([t.ue for t in txs], dtype=int)
    is_tx = np.isin(receivers.ids, tx_ids)

    for subch in range(n_subch):
        rows = [i for i, t in enumerate(txs) if t.csr.subchannel == subch]
        if not rows:
            continue
        tx_x = np.array([txs[i].position.x for i in rows])
        tx_y = np.array([txs[i].position.y(geometry) for i in rows])
        tx_p = np.array([txs[i].power_dbm for i in rows])

        dx = geometry.dx(tx_x[:, None], receivers.x[None, :])
        dy = tx_y[:, None] - receivers.y[None, :]
        d = np.hypot(dx, dy)

        if model.shadowing_sigma_db > 0.0:
            if model.shadowing_mode == "static":
                if static_shadow is None:
                    raise ValueError("static shadowing mode needs a pair table")
                sh = static_shadow[np.ix_(tx_ids[rows], receivers.ids)]
            else:
                sh = rng.normal(0.0, model.shadowing_sigma_db, size=d.shape)
        else:
            sh = np.zeros_like(d)

        if model.fading == "nakagami":
            frng = fading_rng if fading_rng is not None else rng
            gain = frng.gamma(model.nakagami_m, 1.0 / model.nakagami_m, size=d.shape)
            fade = -10.0 * np.log10(np.maximum(gain, 1e-12))
        else:
            fade = 0.0

        p_dbm = tx_p[:, None] - pathloss(d, model) - sh - fade
        p_mw = 10.0 ** (p_dbm / 10.0)

        # own signal does not reach own receiver chain
        self_cols = np.array([receivers._index.get(txs[i].ue, -1) for i in rows])
        for j, col in enumerate(self_cols):
            if col >= 0:
                p_mw[j, col] = 0.0

        total_mw = p_mw.sum(axis=0)
        interference_mw = total_mw[None, :] - p_mw
        with np.errstate(divide="ignore"):
            sinr = p_mw / (interference_mw + noise_mw)
            sinr_row_db = 10.0 * np.log10(np.maximum(sinr, 1e-300))

        decodable = (p_dbm >= model.sensitivity_dbm)
        sinr_ok = sinr_row_db >= model.sinr_threshold_db
        code = np.where(is_tx[None, :], Outcome.HALF_DUPLEX_BLOCKED,
                        np.where(~decodable, Outcome.BELOW_SENSITIVITY,
                                 np.where(~sinr_ok, Outcome.COLLIDED, Outcome.DECODED)))

        srssi_mw[:, subch] += total_mw
        idx = np.array(rows)
        rxp_dbm[idx] = p_dbm
        sinr_db[idx] = sinr_row_db
        codes[idx] = code
        dists[idx] = d
        shadows[idx] = sh

    return SubframeResolution(subframe, n_subch, txs, receivers, rxp_dbm, sinr_db,
                              codes, dists, srssi_mw, is_tx, shadows)
