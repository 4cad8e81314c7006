"""Deterministic per-subframe simulation loop.

Each 1 ms subframe advances mobility (on its tick), updates every UE's
congestion controller, releases packets, transmits on due grants, resolves
the channel, and feeds outcomes into sensing windows and the metrics ledger.
Everything is driven by named RNG streams, so one seed fixes the whole run.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import dcc, mac_sps, metrics, mobility
from .channel import ChannelModel, Outcome, ReceiverSet, Transmission, resolve_subframe
from .core import Csr, Position, RngPool
from .mac_sps import Grant, ReservationRecord, SensingStore, SensingWindow, SpsConfig


@dataclass
class RunConfig:
    scenario: mobility.ScenarioPreset
    scheme: dcc.DccScheme
    channel: ChannelModel = field(default_factory=ChannelModel)
    sps: SpsConfig = field(default_factory=SpsConfig)
    duration_s: float = 20.0
    warmup_s: float = 10.0
    seed: int = 1
    subchannels: int = 2
    payload_bytes: int = 190
    mcs_index: int = 5
    mobility_tick_ms: int = 100
    density_period_ms: int = 1000
    power_period_ms: int = 200
    cbp_window_ms: int = 100
    cbp_rssi_threshold_dbm: float = -94.0
    timeseries_period_ms: int = 1000
    bin_width_m: float = 25.0
    roi_radius_m: float = 100.0
    log_rx_outcomes: bool = False
    cr_limit_enabled: bool = False
    cbp_limit: float = 0.6
    cr_calibration: tuple[tuple[float, float], ...] = ((0.0, 0.0), (1.0, 200.0))

    def validate(self) -> None:
        if self.warmup_s >= self.duration_s:
            raise ValueError("warmup_s must be below duration_s")
        if self.subchannels < 1:
            raise ValueError("subchannels must be at least 1")
        if self.payload_bytes < 1:
            raise ValueError("payload_bytes must be positive")
        if self.mobility_tick_ms < 1 or self.density_period_ms < 1 or self.power_period_ms < 1:
            raise ValueError("cadences must be positive")
        if self.cbp_window_ms > self.sps.sensing_window_sf:
            raise ValueError("cbp_window_ms cannot exceed the sensing window span")


@dataclass(frozen=True)
class TxEvent:
    event_id: int
    subframe: int
    ue: int
    subchannel: int
    power_dbm: float
    x_m: float
    lane: int
    period_ms: int
    queue_delay_ms: int
    n_decoded: int
    n_collided: int
    n_below_sensitivity: int
    n_half_duplex: int


@dataclass(frozen=True)
class RxRecord:
    tx_event_id: int
    subframe: int
    tx_ue: int
    rx_ue: int
    outcome: int
    rx_power_dbm: float
    sinr_db: float
    distance_m: float


class EventLog:
    """Append-only transmission record with per-event outcome tallies.

    Per-receiver records are kept only when the run asks for them; large runs
    rely on the aggregate counts.
    """

    def __init__(self):
        self.tx_events: list[TxEvent] = []
        self.rx_records: list[RxRecord] = []

    def digest(self) -> str:
        h = hashlib.sha256()
        for e in self.tx_events:
            h.update(repr((e.subframe, e.ue, e.subchannel, e.power_dbm, e.x_m, e.lane,
                           e.period_ms, e.queue_delay_ms, e.n_decoded, e.n_collided,
                           e.n_below_sensitivity, e.n_half_duplex)).encode())
        for r in self.rx_records:
            h.update(repr((r.tx_event_id, r.rx_ue, r.outcome, r.rx_power_dbm)).encode())
        return h.hexdigest()

    def write_csv(self, path) -> None:
        import csv as _csv
        with open(path, "w", newline="") as f:
            w = _csv.writer(f)
            w.writerow(["event_id", "subframe", "ue", "subchannel", "power_dbm", "x_m",
                        "lane", "period_ms", "queue_delay_ms", "n_decoded", "n_collided",
                        "n_below_sensitivity", "n_half_duplex"])
            for e in self.tx_events:
                w.writerow([e.event_id, e.subframe, e.ue, e.subchannel, metrics.fmt(e.power_dbm),
                            metrics.fmt(e.x_m), e.lane, e.period_ms, e.queue_delay_ms,
                            e.n_decoded, e.n_collided, e.n_below_sensitivity, e.n_half_duplex])


@dataclass
class RunResult:
    config: RunConfig
    event_log: EventLog
    metrics: metrics.MetricsStore
    timeseries: list[tuple]
    n_ue: int
    observation_s: float

    def collided_by_second(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for e in self.event_log.tx_events:
            out[e.subframe // 1000] = out.get(e.subframe // 1000, 0) + e.n_collided
        return out


class Simulation:
    """One seeded run over a scenario with a congestion-control scheme."""

    def __init__(self, cfg: RunConfig, vehicles: list[mobility.VehicleKinematics] | None = None):
        cfg.validate()
        self.cfg = cfg
        self.preset = cfg.scenario
        self.geometry = self.preset.geometry
        self.rngs = RngPool(cfg.seed)
        self.vehicles = vehicles if vehicles is not None \
            else mobility.generate_scenario(self.preset, self.rngs.stream("mobility"))
        self.n_ue = len(self.vehicles)
        self.scheme = cfg.scheme

        sps = cfg.sps
        if self.scheme.slrrc_min is not None:
            sps = replace(sps, slrrc_min=self.scheme.slrrc_min, slrrc_max=self.scheme.slrrc_max)
        if self.scheme.p_resel is not None:
            sps = replace(sps, p_resel=self.scheme.p_resel)
        self.sps = sps

        n = self.n_ue
        self.lane = np.array([v.position.lane for v in self.vehicles], dtype=int)
        self.y = self.geometry.lane_y(self.lane)
        self._refresh_positions()

        rate, rng_cfg = self.scheme.rate, self.scheme.range
        self.itt_ms = np.full(n, 100.0)
        self.power_dbm = np.full(n, rng_cfg.p_max_dbm)
        self.n_sta_s = np.zeros(n)
        self.cbp_pct = np.zeros(n)
        self.last_tx = np.full(n, -(10 ** 9), dtype=np.int64)
        self.pending = np.zeros(n, dtype=bool)
        self.gen_time = np.zeros(n, dtype=np.int64)
        self.next_tx = np.full(n, -1, dtype=np.int64)
        self.grants: list[Grant | None] = [None] * n
        self.bcast_x = self.x.copy()
        self.bcast_v = np.array([v.speed_mps for v in self.vehicles])
        self.bcast_t = np.zeros(n, dtype=np.int64)

        self.store = SensingStore(n, cfg.subchannels, sps.sensing_window_sf,
                                  cfg.channel.noise_mw, keep_rsrp_above_dbm=sps.th_sps_dbm)
        self.windows = [SensingWindow(self.store, i) for i in range(n)]
        self._noise_matrix = np.full((n, cfg.subchannels), cfg.channel.noise_mw)
        self._all_sensed = np.ones(n, dtype=bool)

        if cfg.channel.shadowing_mode == "static" and cfg.channel.shadowing_sigma_db > 0:
            self.static_shadow = self.rngs.stream("shadow-static").normal(
                0.0, cfg.channel.shadowing_sigma_db, size=(n, n))
        else:
            self.static_shadow = None

        max_range = self.geometry.length_m / 2.0 if self.geometry.wraparound else self.geometry.length_m
        max_range += self.preset.lanes * self.preset.lane_width_m
        self.metrics = metrics.MetricsStore(n, cfg.bin_width_m, max_range,
                                            cfg.payload_bytes, cfg.roi_radius_m)
        self.log = EventLog()
        self.timeseries: list[tuple] = []
        self._own_tx_history: list[list[int]] = [[] for _ in range(n)]
        self._cr_table = mac_sps.CbpDensityTable(list(cfg.cr_calibration)) \
            if cfg.cr_limit_enabled else None

        self.warmup_sf = int(round(cfg.warmup_s * 1000))
        self.total_sf = int(round(cfg.duration_s * 1000))
        lo, hi = self.preset.region_bounds_m
        self._region = (lo, hi)

    def _refresh_positions(self) -> None:
        self.x = np.array([v.position.x for v in self.vehicles])
        self.speed = np.array([v.speed_mps for v in self.vehicles])
        self.receivers = ReceiverSet(np.arange(self.n_ue), self.x, self.y)
        dx = self.geometry.dx(self.x[:, None], self.x[None, :])
        dy = self.y[:, None] - self.y[None, :]
        self.pair_dist = np.hypot(dx, dy)

    def _select_grant(self, ue: int, n: int) -> None:
        period = max(1, int(round(self.itt_ms[ue])))
        csr = mac_sps.select_resource(self.windows[ue], n, self.sps,
                                      self.rngs.stream("sps", ue),
                                      n_subch=self.cfg.subchannels, own_period_sf=period)
        slrrc = self.rngs.stream("sps", ue).randint(self.sps.slrrc_min, self.sps.slrrc_max)
        self.grants[ue] = Grant(csr.subframe, csr.subchannel, period, slrrc)
        self.next_tx[ue] = csr.subframe

    def _cr_allows(self, ue: int, n: int) -> bool:
        tau1, tau2 = n - 750, n + 250
        used = [t for t in self._own_tx_history[ue] if tau1 <= t < tau2]
        g = self.grants[ue]
        t = n
        while t < tau2:
            used.append(t)
            t += max(1, g.period_sf)
        cr = len(used) / (1000.0 * self.cfg.subchannels)
        limit = mac_sps.cr_limit(min(self.cbp_pct[ue] / 100.0, 1.0), self.cfg.cbp_limit,
                                 self._cr_table)
        return cr <= limit

    def run(self) -> RunResult:
        cfg, n_ue = self.cfg, self.n_ue
        scheme, rate_cfg, range_cfg = self.scheme, self.scheme.rate, self.scheme.range
        cbp_thresh_mw = 10.0 ** (cfg.cbp_rssi_threshold_dbm / 10.0)
        pte_on = scheme.enabled and rate_cfg.pte_enabled
        perturb_rng = self.rngs.stream("perturb")
        shadow_rng = self.rngs.stream("shadow")
        fading_rng = self.rngs.stream("fading")
        region_lo, region_hi = self._region

        for n in range(self.total_sf):
            # mobility tick: move vehicles, refresh geometry caches
            if n > 0 and n % cfg.mobility_tick_ms == 0:
                respawned = mobility.step(self.vehicles, cfg.mobility_tick_ms / 1000.0,
                                          self.preset, perturb_rng)
                self._refresh_positions()
                for i in respawned:
                    # a respawned vehicle re-enters as a fresh participant
                    self.bcast_x[i], self.bcast_v[i], self.bcast_t[i] = self.x[i], self.speed[i], n
                if n >= self.warmup_sf:
                    self.metrics.update_roi(self.pair_dist <= cfg.roi_radius_m)

            # density sample -> smoothed neighbor count -> rate control
            if n % cfg.density_period_ms == 0:
                counts = (np.sum(self.pair_dist <= rate_cfg.neighbor_radius_m, axis=1) - 1)
                self.n_sta_s = dcc.smooth_density(counts.astype(float), self.n_sta_s)
                if scheme.enabled:
                    self.itt_ms = np.array([dcc.compute_itt(v, rate_cfg) for v in self.n_sta_s])

            # busy measurement -> range control
            if n % cfg.power_period_ms == 0 and n > 0:
                busy, slots = self.store.cbp_counts(n, cfg.cbp_window_ms, cbp_thresh_mw)
                ok = slots > 0
                self.cbp_pct[ok] = 100.0 * busy[ok] / slots[ok]
                if scheme.enabled:
                    self.power_dbm = np.array([
                        dcc.update_power(p, c, range_cfg)
                        for p, c in zip(self.power_dbm, self.cbp_pct)])

            # packet release: rate timer, plus the tracking-error override.
            # Kinematic state is continuous even though propagation samples
            # positions on the mobility tick: constant-speed motion must give
            # exactly zero tracking error.
            if pte_on:
                frac_s = (n % cfg.mobility_tick_ms) / 1000.0
                x_true = self.x + self.speed * frac_s
                dt_s = (n - self.bcast_t) / 1000.0
                pred = self.bcast_x + self.bcast_v * dt_s
                if self.geometry.wraparound:
                    x_true %= self.geometry.length_m
                    pred %= self.geometry.length_m
                pte = self.geometry.dx(pred, x_true)
            else:
                x_true = None
                pte = None
            ready = ~self.pending & ((n - self.last_tx) >= self.itt_ms)
            if pte is not None:
                pte_fire = ~self.pending & (pte > rate_cfg.pte_threshold_m)
                gen = ready | pte_fire
            else:
                pte_fire = None
                gen = ready
            if gen.any():
                for ue in np.nonzero(gen)[0]:
                    ue = int(ue)
                    self.pending[ue] = True
                    self.gen_time[ue] = n
                    if self.grants[ue] is None:
                        self._select_grant(ue, n)
                    elif pte_fire is not None and pte_fire[ue] and not ready[ue] \
                            and self.next_tx[ue] - n > rate_cfg.pte_wait_limit_ms:
                        # grant lands too late for a tracking update: reselect now
                        self._select_grant(ue, n)

            # grant occurrences: transmit when a packet waits, otherwise let the
            # reservation slot pass unused (counter only counts transmissions)
            due = np.nonzero(self.next_tx == n)[0]
            txs: list[Transmission] = []
            tx_meta: list[tuple[int, int]] = []
            for ue in due:
                ue = int(ue)
                grant = self.grants[ue]
                if not self.pending[ue] or \
                        (self._cr_table is not None and not self._cr_allows(ue, n)):
                    self.next_tx[ue] = n + max(1, grant.period_sf)
                    grant.next_subframe = self.next_tx[ue]
                    continue
                period = max(1, int(round(self.itt_ms[ue])))
                txs.append(Transmission(ue, Csr(n, grant.subchannel), float(self.power_dbm[ue]),
                                        Position(float(self.x[ue]), int(self.lane[ue])), period))
                tx_meta.append((ue, period))

            for ue, period in tx_meta:
                grant = self.grants[ue]
                self.pending[ue] = False
                self.last_tx[ue] = n
                self.bcast_x[ue] = x_true[ue] if x_true is not None else self.x[ue]
                self.bcast_v[ue], self.bcast_t[ue] = self.speed[ue], n
                if self._cr_table is not None:
                    self._own_tx_history[ue].append(n)
                    self._own_tx_history[ue] = [t for t in self._own_tx_history[ue] if t > n - 1000]
                decision = mac_sps.on_transmission(grant, self.rngs.stream("sps", ue), self.sps)
                if decision is None:
                    self._select_grant(ue, n)
                    self.grants[ue] = replace(self.grants[ue], period_sf=period)
                else:
                    decision.period_sf = period
                    decision.next_subframe = n + period
                    self.grants[ue] = decision
                    self.next_tx[ue] = n + period

            # channel resolution, logging, metrics, sensing
            if txs:
                res = resolve_subframe(txs, self.receivers, cfg.channel, shadow_rng,
                                       self.geometry, cfg.subchannels, self.static_shadow,
                                       fading_rng=fading_rng)
                records = []
                post_warmup = n >= self.warmup_sf
                m_pairs: list[np.ndarray] = []
                m_dist: list[np.ndarray] = []
                m_decoded: list[np.ndarray] = []
                for t, tx in enumerate(txs):
                    counts = res.outcome_counts(t)
                    eid = len(self.log.tx_events)
                    self.log.tx_events.append(TxEvent(
                        eid, n, tx.ue, tx.csr.subchannel, tx.power_dbm, tx.position.x,
                        tx.position.lane, tx.reservation_period_ms,
                        int(n - self.gen_time[tx.ue]), *counts))
                    if cfg.log_rx_outcomes:
                        keep = self.receivers.ids != tx.ue
                        for r in np.nonzero(keep)[0]:
                            self.log.rx_records.append(RxRecord(
                                eid, n, tx.ue, int(r), int(res.outcome[t, r]),
                                float(res.rx_power_dbm[t, r]), float(res.sinr_db[t, r]),
                                float(res.distance_m[t, r])))
                    heard = res.decoded_mask(t)
                    records.append(ReservationRecord(n, tx.csr.subchannel, tx.ue,
                                                     tx.reservation_period_ms, heard,
                                                     res.rx_power_dbm[t].astype(np.float32)))
                    if post_warmup and region_lo <= tx.position.x <= region_hi:
                        keep = self.receivers.ids != tx.ue
                        m_pairs.append(tx.ue * n_ue + self.receivers.ids[keep])
                        m_dist.append(res.distance_m[t, keep])
                        m_decoded.append(heard[keep])
                if m_pairs:
                    self.metrics.record_arrays(n, np.concatenate(m_pairs),
                                               np.concatenate(m_dist),
                                               np.concatenate(m_decoded))
                sensed = self._all_sensed.copy()
                sensed[[tx.ue for tx in txs]] = False
                self.store.record_subframe(n, res.srssi_mw, sensed, records)
            else:
                self.store.record_subframe(n, self._noise_matrix, self._all_sensed, [])

            if n % cfg.timeseries_period_ms == 0:
                self.timeseries.append((n / 1000.0, float(self.cbp_pct.mean()),
                                        float(self.power_dbm.mean()), float(self.itt_ms.mean())))

        observation_s = cfg.duration_s - cfg.warmup_s
        self.metrics.observation_s = observation_s
        return RunResult(cfg, self.log, self.metrics, self.timeseries, n_ue, observation_s)


def run(cfg: RunConfig, vehicles=None) -> RunResult:
    """Build and execute one simulation."""
    return Simulation(cfg, vehicles).run()
