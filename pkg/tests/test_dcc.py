import numpy as np
import pytest

from cv2xsim.channel import RxMeasurement
from cv2xsim.core import Csr, Position, RngStream, RoadGeometry
from cv2xsim.dcc import (DccState, RangeControlConfig, RateControlConfig, SCHEMES,
                         compute_itt, count_neighbors, measure_cbp, power_target,
                         scheme_by_name, should_transmit, smooth_density, update_power,
                         update_pte)
from cv2xsim.mac_sps import SensingWindow, record_observation

GEO = RoadGeometry(length_m=100_000.0, lanes=12, lane_width_m=4.0)
RATE = RateControlConfig()     # B=25, itt_max=600
RANGE = RangeControlConfig()   # P [10,23], U [50,80], eta 0.5


class TestMeasureCbp:
    def build(self, srssi_rows, span=200):
        w = SensingWindow.standalone(n_subch=2, span=span, noise_mw=1e-10)
        for n, (a, b) in enumerate(srssi_rows):
            record_observation(w, n, RxMeasurement(Csr(n, 0), a))
            record_observation(w, n, RxMeasurement(Csr(n, 1), b))
        return w

    def test_quiet_channel_is_zero(self):
        w = self.build([(-100.0, -100.0)] * 100)
        assert measure_cbp(w, 100, -94.0, 100) == 0.0

    def test_direct_count(self):
        # 120 of 200 slots busy -> 60%
        rows = [(-60.0, -60.0)] * 60 + [(-60.0, -100.0)] * 0 + [(-100.0, -100.0)] * 40
        w = self.build(rows)
        assert measure_cbp(w, 100, -94.0, 100) == pytest.approx(60.0)

    def test_saturated_channel(self):
        w = self.build([(-60.0, -55.0)] * 100)
        assert measure_cbp(w, 100, -94.0, 100) == pytest.approx(100.0)

    def test_unsensed_excluded_from_both_counts(self):
        w = self.build([(-60.0, -60.0)] * 50)
        for n in range(50, 100):
            w.mark_transmitted(n)
        assert measure_cbp(w, 100, -94.0, 100) == pytest.approx(100.0)

    def test_no_sensed_slots_is_an_error(self):
        w = SensingWindow.standalone(n_subch=2, span=50, noise_mw=1e-10)
        w.mark_transmitted(0)
        with pytest.raises(ValueError):
            measure_cbp(w, 1, -94.0, 100)

    def test_bounds(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            rows = [tuple(rng.uniform(-100, -50, size=2)) for _ in range(30)]
            w = self.build(rows, span=64)
            assert 0.0 <= measure_cbp(w, 30, -80.0, 30) <= 100.0


class TestCountNeighbors:
    def test_alone(self):
        assert count_neighbors(Position(0.0, 0), [], 100.0, GEO) == 0

    def test_boundary_inclusive(self):
        host = Position(0.0, 0)
        others = [Position(50.0, 0), Position(99.0, 0), Position(101.0, 0)]
        assert count_neighbors(host, others, 100.0, GEO) == 2
        assert count_neighbors(host, [Position(100.0, 0)], 100.0, GEO) == 1

    def test_uniform_density_monte_carlo(self):
        # density rho on a line -> mean count ~ 200 * rho within a 100 m radius
        rho = 0.5
        rng = RngStream(8, "mc")
        length = 4000.0
        total = 0
        trials = 200
        for _ in range(trials):
            xs = rng.uniform_array(0.0, length, size=int(rho * length))
            host = Position(length / 2.0, 0)
            others = [Position(float(x), 0) for x in xs]
            total += count_neighbors(host, others, 100.0, GEO)
        assert total / trials == pytest.approx(200.0 * rho, rel=0.05)

    def test_bad_radius(self):
        with pytest.raises(ValueError):
            count_neighbors(Position(0, 0), [], 0.0, GEO)


class TestSmoothing:
    def test_fixed_point(self):
        assert smooth_density(40.0, 40.0) == 40.0

    def test_half_step(self):
        assert smooth_density(100.0, 0.0) == 50.0

    def test_geometric_convergence(self):
        c = 80.0
        s = 0.0
        for k in range(1, 21):
            s = smooth_density(c, s)
            assert abs(s - c) == pytest.approx(c / 2 ** k, rel=1e-12)
        assert abs(s - c) < 1e-4 * c


class TestComputeItt:
    def test_boundary_values(self):
        assert compute_itt(25.0, RATE) == 100.0
        assert compute_itt(50.0, RATE) == pytest.approx(200.0)
        assert compute_itt(150.0, RATE) == 600.0        # third-branch boundary
        assert compute_itt(1000.0, RATE) == 600.0

    def test_continuity_at_branch_edges(self):
        eps = 1e-9
        assert compute_itt(25.0 + eps, RATE) == pytest.approx(100.0, abs=1e-6)
        assert compute_itt(150.0 - eps, RATE) == pytest.approx(600.0, abs=1e-6)

    def test_monotone(self):
        values = [compute_itt(float(n), RATE) for n in range(0, 400)]
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            compute_itt(-1.0, RATE)


class TestUpdatePower:
    def test_below_umin_holds_max_power(self):
        assert power_target(40.0, RANGE) == 23.0
        assert update_power(23.0, 40.0, RANGE) == pytest.approx(23.0)

    def test_above_umax_steps_toward_min(self):
        assert power_target(90.0, RANGE) == 10.0
        assert update_power(23.0, 90.0, RANGE) == pytest.approx(16.5)

    def test_middle_branch_fixed_point(self):
        # target(65%) = 10 + ((80-65)/30) * 13 = 16.5
        assert power_target(65.0, RANGE) == pytest.approx(16.5)
        assert update_power(16.5, 65.0, RANGE) == pytest.approx(16.5)

    def test_target_non_increasing_in_cbp(self):
        targets = [power_target(c, RANGE) for c in np.linspace(0, 100, 401)]
        assert all(b <= a + 1e-12 for a, b in zip(targets, targets[1:]))

    def test_output_stays_in_bounds(self):
        rng = np.random.default_rng(1)
        for _ in range(500):
            p = rng.uniform(RANGE.p_min_dbm, RANGE.p_max_dbm)
            c = rng.uniform(0.0, 100.0)
            out = update_power(p, c, RANGE)
            assert RANGE.p_min_dbm - 1e-12 <= out <= RANGE.p_max_dbm + 1e-12

    def test_geometric_convergence_to_target(self):
        p = 23.0
        for _ in range(20):
            p = update_power(p, 90.0, RANGE)
        assert abs(p - 10.0) < 1e-4


class TestUpdatePte:
    def test_exact_extrapolation_is_zero(self):
        # constant velocity since the broadcast
        pte = update_pte((100.0 + 20.0 * 2.0, 20.0), (100.0, 20.0, 0), 2000, GEO)
        assert pte == pytest.approx(0.0)

    def test_motion_after_stationary_broadcast(self):
        pte = update_pte((1.0, 0.0), (0.0, 0.0, 0), 500, GEO)
        assert pte == pytest.approx(1.0)
        assert pte > 0.5

    def test_deceleration_boundary(self):
        # 1 m/s^2 for 1 s after a constant-velocity broadcast: error = a t^2 / 2
        v0, a, t = 20.0, -1.0, 1.0
        actual_x = v0 * t + 0.5 * a * t * t
        pte = update_pte((actual_x, v0 + a * t), (0.0, v0, 0), 1000, GEO)
        assert pte == pytest.approx(0.5, abs=1e-9)

    def test_rejects_time_travel(self):
        with pytest.raises(ValueError):
            update_pte((0.0, 0.0), (0.0, 0.0, 100), 50, GEO)

    def test_wraparound_extrapolation(self):
        ring = RoadGeometry(1200.0, 2, wraparound=True)
        pte = update_pte((10.0, 20.0), (1190.0, 20.0, 0), 1000, ring)
        assert pte == pytest.approx(0.0)


class TestShouldTransmit:
    def test_timer_expiry(self):
        st = DccState(itt_ms=100.0, last_tx_time=0)
        assert should_transmit(st, 0.0, 100, RATE) is True
        assert should_transmit(st, 0.0, 99, RATE) is False

    def test_tracking_error_override(self):
        st = DccState(itt_ms=100.0, last_tx_time=0)
        assert should_transmit(st, 0.6, 50, RATE) is True
        assert should_transmit(st, 0.4, 50, RATE) is False

    def test_override_disabled(self):
        cfg = RateControlConfig(pte_enabled=False)
        st = DccState(itt_ms=100.0, last_tx_time=0)
        assert should_transmit(st, 5.0, 50, cfg) is False


class TestSchemes:
    def test_standard_scheme_values(self):
        s = scheme_by_name("dcc-std")
        assert s.rate.density_coefficient == 25.0
        assert s.rate.itt_max_ms == 600.0
        assert s.range.eta == 0.5
        assert (s.range.p_min_dbm, s.range.p_max_dbm) == (10.0, 23.0)
        assert (s.range.u_min_pct, s.range.u_max_pct) == (50.0, 80.0)

    def test_numbered_schemes(self):
        rows = {
            "dcc-1": (23.0, 23.0, 80.0, 50.0, 25.0),
            "dcc-2": (23.0, 10.0, 50.0, 30.0, 25.0),
            "dcc-3": (23.0, 5.0, 50.0, 30.0, 25.0),
            "dcc-4": (23.0, 5.0, 50.0, 30.0, 35.0),
            "dcc-5": (23.0, 5.0, 50.0, 30.0, 45.0),
            "dcc-6": (23.0, 5.0, 50.0, 30.0, 55.0),
            "dcc-7": (23.0, 0.0, 50.0, 30.0, 45.0),
        }
        for name, (p_max, p_min, u_max, u_min, b) in rows.items():
            s = scheme_by_name(name)
            assert s.range.p_max_dbm == p_max, name
            assert s.range.p_min_dbm == p_min, name
            assert s.range.u_max_pct == u_max, name
            assert s.range.u_min_pct == u_min, name
            assert s.rate.density_coefficient == b, name
        s7 = scheme_by_name("dcc-7")
        assert (s7.slrrc_min, s7.slrrc_max, s7.p_resel) == (1, 5, 0.2)

    def test_baseline_disables_control(self):
        base = scheme_by_name("baseline")
        assert base.enabled is False
        assert base.rate.pte_enabled is False

    def test_unknown_scheme(self):
        with pytest.raises(KeyError):
            scheme_by_name("dcc-99")
        assert set(SCHEMES) == {"baseline", "dcc-std", "dcc-1", "dcc-2", "dcc-3",
                                "dcc-4", "dcc-5", "dcc-6", "dcc-7"}


def test_config_validation():
    with pytest.raises(ValueError):
        RateControlConfig(density_coefficient=0.0)
    with pytest.raises(ValueError):
        RateControlConfig(itt_max_ms=50.0)
    with pytest.raises(ValueError):
        RangeControlConfig(p_min_dbm=24.0, p_max_dbm=23.0)
    with pytest.raises(ValueError):
        RangeControlConfig(u_min_pct=80.0, u_max_pct=50.0)
    with pytest.raises(ValueError):
        RangeControlConfig(eta=0.0)
