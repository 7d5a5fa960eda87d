"""Tests for the tunneling retardation operations."""

import numpy as np
import pytest
from scipy.integrate import quad

from oracles import square_barrier_transmission
from quantracer.errors import GridTooCoarse, InvalidRange
from quantracer.numerics import build_kgrid
from quantracer.tunneling import (
    DeltaPReport,
    default_delta_p_grid,
    delta_p_decomposed,
    delta_p_direct,
    delta_p_report,
    packet_transmission_probability,
    retardation_scan,
)
from quantracer.wavepacket import (
    DEFAULT_BARRIER,
    DEFAULT_PACKET,
    BarrierSpec,
    free_gaussian_model,
    spectral_free_model,
    spectral_setup,
    tunneling_packet_model,
)

# sum of grid weights * |T|^2 |psi~|^2 on the default Fig.-2 style setup;
# cross-checked below against a QUADPACK integral of the textbook formula
PACKET_TRANSMISSION_FIG2 = 0.0215820607108841


@pytest.fixture(scope="module")
def fig2():
    spectrum, grid = spectral_setup(DEFAULT_PACKET, t_max=10.0)
    free = spectral_free_model(spectrum, grid)
    tunnel = tunneling_packet_model(spectrum, DEFAULT_BARRIER, grid)
    return spectrum, grid, free, tunnel


@pytest.fixture(scope="module")
def zero_barrier(fig2):
    spectrum, grid, free, _ = fig2
    barrier = BarrierSpec(height=0.0, half_width=DEFAULT_BARRIER.half_width)
    return tunneling_packet_model(spectrum, barrier, grid)


class TestDeltaPDirect:
    def test_zero_barrier_vanishes(self, fig2, zero_barrier):
        _, _, free, _ = fig2
        for x, t in [(1.0, 0.0), (1.0, 5.0), (3.0, 8.0)]:
            assert abs(delta_p_direct(free, zero_barrier, x, t)) <= 1e-8

    def test_far_field_zero(self, fig2):
        _, _, free, tunnel = fig2
        assert abs(delta_p_direct(free, tunnel, 30.0, 0.0)) <= 1e-10

    def test_nonnegative_in_transmission_region(self, fig2):
        _, _, free, tunnel = fig2
        for x in (0.5, 1.7, 2.9, 5.0):
            for t in (0.0, 2.0, 4.0, 6.0, 8.0, 10.0):
                assert delta_p_direct(free, tunnel, x, t) >= -1e-6

    def test_rejects_x_inside_barrier(self, fig2):
        _, _, free, tunnel = fig2
        with pytest.raises(InvalidRange):
            delta_p_direct(free, tunnel, 0.2, 1.0)

    def test_rejects_foreign_free_model(self, fig2):
        _, _, _, tunnel = fig2
        with pytest.raises(InvalidRange):
            delta_p_direct(free_gaussian_model(DEFAULT_PACKET), tunnel, 1.0, 1.0)


class TestDeltaPDecomposed:
    def test_matches_direct_at_example_point(self, fig2):
        spectrum, grid, free, tunnel = fig2
        direct = delta_p_direct(free, tunnel, 1.0, 6.0)
        terms = delta_p_decomposed(spectrum, DEFAULT_BARRIER, grid, 1.0, 6.0)
        assert abs(terms.total - direct) <= max(1e-2 * abs(direct), 1e-6)

    def test_matches_direct_across_points(self, fig2):
        spectrum, grid, free, tunnel = fig2
        for x, t in [(0.5, 3.0), (0.6, 0.0), (2.0, 8.0), (5.0, 10.0)]:
            direct = delta_p_direct(free, tunnel, x, t)
            terms = delta_p_decomposed(spectrum, DEFAULT_BARRIER, grid, x, t)
            assert abs(terms.total - direct) <= max(1e-6 * abs(direct), 1e-9)

    def test_matches_direct_for_other_geometry(self, fig2):
        spectrum, grid, free, _ = fig2
        barrier = BarrierSpec(height=5.0, half_width=0.5)
        tunnel = tunneling_packet_model(spectrum, barrier, grid)
        for x, t in [(0.8, 2.0), (1.2, 6.0)]:
            direct = delta_p_direct(free, tunnel, x, t)
            terms = delta_p_decomposed(spectrum, barrier, grid, x, t)
            assert abs(terms.total - direct) <= max(1e-5 * abs(direct), 1e-9)

    def test_terms_nonnegative(self, fig2):
        spectrum, grid, _, _ = fig2
        for x, t in [(0.5, 0.0), (1.0, 6.0), (4.0, 10.0)]:
            terms = delta_p_decomposed(spectrum, DEFAULT_BARRIER, grid, x, t)
            assert terms.term1 >= 0.0
            assert terms.term2 >= 0.0
            assert terms.term3 >= 0.0
            assert terms.total >= 0.0

    def test_zero_barrier_total_vanishes(self, fig2):
        spectrum, grid, _, _ = fig2
        barrier = BarrierSpec(height=0.0, half_width=0.3)
        terms = delta_p_decomposed(spectrum, barrier, grid, 1.0, 5.0)
        # every weight carries the barrier height, so the total is exactly 0
        assert terms.total == 0.0
        assert np.isfinite([terms.term1, terms.term2, terms.term3]).all()

    def test_lambda_refinement_is_stable(self, fig2):
        spectrum, grid, _, _ = fig2
        coarse = delta_p_decomposed(spectrum, DEFAULT_BARRIER, grid, 1.0, 6.0,
                                    n_lambda=16)
        fine = delta_p_decomposed(spectrum, DEFAULT_BARRIER, grid, 1.0, 6.0,
                                  n_lambda=64)
        assert abs(coarse.total - fine.total) <= 1e-9 * abs(fine.total)

    def test_rejects_small_n_lambda(self, fig2):
        spectrum, grid, _, _ = fig2
        with pytest.raises(InvalidRange):
            delta_p_decomposed(spectrum, DEFAULT_BARRIER, grid, 1.0, 6.0,
                               n_lambda=8)

    def test_rejects_x_inside_barrier(self, fig2):
        spectrum, grid, _, _ = fig2
        with pytest.raises(InvalidRange):
            delta_p_decomposed(spectrum, DEFAULT_BARRIER, grid, 0.25, 6.0)

    def test_coarse_grid_refused(self, fig2):
        spectrum, _, _, _ = fig2
        tiny = build_kgrid(DEFAULT_PACKET.k_bar, DEFAULT_PACKET.sigma_k,
                           n_nodes=64)
        with pytest.raises(GridTooCoarse):
            delta_p_decomposed(spectrum, DEFAULT_BARRIER, tiny, 1.0, 10.0)


class TestDeltaPReport:
    def test_small_grid_invariants(self, fig2):
        _, _, free, tunnel = fig2
        report = delta_p_report(free, tunnel, x_values=[0.5, 1.5, 3.0],
                                t_values=[0.0, 4.0, 8.0])
        assert isinstance(report, DeltaPReport)
        assert len(report.grid) == 9
        assert report.grid[0] == (0.5, 0.0)
        assert report.grid[1] == (0.5, 4.0)     # t varies fastest
        assert np.all(report.dp_term1 >= 0.0)
        assert np.all(report.dp_term2 >= 0.0)
        assert np.all(report.dp_term3 >= 0.0)
        np.testing.assert_allclose(
            report.dp_term1 + report.dp_term2 + report.dp_term3,
            report.dp_total, rtol=1e-12)
        assert report.all_positive
        assert report.agreement_ok().all()

    def test_default_grid(self):
        xs, ts = default_delta_p_grid(DEFAULT_BARRIER)
        assert xs.size == 12 and ts.size == 11
        assert xs[0] == pytest.approx(0.5)
        assert xs[-1] == pytest.approx(5.3)
        assert ts[0] == 0.0 and ts[-1] == 10.0

    def test_rejects_x_inside_barrier(self, fig2):
        _, _, free, tunnel = fig2
        with pytest.raises(InvalidRange):
            delta_p_report(free, tunnel, x_values=[0.1], t_values=[0.0])


class TestRetardationScan:
    def test_zero_barrier_equality(self, fig2, zero_barrier):
        _, _, free, _ = fig2
        verdicts = retardation_scan(free, zero_barrier, [0.3, 0.6],
                                    np.arange(0.0, 9.0, 2.0))
        for v in verdicts:
            assert v.ok
            assert v.checked > 0     # quantiles pass the edge at late times
            assert abs(v.worst_margin_all) <= 1e-6

    def test_transmitted_quantiles_lag(self, fig2):
        # P below the packet transmission probability crosses the barrier,
        # so the beyond-the-edge comparison has real content there.
        _, _, free, tunnel = fig2
        verdicts = retardation_scan(free, tunnel, [0.01, 0.02],
                                    np.linspace(0.0, 10.0, 11))
        for v in verdicts:
            assert v.checked > 0
            assert v.ok
            assert v.worst_margin < -0.1    # lags by a visible distance

    def test_reflected_quantile_is_vacuous_beyond_edge(self, fig2):
        _, _, free, tunnel = fig2
        (v,) = retardation_scan(free, tunnel, [0.3], np.linspace(0.0, 10.0, 11))
        assert v.checked == 0
        assert v.skipped == 11
        assert v.ok
        # in front of the barrier the pile-up genuinely pushes the quantile
        # ahead of the free twin; the diagnostic margin records that
        assert v.worst_margin_all > 1e-3

    def test_barrier_strengthening_keeps_verdicts(self, fig2):
        spectrum, grid, free, _ = fig2
        for height in (1.0, 5.0, 10.0):
            barrier = BarrierSpec(height=height, half_width=0.3)
            tunnel = tunneling_packet_model(spectrum, barrier, grid)
            verdicts = retardation_scan(free, tunnel, [0.1, 0.3],
                                        np.arange(0.0, 11.0, 2.0))
            assert all(v.ok for v in verdicts)


class TestPacketTransmission:
    def test_zero_barrier_is_unity(self, fig2):
        spectrum, grid, _, _ = fig2
        barrier = BarrierSpec(height=0.0, half_width=0.3)
        tp = packet_transmission_probability(spectrum, barrier, grid)
        assert tp == pytest.approx(1.0, abs=1e-9)

    def test_opaque_barrier(self, fig2):
        # 2mV = 100 k_bar^2 puts the whole spectrum deep under the barrier
        spectrum, grid, _, _ = fig2
        barrier = BarrierSpec(height=50.0 * DEFAULT_PACKET.k_bar ** 2,
                              half_width=0.3)
        assert packet_transmission_probability(spectrum, barrier, grid) <= 1e-6

    def test_fig2_value_frozen(self, fig2):
        spectrum, grid, _, _ = fig2
        tp = packet_transmission_probability(spectrum, DEFAULT_BARRIER, grid)
        assert tp == pytest.approx(PACKET_TRANSMISSION_FIG2, abs=1e-10)
        assert 0.0 < tp < 1.0

    def test_matches_quadpack_route(self, fig2):
        spectrum, grid, _, _ = fig2
        tp = packet_transmission_probability(spectrum, DEFAULT_BARRIER, grid)

        def integrand(k):
            return (square_barrier_transmission(k, DEFAULT_BARRIER.height,
                                                DEFAULT_BARRIER.half_width)
                    * abs(spectrum.amplitude(k)) ** 2)

        ref, _ = quad(integrand, spectrum.k_lo, spectrum.k_hi,
                      epsabs=1e-13, epsrel=1e-12, limit=200)
        assert tp == pytest.approx(ref, abs=1e-8)
