import math

import numpy as np
import pytest

from veccache.model import (
    ChannelParams,
    Content,
    DegenerateGeometryError,
    EconomicParams,
    Heading,
    Role,
    UnreachableError,
    VehicleState,
    data_rate,
    dbm_to_mw,
    energy_cost,
    pair_payment,
    rate_from_distance,
    tx_latency,
)

CHAN = ChannelParams(bandwidth_hz=1e7, tx_power_mw=dbm_to_mw(24.0),
                     noise_mw=1e-11, v2v_range_m=500.0)
ECON = EconomicParams(cache_price=2e-9, energy_price=0.1,
                      cache_energy_per_byte=1e-9, penalty=-100.0)


def vehicle(pos, role=Role.PROVIDER, content=None):
    return VehicleState("v", role, pos, Heading.NORTH, 10.0,
                        cache_capacity=1e9 if role is Role.PROVIDER else 0.0,
                        content=content)


def requester(pos, content=None):
    content = content or Content(8e6, 1e9, 5.0)
    return VehicleState("r", Role.REQUESTER, pos, Heading.NORTH, 10.0, content=content)


class TestDataRate:
    def test_zero_tx_power_gives_zero_rate(self):
        chan = ChannelParams(1e7, 1e-300, 1e-11, 500.0)
        r = data_rate(requester((0, 0)), vehicle((100, 0)), chan)
        assert r == pytest.approx(0.0, abs=1e-3)

    def test_out_of_range_is_exactly_zero(self):
        assert data_rate(requester((0, 0)), vehicle((600, 0)), CHAN) == 0.0

    def test_range_boundary_is_inclusive(self):
        assert data_rate(requester((0, 0)), vehicle((500, 0)), CHAN) > 0.0
        assert data_rate(requester((0, 0)), vehicle((500.0001, 0)), CHAN) == 0.0

    def test_closed_form_at_paper_parameters(self):
        # oracle computed once by hand: 1e7 * log2(1 + 251.18864.. * 100^-2 / 1e-11)
        r = data_rate(requester((0, 0)), vehicle((100, 0)), CHAN)
        assert r == pytest.approx(312261240.9251555, rel=1e-12)

    def test_coincident_positions_rejected(self):
        with pytest.raises(DegenerateGeometryError):
            data_rate(requester((5, 5)), vehicle((5, 5)), CHAN)

    def test_monotone_in_distance_within_range(self):
        ds = np.linspace(1.0, 500.0, 200)
        rates = rate_from_distance(ds, CHAN)
        assert np.all(np.diff(rates) <= 0)

    def test_pure_function(self):
        a, b = requester((0, 0)), vehicle((123.4, 67.8))
        assert data_rate(a, b, CHAN) == data_rate(a, b, CHAN)


class TestTxLatency:
    def test_unit_ratio(self):
        assert tx_latency(Content(8e6, 1e9, 5.0), 8e6) == 1.0

    def test_zero_size_content(self):
        from types import SimpleNamespace
        assert tx_latency(SimpleNamespace(size_bits=0.0), 1e6) == 0.0

    def test_zero_rate_is_unreachable(self):
        with pytest.raises(UnreachableError):
            tx_latency(Content(8e6, 1e9, 5.0), 0.0)

    def test_latency_times_rate_recovers_size(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            size = float(rng.uniform(1e6, 1e9))
            rate = float(rng.uniform(1e5, 1e9))
            c = Content(size, 1e9, 5.0)
            assert tx_latency(c, rate) * rate == pytest.approx(size, rel=1e-9)

    def test_derived_from_rate_oracle(self):
        rate = data_rate(requester((0, 0)), vehicle((100, 0)), CHAN)
        c = Content(8e6, 1e9, 5.0)
        assert tx_latency(c, rate) == pytest.approx(8e6 / 312261240.9251555, rel=1e-12)


class TestEnergyCost:
    def test_single_term_case(self):
        # choose rate so that transmission energy is exactly 1 J
        chan = ChannelParams(1e7, 1000.0, 1e-11, 500.0)   # 1 W transmit power
        econ = EconomicParams(2e-9, 0.5, 1e-30, -1.0)
        c = Content(8e6, 1.0, 5.0)
        cost = energy_cost(c, 8e6, chan, econ)            # air time 1 s -> 1 J
        assert cost == pytest.approx(0.5, rel=1e-9)

    def test_linear_in_energy_price(self):
        c = Content(8e6, 1e9, 5.0)
        e1 = energy_cost(c, 1e7, CHAN, ECON)
        econ2 = EconomicParams(ECON.cache_price, ECON.energy_price * 3,
                               ECON.cache_energy_per_byte, ECON.penalty)
        assert energy_cost(c, 1e7, CHAN, econ2) == pytest.approx(3 * e1, rel=1e-12)

    def test_spreadsheet_oracle(self):
        # frozen arithmetic: beta*((p/1000)*size/rate + e0*cache)
        rate = 312261240.9251555
        c = Content(8e6, 1e9, 5.0)
        assert energy_cost(c, rate, CHAN, ECON) == pytest.approx(
            0.10064353460559305, rel=1e-12)

    def test_zero_rate_unreachable(self):
        with pytest.raises(UnreachableError):
            energy_cost(Content(8e6, 1e9, 5.0), 0.0, CHAN, ECON)

    def test_homogeneous_in_cache_term(self):
        econ = EconomicParams(2e-9, 0.1, 1e-9, -1.0)
        chan = ChannelParams(1e7, 1e-12, 1e-11, 500.0)   # negligible tx power
        c1 = Content(8.0, 1e9, 5.0)
        c2 = Content(8.0, 2e9, 5.0)
        e1 = energy_cost(c1, 1e7, chan, econ)
        e2 = energy_cost(c2, 1e7, chan, econ)
        assert e2 == pytest.approx(2 * e1, rel=1e-6)


class TestPairPayment:
    def test_two_coins_per_gigabyte(self):
        econ = EconomicParams(2e-9, 0.1, 1e-9, -1.0)
        assert pair_payment(Content(8e6, 1e9, 5.0), econ) == pytest.approx(2.0)

    def test_product_of_config_values(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            price = float(rng.uniform(1e-10, 1e-8))
            cache = float(rng.uniform(1e8, 5e9))
            econ = EconomicParams(price, 0.1, 1e-9, -1.0)
            assert pair_payment(Content(8e6, cache, 5.0), econ) == price * cache


class TestValidation:
    def test_content_invariants(self):
        with pytest.raises(ValueError):
            Content(0.0, 1e9, 5.0)
        with pytest.raises(ValueError):
            Content(8e6, -1.0, 5.0)
        with pytest.raises(ValueError):
            Content(8e6, 1e9, 0.0)

    def test_provider_needs_capacity(self):
        with pytest.raises(ValueError):
            VehicleState("p", Role.PROVIDER, (0, 0), Heading.NORTH, 10.0)

    def test_requester_needs_content(self):
        with pytest.raises(ValueError):
            VehicleState("r", Role.REQUESTER, (0, 0), Heading.NORTH, 10.0)

    def test_penalty_must_be_negative(self):
        with pytest.raises(ValueError):
            EconomicParams(2e-9, 0.1, 1e-9, 1.0)

    def test_dbm_conversion(self):
        assert dbm_to_mw(24.0) == pytest.approx(251.18864315095797, rel=1e-12)
        assert dbm_to_mw(0.0) == 1.0
