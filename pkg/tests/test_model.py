import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from slowssep.model import (
    Configuration,
    DomainError,
    EventKind,
    ModelParams,
    TimeScale,
    apply_event,
    averaged_density,
    bernoulli_weight,
    boundary_rates,
    discordant_bonds,
    enumerate_events,
    exchange,
    flip,
    replacement_observable,
    total_rate,
)


def cfg(s):
    return Configuration.from_string(s)


def all_configs(n_sites):
    return [Configuration(b, n_sites) for b in range(2 ** n_sites)]


@st.composite
def configs(draw, min_sites=2, max_sites=40):
    n = draw(st.integers(min_sites, max_sites))
    bits = draw(st.integers(0, 2 ** n - 1))
    return Configuration(bits, n)


params_strategy = st.builds(
    ModelParams,
    N=st.integers(3, 40),
    theta=st.sampled_from([0.0, 0.5, 1.0, 1.5, 2.0, 3.0]),
    c=st.floats(0.05, 10.0),
    alpha=st.floats(0.01, 0.99),
    beta=st.floats(0.01, 0.99),
)


class TestParams:
    @pytest.mark.parametrize("kwargs", [
        dict(N=2, theta=0, c=1, alpha=0.2, beta=0.8),
        dict(N=5, theta=-1, c=1, alpha=0.2, beta=0.8),
        dict(N=5, theta=0, c=0, alpha=0.2, beta=0.8),
        dict(N=5, theta=0, c=1, alpha=0.0, beta=0.8),
        dict(N=5, theta=0, c=1, alpha=0.2, beta=1.0),
        dict(N=5.5, theta=0, c=1, alpha=0.2, beta=0.8),
    ])
    def test_rejects_out_of_domain(self, kwargs):
        with pytest.raises(DomainError):
            ModelParams(**kwargs)

    def test_dict_round_trip(self):
        p = ModelParams(10, 0.5, 2.0, 0.1, 0.5)
        assert ModelParams.from_dict(p.to_dict()) == p

    def test_timescale_multipliers(self):
        p = ModelParams(10, 2.0, 1.0, 0.2, 0.8)
        assert TimeScale.RAW.multiplier(p) == 1.0
        assert TimeScale.DIFFUSIVE.multiplier(p) == 100.0
        assert TimeScale.BOUNDARY.multiplier(p) == 1000.0


class TestConfiguration:
    def test_site_labels_and_strings(self):
        c = cfg("1001")
        assert [c[x] for x in range(1, 5)] == [1, 0, 0, 1]
        assert str(c) == "1001"
        assert c.particles == 2
        with pytest.raises(DomainError):
            c[0]
        with pytest.raises(DomainError):
            c[5]

    @given(configs())
    def test_array_round_trip(self, c):
        assert Configuration.from_array(c.to_array()) == c
        assert Configuration.from_string(str(c)) == c

    def test_rejects_bad_input(self):
        with pytest.raises(DomainError):
            Configuration.from_sequence([0, 2, 1])
        with pytest.raises(DomainError):
            Configuration(8, 3)
        with pytest.raises(DomainError):
            Configuration.from_string("01a")


class TestMoves:
    def test_exchange_examples(self):
        assert exchange(cfg("101"), 1) == cfg("011")
        assert exchange(cfg("110"), 1) == cfg("110")

    def test_exchange_out_of_range(self):
        with pytest.raises(DomainError):
            exchange(cfg("101"), 0)
        with pytest.raises(DomainError):
            exchange(cfg("101"), 3)

    def test_flip_examples(self):
        assert flip(cfg("000"), "left") == cfg("100")
        assert flip(cfg("001"), "right") == cfg("000")
        with pytest.raises(DomainError):
            flip(cfg("001"), "middle")

    @pytest.mark.parametrize("n_sites", [2, 3, 5, 8, 11])
    def test_involutions_exhaustive(self, n_sites):
        for c in all_configs(n_sites):
            for x in range(1, n_sites):
                assert exchange(exchange(c, x), x) == c
            for side in ("left", "right"):
                assert flip(flip(c, side), side) == c

    @given(configs(), st.data())
    def test_exchange_conserves_and_flip_changes_by_one(self, c, data):
        x = data.draw(st.integers(1, c.n_sites - 1))
        assert exchange(c, x).particles == c.particles
        for side in ("left", "right"):
            assert abs(flip(c, side).particles - c.particles) == 1


class TestRates:
    def test_boundary_rate_examples(self):
        p = ModelParams(4, 0.0, 1.0, 0.2, 0.8)
        assert boundary_rates(cfg("000"), p)[0] == pytest.approx(0.2)
        assert boundary_rates(cfg("100"), p)[0] == pytest.approx(0.8)
        p2 = ModelParams(10, 2.0, 1.0, 0.2, 0.8)
        assert boundary_rates(Configuration.zeros(9), p2)[0] == pytest.approx(0.002)

    def test_total_rate_examples(self):
        p = ModelParams(4, 0.0, 1.0, 0.2, 0.8)
        assert total_rate(cfg("101"), p) == pytest.approx(3.0)
        q = ModelParams(7, 1.0, 2.0, 0.3, 0.6)
        s = q.boundary_scale
        zeros, ones = Configuration.zeros(6), Configuration.ones(6)
        assert total_rate(zeros, q) == pytest.approx(s * 0.9)
        assert total_rate(ones, q) == pytest.approx(s * (2 - 0.9))
        assert all(e.rate == 0 or e.kind is not EventKind.EXCHANGE
                   for e in enumerate_events(zeros, q))

    def test_event_list_shape(self):
        p = ModelParams(6, 1.0, 1.0, 0.2, 0.8)
        c = cfg("10110")
        events = enumerate_events(c, p)
        assert [e.bond for e in events[:-2]] == discordant_bonds(c) == [1, 2, 4]
        assert [e.kind for e in events[-2:]] == [EventKind.FLIP_LEFT, EventKind.FLIP_RIGHT]
        assert all(e.rate == 1.0 for e in events[:-2])

    def test_rejects_mismatched_sizes(self):
        with pytest.raises(DomainError):
            enumerate_events(cfg("101"), ModelParams(6, 1.0, 1.0, 0.2, 0.8))

    @given(params_strategy, st.data())
    def test_total_rate_bound(self, p, data):
        bits = data.draw(st.integers(0, 2 ** p.n_sites - 1))
        c = Configuration(bits, p.n_sites)
        bound = (p.N - 2) + 2 * p.c * p.N ** (-p.theta)
        assert total_rate(c, p) <= bound * (1 + 1e-12)

    @pytest.mark.parametrize("N", [3, 5, 8, 10])
    def test_detailed_balance_when_reservoirs_agree(self, N):
        rho = 0.35
        p = ModelParams(N, 1.0, 1.5, rho, rho)
        for c in all_configs(N - 1):
            for e in enumerate_events(c, p):
                d = apply_event(c, e)
                back = [b for b in enumerate_events(d, p) if apply_event(d, b) == c]
                assert len(back) == 1
                lhs = bernoulli_weight(c, rho) * e.rate
                rhs = bernoulli_weight(d, rho) * back[0].rate
                assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-15)


class TestObservables:
    def test_averaged_density_examples(self):
        assert averaged_density(Configuration.zeros(6)) == 0
        assert averaged_density(Configuration.ones(6)) == 1
        assert averaged_density(cfg("1010")) == 0.5

    def test_replacement_observable_examples(self):
        assert replacement_observable(Configuration.ones(5)) == 0
        assert replacement_observable(cfg("100")) == pytest.approx(1 / 3)

    @pytest.mark.parametrize("alpha", [0.2, 0.5, 0.7])
    def test_replacement_observable_has_zero_bernoulli_mean(self, alpha):
        states = all_configs(3)
        mean = math.fsum(bernoulli_weight(c, alpha) * replacement_observable(c) for c in states)
        assert abs(mean) < 1e-15
        assert math.fsum(bernoulli_weight(c, alpha) for c in states) == pytest.approx(1.0)

    @given(configs())
    def test_replacement_observable_range(self, c):
        v = replacement_observable(c)
        assert -2 <= v <= 2
        assert np.isclose(v, c[1] + c[c.n_sites] - 2 * c.particles / c.n_sites)
