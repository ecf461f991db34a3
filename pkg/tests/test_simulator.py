import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slowssep import _kernel, exact, observables, simulator
from slowssep.model import (
    Configuration,
    DomainError,
    EventKind,
    ModelParams,
    TimeScale,
    apply_event,
    enumerate_events,
)
from slowssep.simulator import (
    SamplingSpec,
    derive_seed,
    make_rng,
    run_replicas,
    run_trajectory,
    sample_stationary,
    step,
)

P8 = ModelParams(8, 0.0, 1.0, 0.2, 0.8)


def z_ok(est, ref, se, sigmas=3.0):
    return np.all(np.abs(np.asarray(est) - np.asarray(ref)) <= sigmas * np.asarray(se))


class TestStep:
    def test_from_empty_state_only_flips(self):
        p = ModelParams(6, 0.0, 1.0, 0.3, 0.6)
        rng = make_rng(1)
        zeros = Configuration.zeros(5)
        n = 20_000
        left = 0
        holds = np.empty(n)
        for i in range(n):
            new, holds[i], _ = step(zeros, p, rng)
            assert new in (Configuration.from_string("10000"), Configuration.from_string("00001"))
            left += new[1]
        q = 0.3 / 0.9
        assert abs(left / n - q) <= 3 * math.sqrt(q * (1 - q) / n)
        assert abs(holds.mean() - 1 / 0.9) <= 3 * holds.std() / math.sqrt(n)

    def test_transition_frequencies_match_rates(self):
        p = ModelParams(7, 1.0, 2.0, 0.2, 0.7)
        start = Configuration.from_string("101100")
        events = enumerate_events(start, p)
        targets = [apply_event(start, e) for e in events]
        probs = np.array([e.rate for e in events]) / sum(e.rate for e in events)
        rng = make_rng(2)
        n = 100_000
        counts = np.zeros(len(events))
        for _ in range(n):
            new, _, _ = step(start, p, rng)
            counts[targets.index(new)] += 1
        freq = counts / n
        assert z_ok(freq, probs, np.sqrt(probs * (1 - probs) / n))

    def test_first_compiled_jump_matches_python_step(self):
        p = ModelParams(9, 0.5, 1.3, 0.25, 0.6)
        for seed in range(20):
            c = Configuration(seed * 37 % 256, 8)
            new, hold, _ = step(c, p, make_rng(seed))
            state = _kernel.new_state(c.to_array())
            _kernel.advance(*state, make_rng(seed), p.boundary_scale, p.alpha, p.beta,
                            1e300, 1)
            assert Configuration.from_array(state[0]) == new
            assert state[4][0] == pytest.approx(hold, rel=1e-15)


class TestKernelBookkeeping:
    @given(st.integers(3, 30), st.integers(0, 2 ** 30), st.integers(0, 10_000))
    @settings(max_examples=40)
    def test_discordant_set_and_conservation(self, N, bits, seed):
        p = ModelParams(N, 1.0, 1.0, 0.3, 0.8)
        c = Configuration(bits % (2 ** (N - 1)), N - 1)
        eta, bonds, pos, istate, fstate, acc = _kernel.new_state(c.to_array())
        rng = make_rng(seed)
        for _ in range(200):
            before = int(eta.sum())
            flips = istate[3]
            _kernel.advance(eta, bonds, pos, istate, fstate, acc, rng,
                            p.boundary_scale, p.alpha, p.beta, 1e300, 1)
            after = int(eta.sum())
            assert after == istate[1]
            if istate[3] == flips:
                assert after == before
            else:
                assert abs(after - before) == 1
            nd = istate[0]
            expected = {b for b in range(N - 2) if eta[b] != eta[b + 1]}
            assert set(bonds[:nd].tolist()) == expected
            assert all(pos[b] == k for k, b in enumerate(bonds[:nd]))

    def test_stop_time_is_exact(self):
        state = _kernel.new_state(np.zeros(9, dtype=np.uint8))
        reason = _kernel.advance(*state, make_rng(0), 1.0, 0.4, 0.6, 12.5, 10 ** 9)
        assert reason == _kernel.STOP_TIME
        assert state[4][0] == 12.5


class TestTrajectory:
    def test_zero_horizon(self):
        init = Configuration.from_string("1010")
        tr = run_trajectory(ModelParams(5, 1.0, 1.0, 0.2, 0.8), init, 0.0, seed=3)
        assert tr.states == [init]
        assert list(tr.sample_times) == [0.0]

    def test_overflow_is_reported(self):
        p = ModelParams(10_000, 3.0, 1.0, 0.2, 0.8)
        with pytest.raises(OverflowError):
            run_trajectory(p, Configuration.zeros(9_999), 1.0)

    def test_bad_grid(self):
        p = ModelParams(5, 1.0, 1.0, 0.2, 0.8)
        with pytest.raises(DomainError):
            run_trajectory(p, "0000", 1.0, sample_grid=[0.5, 0.2])
        with pytest.raises(DomainError):
            run_trajectory(p, "0000", 1.0, sample_grid=[2.0])
        with pytest.raises(DomainError):
            run_trajectory(p, "000", 1.0)

    def test_deterministic(self):
        p = ModelParams(12, 2.0, 1.0, 0.2, 0.8)
        a = run_trajectory(p, Configuration.zeros(11), 1.0, sample_grid=[0.5, 1.0], seed=11)
        b = run_trajectory(p, Configuration.zeros(11), 1.0, sample_grid=[0.5, 1.0], seed=11)
        assert a.states == b.states
        assert np.array_equal(a.boundary_integral, b.boundary_integral)
        assert np.array_equal(a.events, b.events)
        c = run_trajectory(p, Configuration.zeros(11), 1.0, sample_grid=[0.5, 1.0], seed=12)
        assert c.states != a.states or not np.array_equal(c.events, a.events)

    def test_symmetric_reservoirs_keep_half_density(self):
        p = ModelParams(20, 1.0, 1.0, 0.5, 0.5)
        rng = np.random.default_rng(5)
        means = []
        for r in range(40):
            init = Configuration.from_array(rng.integers(0, 2, 19))
            tr = run_trajectory(p, init, 1.0, TimeScale.BOUNDARY,
                                np.linspace(0.05, 1.0, 20), seed=derive_seed(5, r))
            means.append(tr.masses.mean())
        means = np.array(means)
        assert abs(means.mean() - 0.5) <= 3 * means.std(ddof=1) / math.sqrt(len(means))

    def test_event_count_order(self):
        p = ModelParams(16, 2.0, 1.0, 0.2, 0.8)
        tr = run_trajectory(p, Configuration.zeros(15), 1.0, seed=4)
        ratio = tr.events[-1] / 16 ** 4
        assert 0.05 < ratio < 1.0

    def test_csv_export(self, tmp_path):
        p = ModelParams(6, 1.0, 1.0, 0.2, 0.8)
        tr = run_trajectory(p, "00000", 1.0, sample_grid=[0.5, 1.0], seed=1)
        tr.to_csv(tmp_path / "t.csv")
        rows = list(csv.reader(open(tmp_path / "t.csv")))
        assert rows[0] == ["macroscopic_time", "mass", "eta_string"]
        assert len(rows) == 4 and rows[1][2] == "00000"


class TestStationary:
    def test_bernoulli_invariance(self):
        p = ModelParams(10, 1.0, 1.0, 0.3, 0.3)
        ens = sample_stationary(p, n_samples=4000, seed=8, with_pairs=True)
        prof = observables.estimate_profile(ens)
        assert z_ok(prof.mean, 0.3, prof.se)
        table = observables.estimate_two_point(ens)
        assert z_ok(table.offdiag(), 0.0, table.se[np.triu_indices(9, 1)])

    def test_matches_enumeration(self):
        ens = sample_stationary(P8, n_samples=8000, seed=21, with_pairs=True)
        prof = observables.estimate_profile(ens)
        assert z_ok(prof.mean, exact.exact_mean_profile(P8).mean, prof.se)
        phi = observables.estimate_two_point(ens)
        iu = np.triu_indices(7, 1)
        assert z_ok(phi.values[iu], exact.exact_two_point(P8).values[iu], phi.se[iu])

    def test_merge_equals_pooled(self):
        a = sample_stationary(P8, n_samples=500, seed=1, with_pairs=True)
        b = sample_stationary(P8, n_samples=700, seed=2, with_pairs=True)
        ab, ba = a.merge(b), b.merge(a)
        assert ab.n_samples == 1200
        assert np.array_equal(ab.site_sums, a.site_sums + b.site_sums)
        assert np.array_equal(ab.pair_sums, a.pair_sums + b.pair_sums)
        for field_ in ("batch_counts", "batch_site_sums", "batch_pair_sums", "batch_mass"):
            assert np.array_equal(getattr(ab, field_), getattr(ba, field_))
        assert ab.mass_sum == ba.mass_sum and ab.seeds == ba.seeds
        pa, pb = observables.estimate_profile(ab), observables.estimate_profile(ba)
        assert np.array_equal(pa.mean, pb.mean) and np.array_equal(pa.se, pb.se)
        assert np.array_equal(pa.mean, (a.site_sums + b.site_sums) / 1200)

    def test_merge_rejects_mismatch(self):
        a = sample_stationary(P8, n_samples=50, seed=1)
        with pytest.raises(ValueError):
            a.merge(sample_stationary(ModelParams(8, 1.0, 1.0, 0.2, 0.8), n_samples=50))
        with pytest.raises(ValueError):
            a.merge(sample_stationary(P8, n_samples=50, seed=2, with_pairs=True))

    def test_single_replica_is_derived_sampler(self):
        spec = SamplingSpec(n_samples=300)
        one = run_replicas(P8, spec, 1, base_seed=77)
        direct = sample_stationary(P8, n_samples=300, seed=derive_seed(77, 0))
        assert np.array_equal(one.site_sums, direct.site_sums)
        assert one.seeds == direct.seeds

    def test_replicas_independent_of_workers(self):
        spec = SamplingSpec(n_samples=200, with_pairs=True)
        a = run_replicas(P8, spec, 4, base_seed=3, workers=1)
        b = run_replicas(P8, spec, 4, base_seed=3, workers=3)
        assert np.array_equal(a.pair_sums, b.pair_sums)
        assert np.array_equal(a.batch_site_sums, b.batch_site_sums)
        assert a.mass_sum == b.mass_sum

    def test_replicas_agree_with_single_long_run(self):
        many = run_replicas(P8, SamplingSpec(n_samples=1000), 8, base_seed=9)
        one = sample_stationary(P8, n_samples=8000, seed=10)
        pm, po = observables.estimate_profile(many), observables.estimate_profile(one)
        assert z_ok(pm.mean, po.mean, np.hypot(pm.se, po.se))

    def test_state_frequencies_converge(self):
        p = ModelParams(4, 0.0, 1.0, 0.2, 0.8)
        pi = exact.stationary_distribution(p).weights
        tr = run_trajectory(p, "000", 20_000.0, TimeScale.RAW,
                            np.arange(1.0, 20_001.0), seed=6)
        codes = np.array([s.bits for s in tr.states[101:]])
        tv = {}
        for budget in (2_000, 19_900):
            freq = np.bincount(codes[:budget], minlength=8) / budget
            tv[budget] = 0.5 * np.abs(freq - pi).sum()
        assert tv[19_900] < tv[2_000]
        onehot = (codes[:, None] == np.arange(8)[None, :]).astype(float)
        se = np.array([observables.batch_se_1d(onehot[:, k]) for k in range(8)])
        assert z_ok(onehot.mean(axis=0), pi, se)

    def test_json_export(self, tmp_path):
        ens = sample_stationary(P8, n_samples=100, seed=1, with_pairs=True)
        ens.to_json(tmp_path / "e.json")
        data = json.loads((tmp_path / "e.json").read_text())
        assert {"params", "n_samples", "site_means", "standard_errors",
                "pair_second_moments", "seeds"} <= set(data)
        assert data["n_samples"] == 100 and len(data["site_means"]) == 7

    def test_argument_checks(self):
        with pytest.raises(DomainError):
            sample_stationary(P8, burn_in=0.0)
        with pytest.raises(DomainError):
            sample_stationary(P8, n_samples=0)
        with pytest.raises(DomainError):
            sample_stationary(P8, thinning=0)

    def test_deterministic(self):
        a = sample_stationary(P8, n_samples=300, seed=5, with_pairs=True)
        b = sample_stationary(P8, n_samples=300, seed=5, with_pairs=True)
        assert np.array_equal(a.pair_sums, b.pair_sums)
        assert np.array_equal(a.batch_mass, b.batch_mass)


@given(st.integers(0, 2 ** 63 - 1), st.integers(0, 10 ** 6), st.integers(0, 10 ** 6))
def test_derived_seeds_are_distinct_and_stable(base, i, j):
    assert derive_seed(base, i) == derive_seed(base, i)
    if i != j:
        assert derive_seed(base, i) != derive_seed(base, j)
    assert 0 <= derive_seed(base, i) < 2 ** 63
