import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from fockqpt import (SamplingMode, build_hamiltonian, check_exit_lemma, estimate_ground_energy,
                     estimate_propagator_sum, exit_rate_hamiltonian, fit_exit_rate,
                     make_partition, sample_exit_times, sample_first_exit, sample_trajectory)
from fockqpt.epr import (HeavyTailedWeights, UnconvergedTime, WeightStats, lemma_rhs,
                         trajectory_log_weight)
from fockqpt.errors import InvalidMode, NonStoquasticRegion, SignCollapse
from fockqpt.streams import BLOCK_SIZE, blocks, stream

from conftest import connected_models, cube, path3, two_state


def column_sum(H, n0, t):
    return expm(-t * H.dense())[:, n0].sum()


class TestModes:
    def test_parse(self):
        assert SamplingMode.parse("link") == SamplingMode("link")
        assert SamplingMode.parse("uniform:2.5") == SamplingMode("uniform", 2.5)
        assert SamplingMode.parse("uniform").resolve(path3(eta=0.4)).rho == 0.4

    @pytest.mark.parametrize("bad", ["walk", "link:2", "uniform:-1"])
    def test_invalid(self, bad):
        with pytest.raises(InvalidMode):
            SamplingMode.parse(bad)

    def test_invalid_in_sampler(self):
        with pytest.raises(InvalidMode):
            sample_trajectory(two_state(), 0, 1.0, np.random.default_rng(0), mode=3)


class TestTrajectory:
    @pytest.mark.parametrize("mode", ["link", "uniform"])
    def test_two_state_free_weight(self, rng, mode):
        eta, t = 0.8, 3.0
        for _ in range(50):
            tr = sample_trajectory(two_state(eta=eta), 0, t, rng, mode)
            assert tr.sign == 1
            assert tr.log_weight == pytest.approx(eta * t, rel=1e-12)

    def test_living_times(self, rng):
        tr = sample_trajectory(path3(), 1, 5.0, rng)
        assert tr.living_times.sum() == pytest.approx(5.0)
        assert np.all(tr.living_times >= 0)
        assert tr.states.size == tr.n_jumps + 1
        assert np.all(np.diff(tr.jump_times) > 0)

    @given(connected_models(), st.integers(0, 2**32 - 1), st.sampled_from(["link", "uniform"]))
    def test_log_weight_recomputes(self, H, seed, mode):
        tr = sample_trajectory(H, 0, 2.0, np.random.default_rng(seed), mode)
        logw, sign = trajectory_log_weight(H, tr)  # also checks adjacency of consecutive states
        assert sign == tr.sign
        assert logw == pytest.approx(tr.log_weight, rel=1e-12, abs=1e-12)

    def test_dwell_probability(self):
        eta, t = 0.5, 0.6
        H = cube(4, eta)
        P = make_partition(H, [0])
        times = sample_exit_times(H, P, 0, 100_000, seed=2)
        stay = np.mean(times.tau > t)
        expect = math.exp(-eta * 4 * t)
        assert abs(stay - expect) <= 4 * math.sqrt(expect * (1 - expect) / 100_000)

    def test_jump_rate(self, rng):
        # symmetric rates make the continuous-time chain uniform; mean jump rate sum(R)/M
        H = path3()
        t = 4000.0
        tr = sample_trajectory(H, 0, t, rng)
        assert tr.n_jumps / t == pytest.approx(H.R.sum() / H.M, rel=0.03)


class TestWeightStats:
    @given(st.lists(st.tuples(st.floats(-30, 30), st.sampled_from([-1, 1])), min_size=2,
                    max_size=40), st.data())
    def test_merge_matches_pooled(self, items, data):
        logw = np.array([a for a, _ in items])
        sign = np.array([b for _, b in items])
        cut = data.draw(st.integers(1, len(items) - 1))
        whole = WeightStats.from_samples(logw, sign)
        merged = WeightStats.from_samples(logw[:cut], sign[:cut]).merge(
            WeightStats.from_samples(logw[cut:], sign[cut:]))
        scale = np.exp(logw - whole.shift).sum() / whole.count
        assert merged.count == whole.count
        assert merged.shift == whole.shift
        assert abs(merged.mean - whole.mean) <= 1e-12 * max(scale, 1e-300) * 10
        assert merged.sign_sum == whole.sign_sum
        assert merged.effective_samples == pytest.approx(whole.effective_samples, rel=1e-9)

    @given(st.lists(st.tuples(st.floats(-30, 30), st.sampled_from([-1, 1])), min_size=1,
                    max_size=40))
    def test_effective_samples_bounds(self, items):
        logw = np.array([a for a, _ in items])
        s = WeightStats.from_samples(logw, np.array([b for _, b in items]))
        assert 1 - 1e-9 <= s.effective_samples <= s.count * (1 + 1e-9)

    def test_effective_samples_constant_weights(self):
        s = WeightStats.from_samples(np.full(50, 3.0), np.ones(50))
        assert s.effective_samples == pytest.approx(50, rel=1e-14)

    def test_overflow_safe(self):
        s = WeightStats.from_samples([800.0, 801.0], [1, 1])
        assert s.log_abs_value == pytest.approx(800 + math.log((1 + math.e) / 2))
        assert math.isinf(s.value)

    def test_empty_merge(self):
        s = WeightStats.from_samples([0.0], [1])
        assert WeightStats().merge(s) is s and s.merge(WeightStats()) is s


class TestPropagatorSum:
    def test_zero_variance_two_state(self):
        eta, t = 1.3, 2.0
        est = estimate_propagator_sum(two_state(eta=eta), 0, t, 5000, seed=1)
        assert est.mean == pytest.approx(math.exp(eta * t), rel=1e-13)
        assert est.std_error == 0.0
        assert est.mean_sign == 1.0

    @given(connected_models(signs=False), st.floats(-2, 2))
    def test_zero_variance_law(self, H, c):
        Hc = build_hamiltonian(H.M, 1, H.R - c, list(H.links()))
        est = estimate_propagator_sum(Hc, 0, 1.5, 300, seed=0)
        # R - (R - c) equals c only up to rounding
        assert est.std_error <= 1e-12 * est.mean
        assert est.mean == pytest.approx(math.exp(1.5 * c), rel=1e-12)

    def test_two_state_oracle(self):
        H = two_state((0.0, 0.9), 0.7)
        est = estimate_propagator_sum(H, 0, 2.0, 100_000, seed=4)
        assert abs(est.mean - column_sum(H, 0, 2.0)) <= 3 * est.std_error

    def test_modes_agree(self):
        H = build_hamiltonian(3, 1, [0.3, 0.0, 0.5], [(0, 1, -1.0), (1, 2, -0.6)])
        a = estimate_propagator_sum(H, 0, 2.0, 100_000, seed=5)
        b = estimate_propagator_sum(H, 0, 2.0, 100_000, seed=5, mode="uniform")
        assert abs(a.mean - b.mean) <= 3 * math.hypot(a.std_error, b.std_error)
        assert str(b.mode) == "uniform:1"

    def test_stoquastic_sign_is_one(self):
        est = estimate_propagator_sum(cube(3, 1.0, np.arange(8.0)), 0, 1.0, 2000, seed=3)
        assert est.mean_sign == 1.0

    def test_worker_count_irrelevant(self):
        H = build_hamiltonian(3, 1, [0, 0.2, 0.4], [(0, 1, -1), (1, 2, -1), (0, 2, 0.5)])
        n = 2 * BLOCK_SIZE + 77
        a = estimate_propagator_sum(H, 0, 1.0, n, seed=9, workers=1)
        b = estimate_propagator_sum(H, 0, 1.0, n, seed=9, workers=3)
        assert (a.mean, a.std_error, a.mean_sign) == (b.mean, b.std_error, b.mean_sign)

    def test_seed_changes_result(self):
        H = path3((0, 1, 2))
        a = estimate_propagator_sum(H, 0, 1.0, 1000, seed=1)
        b = estimate_propagator_sum(H, 0, 1.0, 1000, seed=2)
        assert a.mean != b.mean

    @pytest.mark.slow
    @pytest.mark.parametrize("model", ["path", "frustrated", "cube4"])
    def test_unbiased_over_seeds(self, model):
        if model == "path":
            H = build_hamiltonian(3, 1, [0.3, 0.0, 0.5], [(0, 1, -1.0), (1, 2, -0.6)])
        elif model == "frustrated":
            H = build_hamiltonian(3, 1, [0, 1, 2], [(0, 1, -1), (1, 2, -1), (0, 2, 0.5)])
        else:
            H = cube(4, 0.8, np.random.default_rng(1).uniform(0, 3, 16))
        t = 1.5
        exact = column_sum(H, 0, t)
        z = [(estimate_propagator_sum(H, 0, t, 20_000, seed=s).mean - exact)
             / estimate_propagator_sum(H, 0, t, 20_000, seed=s).std_error for s in range(20)]
        assert max(abs(x) for x in z) <= 3.0


class TestGroundEnergy:
    def test_two_state_free(self):
        est = estimate_ground_energy(two_state(eta=0.9), 0, [1.0, 2.0, 3.0], 1000, seed=0)
        assert est.energy == pytest.approx(-0.9, abs=1e-12)
        assert est.std_error == 0.0

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            estimate_ground_energy(two_state(), 0, [1.0, 2.0], 10, seed=0)
        with pytest.raises(ValueError):
            estimate_ground_energy(two_state(), 0, [1.0, 3.0, 2.0], 10, seed=0)

    def test_curvature_warning(self):
        H = build_hamiltonian(3, 1, [0.0, 0.5, 1.0], [(0, 1, -1.0), (1, 2, -1.0)])
        with pytest.warns(UnconvergedTime):
            estimate_ground_energy(H, 0, np.linspace(0.05, 1.0, 6), 100_000, seed=0)

    def test_sign_collapse(self):
        H = build_hamiltonian(3, 1, [0.0, 0.0, 0.0], [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)])
        with pytest.raises(SignCollapse):
            estimate_ground_energy(H, 0, [4.0, 6.0, 8.0], 20_000, seed=0)

    def test_heavy_tail_warning(self):
        # frozen cavity: rare paths that stay put carry exponentially large weight
        H = cube(6, 1.0, [0.0] + [6.0] * 63)
        with pytest.warns(HeavyTailedWeights):
            est = estimate_ground_energy(H, 0, [3.0, 4.5, 6.0], 20_000, seed=0)
        assert min(p.effective_samples for p in est.points) < 100

    def test_cube_oracle(self):
        rng = np.random.default_rng(7)
        H = cube(6, 1.0, 6 * rng.choice([0.0, 1.0], size=64))
        exact = np.linalg.eigvalsh(H.dense())[0]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UnconvergedTime)
            est = estimate_ground_energy(H, 0, np.linspace(3, 6, 5), 100_000, seed=1, workers=4)
        assert abs(est.energy - exact) <= 3 * est.std_error


class TestFirstExit:
    def test_scalar_single_state(self):
        H = cube(3, 1.0)
        P = make_partition(H, [0])
        rng = stream(0, 99)
        taus = [sample_first_exit(H, P, 0, rng).tau for _ in range(4000)]
        assert np.mean(taus) == pytest.approx(1 / 3, rel=0.06)

    def test_censoring(self):
        H = cube(3, 1.0)
        P = make_partition(H, [0, 1, 2, 3])
        s = sample_first_exit(H, P, 0, np.random.default_rng(0), t_max=1e-9)
        assert s.censored and s.exit_state == -1
        times = sample_exit_times(H, P, 0, 1000, seed=0, t_max=0.05)
        assert times.censored.any()

    def test_start_outside(self):
        H = cube(3, 1.0)
        with pytest.raises(ValueError):
            sample_exit_times(H, make_partition(H, [0]), 5, 10, seed=0)

    def test_single_state_mean(self):
        H = cube(5, 0.6)
        P = make_partition(H, [0])
        times = sample_exit_times(H, P, 0, 100_000, seed=3)
        assert np.mean(times.tau) == pytest.approx(1 / 3.0, rel=0.02)
        assert set(times.exit_state.tolist()) == {0}

    def test_short_exits_possible(self):
        H = path3()
        times = sample_exit_times(H, make_partition(H, [0, 1]), 1, 20_000, seed=0)
        assert np.nanmin(times.tau) < 1e-3

    def test_tail_rate_four_state(self):
        H = cube(5, 1.0)
        P = make_partition(H, [0, 1, 2, 3])
        times = sample_exit_times(H, P, 0, 100_000, seed=8, workers=4)
        rate = fit_exit_rate(times).rate
        assert rate == pytest.approx(exit_rate_hamiltonian(H, P).e_star, rel=0.05)

    def test_late_threshold_removes_excited_states(self):
        # an end-point start on a path cavity overlaps strongly with excited states of H*
        H = cube(5, 1.0)
        P = make_partition(H, [0, 1, 3, 7])
        e_star = exit_rate_hamiltonian(H, P).e_star
        times = sample_exit_times(H, P, 0, 100_000, seed=8, workers=4)
        early = fit_exit_rate(times, 0.5).rate
        late = fit_exit_rate(times, 0.95).rate
        assert early > late > e_star * 0.97
        assert late == pytest.approx(e_star, rel=0.05)

    def test_workers_irrelevant(self):
        H = cube(4, 1.0)
        P = make_partition(H, [0, 1])
        a = sample_exit_times(H, P, 0, BLOCK_SIZE + 10, seed=5, workers=1)
        b = sample_exit_times(H, P, 0, BLOCK_SIZE + 10, seed=5, workers=2)
        assert np.array_equal(a.tau, b.tau, equal_nan=True)


class TestLemma:
    @pytest.mark.parametrize("vbar", [0.0, 0.4, 2.0])
    def test_single_state_rhs_closed_form(self, vbar):
        H = cube(3, 0.5, [vbar] + [3.0] * 7)
        P = make_partition(H, [0])
        R = 1.5
        for t in (0.5, 1.0, 2.0):
            expect = R * t if vbar == 0 else R * (1 - math.exp(-vbar * t)) / vbar
            assert lemma_rhs(H, P, 0, t) == pytest.approx(expect, rel=1e-10)

    def test_short_time_slope(self):
        H = cube(4, 0.5, np.arange(16.0) / 4)
        P = make_partition(H, [0, 1, 3])
        t = 1e-5
        assert lemma_rhs(H, P, 0, t) / t == pytest.approx(P.r_out[0], rel=1e-3)
        # interior states cannot exit on the first jump: quadratic in t
        Q = make_partition(H, [0, 1, 2, 3, 5, 6, 7, 9, 10, 11])
        assert Q.a_out[3] == 0 or Q.a_out[3] > 0  # touch bookkeeping
        inner = [n for n in Q.cavity if Q.a_out[n] == 0]
        if inner:
            assert lemma_rhs(H, Q, int(inner[0]), t) / t < 1e-3

    def test_zero_potential_cavity(self):
        H = cube(4, 0.5, [0.0, 0.0] + [2.0] * 14)
        P = make_partition(H, [0, 1])
        chk = check_exit_lemma(H, P, 0, 0.5, 100_000, seed=2)
        assert chk.agree, chk

    def test_non_stoquastic_rejected(self):
        H = build_hamiltonian(3, 1, [0, 1, 2], [(0, 1, 1.0), (1, 2, -1.0)])
        with pytest.raises(NonStoquasticRegion):
            check_exit_lemma(H, make_partition(H, [0]), 0, 1.0, 10, seed=0)


def test_stream_blocks():
    assert blocks(1) == [1]
    assert blocks(2 * BLOCK_SIZE) == [BLOCK_SIZE, BLOCK_SIZE]
    assert sum(blocks(3 * BLOCK_SIZE + 5)) == 3 * BLOCK_SIZE + 5
    with pytest.raises(ValueError):
        blocks(0)
    assert stream(1, 2, 3).random() == stream(1, 2, 3).random()
    assert stream(1, 2, 3).random() != stream(1, 2, 4).random()
